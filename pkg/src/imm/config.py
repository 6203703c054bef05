"""INI run configuration: one section per component plus [run].

Values are written so that parse -> serialize -> parse is the identity
(floats via ``repr``).  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os

from . import head as hd
from .data import GAUSS_RING8, ToyDataset
from .kernels import LAPLACE, KernelSpec
from .netcore import SILU, Mlp
from .sampling import UNIFORM, SamplerSchedule
from .schedules import OTFM, FlowSchedule
from .training import ETA_DECREMENT, MappingFn, WeightConfig

OUT_DIR_ENV = "IMM_OUT_DIR"


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ScheduleSection:
    kind: str = OTFM
    sigma_d: float = 0.5
    eps_t: float = 0.0
    t_max: float | None = None


@dataclasses.dataclass(frozen=True)
class HeadSection:
    kind: str = hd.EULER_FM
    c_noise_scale: float = 1000.0
    second_cond: str = hd.COND_S


@dataclasses.dataclass(frozen=True)
class KernelSection:
    kind: str = LAPLACE
    c: float = 1.0
    bandwidth: float = 1.0
    dist_floor: float = 1e-8
    time_weighted: bool = True


@dataclasses.dataclass(frozen=True)
class MappingSection:
    kind: str = ETA_DECREMENT
    k: int = 12
    eta_max: float | None = None
    eta_min: float | None = None
    min_gap: float = 0.0


@dataclasses.dataclass(frozen=True)
class TrainSection:
    batch_size: int = 256
    particles: int = 4
    p_drop: float = 0.1
    a: int = 1
    b: float = 4.0
    steps: int = 20000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_rate: float = 0.9999
    hidden: tuple = (256, 256, 256)
    time_embed_dim: int = 64
    activation: str = SILU
    dtype: str = "float32"
    eval_every: int = 0
    eval_n: int = 1000
    ckpt_every: int = 0


@dataclasses.dataclass(frozen=True)
class SamplerSection:
    kind: str = UNIFORM
    steps: int = 2
    rho: float = 7.0
    method: str = "push"
    w: float = 1.0
    use_ema: bool = False


@dataclasses.dataclass(frozen=True)
class DataSection:
    name: str = GAUSS_RING8
    conditional: bool = False


@dataclasses.dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"


SECTIONS = {
    "schedule": ScheduleSection,
    "head": HeadSection,
    "kernel": KernelSection,
    "mapping": MappingSection,
    "train": TrainSection,
    "sampler": SamplerSection,
    "data": DataSection,
    "run": RunSection,
}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(int(x)) for x in v)
    return str(v)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {where}") from exc


@dataclasses.dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleSection = ScheduleSection()
    head: HeadSection = HeadSection()
    kernel: KernelSection = KernelSection()
    mapping: MappingSection = MappingSection()
    train: TrainSection = TrainSection()
    sampler: SamplerSection = SamplerSection()
    data: DataSection = DataSection()
    run: RunSection = RunSection()

    # --- text round trip ------------------------------------------------

    def to_ini(self) -> str:
        out = io.StringIO()
        for name in SECTIONS:
            sec = getattr(self, name)
            out.write(f"[{name}]\n")
            for f in dataclasses.fields(sec):
                out.write(f"{f.name} = {_fmt(getattr(sec, f.name))}\n")
            out.write("\n")
        return out.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        parts = {}
        for name in cp.sections():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            klass = SECTIONS[name]
            known = {f.name: f.default for f in dataclasses.fields(klass)}
            vals = {}
            for key, raw in cp.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                vals[key] = _parse(raw, known[key], f"{name}.{key}")
            parts[name] = klass(**vals)
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read())

    def replace(self, **sections) -> "RunConfig":
        """Copy with some fields changed: ``replace(train={"steps": 5})``."""
        new = {k: dataclasses.replace(getattr(self, k), **v) for k, v in sections.items()}
        return dataclasses.replace(self, **new)

    # --- domain objects -------------------------------------------------

    def flow_schedule(self) -> FlowSchedule:
        s = self.schedule
        return FlowSchedule(kind=s.kind, sigma_d=s.sigma_d, eps_t=s.eps_t, t_max=s.t_max)

    def head_config(self) -> hd.HeadConfig:
        h = self.head
        return hd.HeadConfig(h.kind, self.flow_schedule(), h.c_noise_scale, h.second_cond)

    def kernel_spec(self) -> KernelSpec:
        k = self.kernel
        return KernelSpec(k.kind, k.c, k.bandwidth, k.dist_floor, k.time_weighted)

    def mapping_fn(self) -> MappingFn:
        m = self.mapping
        return MappingFn(m.kind, m.k, m.eta_max, m.eta_min, m.min_gap)

    def weight_config(self) -> WeightConfig:
        return WeightConfig(self.train.a, self.train.b)

    def dataset(self) -> ToyDataset:
        return ToyDataset(self.data.name, self.schedule.sigma_d)

    def mlp(self) -> Mlp:
        t = self.train
        n_classes = self.dataset().n_classes if self.data.conditional else 0
        return Mlp(2, tuple(t.hidden), 2, t.activation, t.time_embed_dim, n_classes, t.dtype)

    def sampler_schedule(self, steps: int | None = None) -> SamplerSchedule:
        s = self.sampler
        return SamplerSchedule(s.kind, s.steps if steps is None else steps, s.rho)

    def out_dir(self) -> str:
        return os.environ.get(OUT_DIR_ENV) or self.run.out_dir

    def validate(self):
        """Build every component once so bad values fail at load time."""
        try:
            self.head_config()
            self.kernel_spec()
            self.mapping_fn()
            self.weight_config()
            self.dataset()
            self.sampler_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        t = self.train
        if t.batch_size < 1 or t.particles < 1 or t.batch_size % t.particles:
            raise ConfigError("batch_size must be a positive multiple of particles")
        if t.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if not 0.0 <= t.p_drop <= 1.0:
            raise ConfigError("p_drop must lie in [0, 1]")
        if t.activation not in ("silu", "relu"):
            raise ConfigError("activation must be silu or relu")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.sampler.method not in ("push", "restart"):
            raise ConfigError("sampler method must be push or restart")
