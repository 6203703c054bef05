"""Inference time grids, the pushforward and restart samplers, the sample
text format, and a closed-form network for Gaussian data used to test the
samplers without training.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import head as hd
from .netcore import data_of
from .schedules import FlowSchedule, alpha_sigma, eta_inv

UNIFORM = "uniform"
EDM = "edm"
TWO_STEP_ETA = "two_step_eta"
KINDS = (UNIFORM, EDM, TWO_STEP_ETA)

TWO_STEP_ETA_MID = 1.4


class SamplerError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SamplerSchedule:
    kind: str = UNIFORM
    n_steps: int = 2
    rho: float = 7.0
    eta_min: float | None = None  # default: eta(eps)
    eta_max: float | None = None  # default: eta(T)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SamplerError(f"unknown sampler schedule {self.kind!r}")
        if self.n_steps < 1:
            raise SamplerError("need at least one step")


def schedule_times(ss: SamplerSchedule, sched: FlowSchedule) -> np.ndarray:
    """Time grid ordered t_N, ..., t_0 (first entry is T, last is eps)."""
    T, eps = sched.t_max, sched.eps_t
    n = ss.n_steps
    frac = (n - np.arange(n, -1, -1)) / n  # (N - i) / N for i = N..0
    if ss.kind == UNIFORM:
        return T + frac * (eps - T)
    if ss.kind == EDM:
        times = np.asarray(eta_inv(sched, edm_etas(ss, sched)), dtype=np.float64)
        times[0], times[-1] = T, eps
        return times
    return np.array([T, eta_inv(sched, TWO_STEP_ETA_MID), eps])


def edm_etas(ss: SamplerSchedule, sched: FlowSchedule) -> np.ndarray:
    """The eta grid behind the EDM time schedule, eta_N..eta_0."""
    n = ss.n_steps
    frac = (n - np.arange(n, -1, -1)) / n
    hi = sched.eta_max if ss.eta_max is None else ss.eta_max
    lo = sched.eta_min if ss.eta_min is None else ss.eta_min
    inv = 1.0 / ss.rho
    return (hi**inv + frac * (lo**inv - hi**inv)) ** ss.rho


def _step(cfg, net, x, s, t, label, w, null_label, skip_uncond):
    if w == 1.0 or skip_uncond:
        y = hd.f_st(cfg, net, x, s, t, label)
    else:
        y = hd.f_st_guided(cfg, net, x, s, t, label, w, null_label)
    return np.asarray(data_of(y), dtype=np.float64)


def _prior(cfg, n, dim, rng):
    return cfg.sched.sigma_d * rng.standard_normal((n, dim))


def pushforward_sample(
    cfg: hd.HeadConfig,
    net,
    times,
    n: int,
    dim: int,
    rng: np.random.Generator,
    label=None,
    w: float = 1.0,
    null_label=None,
    force_unguided_one_step: bool = False,
    x_init=None,
):
    """Iterate x <- f_{t_{i-1}, t_i}(x) down the grid from prior noise."""
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) < 2:
        raise SamplerError("time grid needs at least two entries")
    if np.any(np.diff(times) > 0):
        raise SamplerError("pushforward grid must be nonincreasing")
    x = _prior(cfg, n, dim, rng) if x_init is None else np.array(x_init, dtype=np.float64)
    skip = force_unguided_one_step and len(times) == 2
    for t_i, t_prev in zip(times[:-1], times[1:]):
        x = _step(cfg, net, x, t_prev, t_i, label, w, null_label, skip)
    return x


def restart_sample(
    cfg: hd.HeadConfig,
    net,
    times,
    n: int,
    dim: int,
    rng: np.random.Generator,
    label=None,
    w: float = 1.0,
    null_label=None,
    force_unguided_one_step: bool = False,
    trace: list | None = None,
):
    """Jump to t_0 from every grid time, re-noising to the next time between
    jumps.  ``trace`` (if given) collects the re-noised intermediates."""
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) < 2:
        raise SamplerError("time grid needs at least two entries")
    if np.any(np.diff(times) > 0):
        raise SamplerError("restart grid must be nonincreasing")
    sched = cfg.sched
    t0 = times[-1]
    x = _prior(cfg, n, dim, rng)
    skip = force_unguided_one_step and len(times) == 2
    steps = times[:-1]
    for j, t_i in enumerate(steps):
        x_tilde = _step(cfg, net, x, t0, t_i, label, w, null_label, skip)
        if j == len(steps) - 1:
            return x_tilde
        t_next = steps[j + 1]
        a, s = alpha_sigma(sched, t_next)
        x = a * x_tilde + s * _prior(cfg, n, dim, rng)
        if trace is not None:
            trace.append(x.copy())
    raise AssertionError("unreachable")


# --- closed-form network for Gaussian data ------------------------------------


def gaussian_flow_map(sched: FlowSchedule, x_t, s, t):
    """Exact probability-flow map for data N(0, sigma_d^2 I): a rescaling by
    the ratio of marginal stds."""
    a_s, sg_s = (np.asarray(v) for v in alpha_sigma(sched, s))
    a_t, sg_t = (np.asarray(v) for v in alpha_sigma(sched, t))
    ratio = np.sqrt((a_s**2 + sg_s**2) / (a_t**2 + sg_t**2))
    x_t = np.asarray(x_t, dtype=np.float64)
    return ratio.reshape(ratio.shape + (1,) * (x_t.ndim - ratio.ndim)) * x_t


def gaussian_oracle_net(cfg: hd.HeadConfig):
    """A stand-in for G whose f_{s,t} equals the exact Gaussian flow map.

    It decodes (x_t, s, t) from its inputs, which requires second conditioning
    on s.
    """
    if cfg.second_cond != hd.COND_S:
        raise SamplerError("oracle net expects the s conditioning")
    c = cfg.c_noise_scale

    def net(x_in, noise_s, noise_t, labels=None):
        s = np.asarray(noise_s, dtype=np.float64) / c
        t = np.asarray(noise_t, dtype=np.float64) / c
        x_in = np.asarray(x_in, dtype=np.float64)
        c_skip, c_out, c_in = hd.coeffs(cfg, s, t)
        col = lambda v: np.asarray(v).reshape(np.shape(v) + (1,) * (x_in.ndim - np.ndim(v)))
        x_t = x_in / col(c_in)
        target = gaussian_flow_map(cfg.sched, x_t, s, t)
        c_out = col(c_out)
        safe = np.where(c_out == 0.0, 1.0, c_out)
        return np.where(c_out == 0.0, 0.0, (target - col(c_skip) * x_t) / safe)

    return net


# --- sample file format -------------------------------------------------------


def write_samples(path, X, labels=None):
    """Header ``# D=<dim> N=<count>`` then one point per line, optional
    trailing integer label."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SamplerError("samples must be a 2-d array")
    n, d = X.shape
    lines = [f"# D={d} N={n}"]
    for i in range(n):
        row = " ".join(repr(float(v)) for v in X[i])
        if labels is not None:
            row += f" {int(labels[i])}"
        lines.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_samples(path):
    """Return ``(X, labels or None)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "#" or not header[1].startswith("D=") or not header[2].startswith("N="):
            raise SamplerError(f"bad sample file header in {path}")
        d, n = int(header[1][2:]), int(header[2][2:])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n:
        raise SamplerError(f"expected {n} samples, found {len(rows)}")
    if n == 0:
        return np.zeros((0, d)), None
    width = {len(r) for r in rows}
    if width == {d}:
        return np.array(rows, dtype=np.float64), None
    if width == {d + 1}:
        arr = np.array(rows, dtype=object)
        return arr[:, :d].astype(np.float64), arr[:, d].astype(np.int64)
    raise SamplerError("inconsistent sample row widths")
