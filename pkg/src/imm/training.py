"""Mapping functions, time sampling, loss weighting and the grouped
moment-matching loss, plus the training loop and two verification losses
(the differential limit and its finite-difference quotient).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import expit

from . import head as hd
from .checkpoint import Checkpoint
from .data import ToyDataset, sample_dataset
from .evaluation import sliced_w1, two_sample_mmd
from .interpolants import forward_marginal, reuse_xr
from .kernels import RBF, KernelSpec, mmd_vstat
from .netcore import EmaState, Mlp, NetError, OptState, Tensor, adam_step, data_of, ema_update
from .sampling import pushforward_sample, restart_sample, schedule_times
from .schedules import (
    OTFM,
    FlowSchedule,
    alpha_sigma,
    eta,
    eta_inv,
    log_snr,
    log_snr_inv,
)

ETA_DECREMENT = "eta_decrement"
T_DECREMENT = "t_decrement"
LAMBDA_DECREMENT = "lambda_decrement"
INV_ETA_INCREMENT = "inv_eta_increment"
MAPPING_KINDS = (ETA_DECREMENT, T_DECREMENT, LAMBDA_DECREMENT, INV_ETA_INCREMENT)


class TrainingError(ValueError):
    pass


# --- mapping function r(s, t) ----------------------------------------------


@dataclasses.dataclass(frozen=True)
class MappingFn:
    kind: str = ETA_DECREMENT
    k: int = 12
    eta_max: float | None = None  # defaults to eta(T)
    eta_min: float | None = None  # defaults to eta(eps)
    min_gap: float = 0.0

    def __post_init__(self):
        if self.kind not in MAPPING_KINDS:
            raise TrainingError(f"unknown mapping kind {self.kind!r}")
        if self.min_gap < 0:
            raise TrainingError("min_gap must be nonnegative")


def check_mapping_support(mp: MappingFn, sched: FlowSchedule):
    """Reject (eps, T) combinations where the mapping degenerates."""
    if mp.kind in (ETA_DECREMENT, LAMBDA_DECREMENT) and not sched.t_max < 1.0:
        raise TrainingError(f"{mp.kind} needs T < 1")
    if mp.kind in (LAMBDA_DECREMENT, INV_ETA_INCREMENT) and not sched.eps_t > 0.0:
        raise TrainingError(f"{mp.kind} needs eps > 0")


def mapping_decrement(mp: MappingFn, sched: FlowSchedule) -> float:
    """The constant step in the mapping's native coordinate."""
    scale = 2.0**mp.k
    if mp.kind == ETA_DECREMENT:
        hi = sched.eta_max if mp.eta_max is None else mp.eta_max
        lo = sched.eta_min if mp.eta_min is None else mp.eta_min
        return (hi - lo) / scale
    if mp.kind == T_DECREMENT:
        return (sched.t_max - sched.eps_t) / scale
    if mp.kind == LAMBDA_DECREMENT:
        return (log_snr(sched, sched.eps_t) - log_snr(sched, sched.t_max)) / scale
    lo = sched.eta_min if mp.eta_min is None else mp.eta_min
    hi_inv = 0.0 if sched.t_max == 1.0 and mp.eta_max is None else 1.0 / (
        sched.eta_max if mp.eta_max is None else mp.eta_max
    )
    return (1.0 / lo - hi_inv) / scale


def _inv_eta(sched, t):
    a, s = alpha_sigma(sched, t)
    return np.asarray(a) / np.asarray(s)


def r_map(mp: MappingFn, sched: FlowSchedule, s, t):
    """Bootstrap time r(s, t) with s <= r <= t."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t > sched.t_max + 1e-15) or np.any(t < sched.eps_t - 1e-15):
        raise TrainingError("t outside [eps, T] for this mapping")
    check_mapping_support(mp, sched)
    delta = mapping_decrement(mp, sched)
    if mp.kind == ETA_DECREMENT:
        r = eta_inv(sched, np.maximum(eta(sched, t) - delta, 0.0))
    elif mp.kind == T_DECREMENT:
        r = t - delta
    elif mp.kind == LAMBDA_DECREMENT:
        # log-SNR falls with t, so stepping back in time raises it
        r = log_snr_inv(sched, log_snr(sched, np.maximum(t, sched.eps_t)) + delta)
    else:
        r = eta_inv(sched, 1.0 / (_inv_eta(sched, t) + delta))
    r = np.asarray(r, dtype=np.float64)
    if mp.min_gap > 0:
        r = np.minimum(r, t - mp.min_gap)
    r = np.minimum(np.maximum(s, r), t)
    return float(r) if r.ndim == 0 else r


# --- time distribution and weighting ----------------------------------------


def sample_times(sched: FlowSchedule, n: int, rng: np.random.Generator):
    """t ~ U(eps, T), s ~ U(eps, t)."""
    lo, hi = sched.eps_t, sched.t_max
    t = lo + (hi - lo) * rng.random(n)
    s = lo + (t - lo) * rng.random(n)
    return s, t


@dataclasses.dataclass(frozen=True)
class WeightConfig:
    a: int = 1
    b: float = 4.0

    def __post_init__(self):
        if self.a not in (1, 2):
            raise TrainingError("weight exponent a must be 1 or 2")


def weight(wcfg: WeightConfig, sched: FlowSchedule, s, t):
    """(1/2) sigmoid(b - lambda_t) (-dlambda/dt) alpha_t^a / (alpha_t^2 + sigma_t^2).

    Evaluated as (1/2) sigmoid(b - lambda) kappa alpha^(a-1) / (sigma v) using
    -dlambda/dt = kappa / (alpha sigma), which stays finite at t = 1 and tends
    to 0 at t = 0.
    """
    del s  # the weight does not depend on s
    t = np.asarray(t, dtype=np.float64)
    a_t, sig_t = (np.asarray(v, dtype=np.float64) for v in alpha_sigma(sched, t))
    kappa = 2.0 if sched.kind == OTFM else math.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        logit = wcfg.b - 2.0 * (np.log(a_t) - np.log(sig_t))
        sig = expit(logit)
        out = 0.5 * sig * kappa * a_t ** (wcfg.a - 1) / (sig_t * (a_t**2 + sig_t**2))
    out = np.where(t == 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


# --- the moment-matching loss ------------------------------------------------


@dataclasses.dataclass
class GroupBatch:
    """B/M groups of M particles, one (s, r, t) per group."""

    x: np.ndarray  # (G, M, D)
    eps: np.ndarray  # (G, M, D)
    labels: np.ndarray | None  # (G, M) or None for the null token
    s: np.ndarray  # (G,)
    r: np.ndarray  # (G,)
    t: np.ndarray  # (G,)

    @property
    def n_groups(self) -> int:
        return self.x.shape[0]


@dataclasses.dataclass
class LossInfo:
    loss: float
    w_mean: float
    skipped: int
    group_losses: np.ndarray


def branch_outputs(cfg: hd.HeadConfig, net, x_start, s, t, labels):
    """f_{s,t} applied per group; inputs (G, M, D), times (G,)."""
    G, M, D = x_start.shape
    flat = x_start.reshape(G * M, D)
    s_rows = np.repeat(np.asarray(s, dtype=np.float64), M)
    t_rows = np.repeat(np.asarray(t, dtype=np.float64), M)
    lab = None if labels is None else np.asarray(labels).reshape(G * M)
    y = hd.f_st(cfg, net, flat, s_rows, t_rows, lab)
    return y.reshape(G, M, D) if isinstance(y, Tensor) else np.asarray(y).reshape(G, M, D)


def imm_loss(
    cfg: hd.HeadConfig,
    kspec: KernelSpec,
    wcfg: WeightConfig,
    net,
    target_net,
    batch: GroupBatch,
    weight_scale: float = 1.0,
):
    """Grouped V-statistic loss averaged over groups.

    ``net`` is the online branch (may return Tensors carrying gradient);
    ``target_net`` is evaluated as plain arrays, so no gradient reaches it.
    Returns ``(loss, LossInfo)``; ``loss`` is a Tensor when ``net`` is tracked.
    """
    sched = cfg.sched
    x_t = forward_marginal(sched, batch.x, batch.eps, batch.t[:, None])
    x_r = reuse_xr(sched, x_t, batch.x, batch.r[:, None], batch.t[:, None])
    G = batch.n_groups
    _, c_out, _ = hd.coeffs(cfg, batch.s, batch.t)
    active = np.abs(c_out) > 0.0 if kspec.time_weighted else np.ones(G, dtype=bool)
    skipped = int(G - active.sum())
    w = weight(wcfg, sched, batch.s, batch.t) * weight_scale
    if not active.any():
        return Tensor(0.0), LossInfo(0.0, float(np.mean(w)), skipped, np.zeros(G))
    idx = np.flatnonzero(active)
    labels = _sel(batch.labels, idx)
    y_t = branch_outputs(cfg, net, x_t[idx], batch.s[idx], batch.t[idx], labels)
    y_r = branch_outputs(cfg, _plain(target_net), x_r[idx], batch.s[idx], batch.r[idx], labels)
    with np.errstate(divide="ignore"):
        wt = 1.0 / np.abs(c_out[idx])
    per_group = mmd_vstat(kspec, y_t, np.asarray(data_of(y_r), dtype=np.float64), wt, wt)
    weighted = per_group * w[idx]
    loss = weighted.sum() * (1.0 / G)
    vals = np.zeros(G)
    vals[idx] = data_of(weighted)
    return loss, LossInfo(float(data_of(loss)), float(np.mean(w)), skipped, vals)


def _sel(labels, idx):
    return None if labels is None else np.asarray(labels)[idx]


def _plain(net):
    def wrapped(*args, **kw):
        return data_of(net(*args, **kw))

    return wrapped


def tracked_params(params: dict) -> dict:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def loss_and_grad(cfg, kspec, wcfg, mlp: Mlp, params: dict, batch: GroupBatch, target_params=None):
    """Loss value, gradient dict and LossInfo.  The target branch uses
    ``target_params`` (default: the same values, detached)."""
    P = tracked_params(params)
    tgt = params if target_params is None else target_params
    tgt_plain = {k: data_of(v) for k, v in tgt.items()}
    loss, info = imm_loss(cfg, kspec, wcfg, mlp.bind(P), mlp.bind(tgt_plain), batch)
    if isinstance(loss, Tensor) and loss.requires_grad:
        loss.backward()
    grads = {k: (np.zeros_like(params[k]) if T.grad is None else T.grad.astype(params[k].dtype)) for k, T in P.items()}
    return info.loss, grads, info


# --- differential limit checks -------------------------------------------------


DIFF_KERNEL = KernelSpec(kind=RBF, bandwidth=1.0, time_weighted=False, dim_normalize=False)
MAX_FD_STEP = 1e-2


def _f_plain(cfg, net, x_t, s, t, labels):
    return np.asarray(data_of(hd.f_st(cfg, net, x_t, s, t, labels)), dtype=np.float64)


def f_time_derivative(cfg, net, x, eps, s, t, labels=None, h: float = 1e-5):
    """Total derivative d/du f_{s,u}(alpha_u x + sigma_u eps) at u = t by
    central differences."""
    sched = cfg.sched
    up = min(t + h, sched.t_max if sched.t_max < 1.0 else 1.0)
    lo = t - h
    f_hi = _f_plain(cfg, net, forward_marginal(sched, x, eps, up), s, up, labels)
    f_lo = _f_plain(cfg, net, forward_marginal(sched, x, eps, lo), s, lo, labels)
    return (f_hi - f_lo) / (up - lo)


def differential_imm_loss(cfg, net, x, eps, s, t, labels=None, h: float = 1e-5):
    """Analytic r -> t limit of the kernel four-term sum for the unit RBF
    kernel, averaged over all particle pairs (diagonal included):

        E[ exp(-|df|^2/2) (fdot^T fdot' - fdot^T df df^T fdot') ].
    """
    if h > MAX_FD_STEP:
        raise TrainingError("finite-difference step too large")
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x_t = forward_marginal(cfg.sched, x, eps, t)
    f = _f_plain(cfg, net, x_t, s, t, labels)
    fdot = f_time_derivative(cfg, net, x, eps, s, t, labels, h)
    diff = f[:, None, :] - f[None, :, :]
    k = np.exp(-0.5 * np.sum(diff * diff, axis=-1))
    dot = fdot @ fdot.T
    proj_j = np.einsum("jd,jkd->jk", fdot, diff)
    proj_k = np.einsum("kd,jkd->jk", fdot, diff)
    return float(np.mean(k * (dot - proj_j * proj_k)))


def differential_quotient(cfg, net, x, eps, s, t, h: float, labels=None):
    """(1 / h^2) times the four-term kernel sum at r = t - h, with x_r built by
    reuse from the same (x, eps) pairs."""
    if h > MAX_FD_STEP:
        raise TrainingError("finite-difference step too large")
    if not s <= t - h:
        raise TrainingError("need s <= t - h")
    sched = cfg.sched
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x_t = forward_marginal(sched, x, eps, t)
    r = t - h
    x_r = reuse_xr(sched, x_t, x, r, t)
    y_t = _f_plain(cfg, net, x_t, s, t, labels)
    y_r = _f_plain(cfg, net, x_r, s, r, labels)
    return float(mmd_vstat(DIFF_KERNEL, y_t, y_r)) / (h * h)


# --- training loop ---------------------------------------------------------------


class TrainingFault(RuntimeError):
    """A non-finite loss or gradient; ``state`` is the last good state."""

    def __init__(self, step: int, message: str, state):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.state = state


@dataclasses.dataclass
class TrainState:
    step: int
    params: dict
    opt: OptState
    ema: EmaState


@dataclasses.dataclass(frozen=True)
class Components:
    head: hd.HeadConfig
    kernel: KernelSpec
    weight: WeightConfig
    mapping: MappingFn
    mlp: Mlp
    dataset: ToyDataset


def components(run) -> Components:
    return Components(
        run.head_config(), run.kernel_spec(), run.weight_config(), run.mapping_fn(), run.mlp(), run.dataset()
    )


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based RNG stream for (seed, key...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def init_state(run) -> TrainState:
    t = run.train
    params = run.mlp().init_params(stream(run.run.seed, 0))
    opt = OptState.zeros_like(params, lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.adam_eps)
    return TrainState(0, params, opt, EmaState.from_params(params, t.ema_rate))


def draw_batch(run, comps: Components, step: int) -> GroupBatch:
    """Data, prior noise, labels and per-group times for optimizer step ``step``."""
    t = run.train
    rng = stream(run.run.seed, step)
    B, M = t.batch_size, t.particles
    G = B // M
    sched = comps.head.sched
    x, labels = sample_dataset(comps.dataset, B, rng)
    eps = sched.sigma_d * rng.standard_normal(x.shape)
    s, tt = sample_times(sched, G, rng)
    r = r_map(comps.mapping, sched, s, tt)
    if run.data.conditional:
        drop = rng.random(B) < t.p_drop
        labels = np.where(drop, comps.mlp.null_label, labels).reshape(G, M)
    else:
        labels = None
    return GroupBatch(x.reshape(G, M, -1), eps.reshape(G, M, -1), labels, s, np.asarray(r), tt)


def train_step(state: TrainState, comps: Components, batch: GroupBatch) -> LossInfo:
    """One optimizer step in place; raises TrainingFault leaving ``state`` untouched."""
    step = state.step + 1
    try:
        loss, grads, info = loss_and_grad(comps.head, comps.kernel, comps.weight, comps.mlp, state.params, batch)
    except NetError as exc:
        raise TrainingFault(step, str(exc), state) from exc
    if not math.isfinite(loss):
        raise TrainingFault(step, f"non-finite loss {loss}", state)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingFault(step, "non-finite gradient", state)
    state.params = adam_step(state.params, grads, state.opt)
    ema_update(state.ema, state.params)
    state.step = step
    return info


def sample_params(run, state: TrainState) -> dict:
    return state.ema.shadow if run.sampler.use_ema else state.params


def generate(run, params: dict, n: int, steps: int, method: str, rng, w: float = 1.0, label=None):
    """Draw ``n`` samples with the configured time grid and sampler."""
    comps_head = run.head_config()
    mlp = run.mlp()
    times = schedule_times(run.sampler_schedule(steps), comps_head.sched)
    fn = pushforward_sample if method == "push" else restart_sample
    null = mlp.null_label if mlp.n_classes else None
    return fn(comps_head, mlp.bind(params), times, n, mlp.in_dim, rng, label=label, w=w, null_label=null)


def evaluate_state(run, state: TrainState, n: int):
    """(MMD^2, sliced W1) of generated samples against fresh data."""
    rng = stream(run.run.seed, state.step, 1)
    gen = generate(run, sample_params(run, state), n, run.sampler.steps, run.sampler.method, rng, run.sampler.w)
    ref, _ = sample_dataset(run.dataset(), n, rng)
    return two_sample_mmd(gen, ref), sliced_w1(gen, ref, 32, rng)


def train_loop(run, state: TrainState | None = None, log=None, on_checkpoint=None) -> TrainState:
    """Run optimizer steps up to ``run.train.steps``.

    ``log`` receives one ``step loss w_mean skipped_groups`` line per step and
    ``eval step mmd w1`` lines every ``eval_every`` steps.  ``on_checkpoint``
    is called with the state every ``ckpt_every`` steps.
    """
    comps = components(run)
    state = init_state(run) if state is None else state
    t = run.train
    while state.step < t.steps:
        batch = draw_batch(run, comps, state.step + 1)
        info = train_step(state, comps, batch)
        if log is not None:
            log.write(f"{state.step} {info.loss!r} {info.w_mean!r} {info.skipped}\n")
        if t.eval_every and state.step % t.eval_every == 0:
            mmd, w1 = evaluate_state(run, state, t.eval_n)
            if log is not None:
                log.write(f"eval {state.step} {mmd!r} {w1!r}\n")
        if on_checkpoint is not None and t.ckpt_every and state.step % t.ckpt_every == 0:
            on_checkpoint(state)
    return state


def state_to_checkpoint(run, state: TrainState) -> Checkpoint:
    tensors = {}
    for prefix, group in (("param", state.params), ("adam_m", state.opt.m), ("adam_v", state.opt.v), ("ema", state.ema.shadow)):
        for k, v in group.items():
            tensors[f"{prefix}/{k}"] = v
    return Checkpoint(run.to_ini(), state.step, run.run.seed, tensors)


def state_from_checkpoint(run, ck: Checkpoint) -> TrainState:
    t = run.train
    params = ck.group("param")
    opt = OptState(ck.group("adam_m"), ck.group("adam_v"), ck.step, t.lr, t.beta1, t.beta2, t.adam_eps)
    return TrainState(ck.step, params, opt, EmaState(ck.group("ema"), t.ema_rate))
