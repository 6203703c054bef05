"""Parameterization wrappers turning a raw network G into the one-step map
f_{s,t} and the clean-data prediction g.

A *net* here is any callable ``net(x_in, noise_s, noise_t, labels)`` that
returns an ndarray or a :class:`~imm.netcore.Tensor` shaped like ``x_in``.
Times may be scalars or one value per row of ``x_t``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .netcore import Tensor
from .schedules import OTFM, FlowSchedule, alpha_sigma

IDENTITY = "identity"
SIMPLE_EDM = "simple_edm"
EULER_FM = "euler_fm"
KINDS = (IDENTITY, SIMPLE_EDM, EULER_FM)

COND_S = "s"
COND_GAP = "gap"  # second conditioning is t - s


class HeadError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class HeadConfig:
    kind: str = EULER_FM
    sched: FlowSchedule = dataclasses.field(default_factory=FlowSchedule)
    c_noise_scale: float = 1000.0
    second_cond: str = COND_S

    def __post_init__(self):
        if self.kind not in KINDS:
            raise HeadError(f"unknown head kind {self.kind!r}")
        if self.kind == EULER_FM and self.sched.kind != OTFM:
            raise HeadError("euler_fm parameterization requires the otfm schedule")
        if self.second_cond not in (COND_S, COND_GAP):
            raise HeadError(f"unknown second conditioning {self.second_cond!r}")

    @property
    def satisfies_boundary(self) -> bool:
        return self.kind != IDENTITY


def coeffs(cfg: HeadConfig, s, t):
    """Return (c_skip(s,t), c_out(s,t), c_in(t))."""
    s_arr = np.asarray(s, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(s_arr > t_arr):
        raise HeadError("need s <= t")
    a_s, sig_s = (np.asarray(v) for v in alpha_sigma(cfg.sched, s_arr))
    a_t, sig_t = (np.asarray(v) for v in alpha_sigma(cfg.sched, t_arr))
    sd = cfg.sched.sigma_d
    v = a_t * a_t + sig_t * sig_t
    norm = np.sqrt(v)
    c_in = 1.0 / (sd * norm)
    if cfg.kind == SIMPLE_EDM:
        c_skip = (a_s * a_t + sig_s * sig_t) / v
        c_out = -(a_s * sig_t - sig_s * a_t) * sd / norm
    elif cfg.kind == EULER_FM:
        c_skip = np.ones_like(t_arr * s_arr)
        c_out = -(t_arr - s_arr) * sd
    else:
        if np.any(sig_t == 0.0):
            raise HeadError("identity parameterization undefined at t = 0")
        ratio = sig_s / sig_t
        c_skip = ratio
        c_out = a_s - ratio * a_t
    return c_skip, c_out, c_in


def coeffs_t(cfg: HeadConfig, t):
    """Per-t (c_skip(t), c_out(t)) of the clean-data prediction g."""
    a_t, sig_t = (np.asarray(v) for v in alpha_sigma(cfg.sched, t))
    sd = cfg.sched.sigma_d
    if cfg.kind == SIMPLE_EDM:
        v = a_t**2 + sig_t**2
        return a_t / v, -sd * sig_t / np.sqrt(v)
    if cfg.kind == EULER_FM:
        return np.ones_like(a_t), -np.asarray(t, dtype=np.float64) * sd
    return np.zeros_like(a_t), np.ones_like(a_t)


def kernel_weight(cfg: HeadConfig, s, t):
    """w~(s,t) = 1 / |c_out(s,t)|; infinite where c_out vanishes."""
    _, c_out, _ = coeffs(cfg, s, t)
    with np.errstate(divide="ignore"):
        return 1.0 / np.abs(c_out)


def noise_inputs(cfg: HeadConfig, s, t):
    """The two scaled time conditionings (c s or c (t - s), c t)."""
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    first = s if cfg.second_cond == COND_S else t - s
    return cfg.c_noise_scale * first, cfg.c_noise_scale * t


def _col(v, n_dim):
    v = np.asarray(v, dtype=np.float64)
    return v if v.ndim == 0 else v.reshape(v.shape + (1,) * (n_dim - v.ndim))


def _raw(cfg, net, x_t, s, t, label):
    _, _, c_in = coeffs(cfg, s, t)
    ns, nt = noise_inputs(cfg, s, t)
    return net(_col(c_in, x_t.ndim) * x_t, ns, nt, label)


def _combine(c_skip, c_out, x_t, G):
    return _col(c_skip, x_t.ndim) * x_t + _col(c_out, x_t.ndim) * G


def f_st(cfg: HeadConfig, net, x_t, s, t, label=None):
    """x_s = c_skip(s,t) x_t + c_out(s,t) G(c_in(t) x_t, c_noise(s), c_noise(t), label)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    c_skip, c_out, _ = coeffs(cfg, s, t)
    return _combine(c_skip, c_out, x_t, _raw(cfg, net, x_t, s, t, label))


def f_st_guided(cfg: HeadConfig, net, x_t, s, t, label, w: float, null_label=None):
    """Classifier-free guided map with G^w = w G(label) + (1 - w) G(null)."""
    if w == 1.0:
        return f_st(cfg, net, x_t, s, t, label)
    if label is None:
        raise HeadError("guidance with w != 1 needs a class label")
    x_t = np.asarray(x_t, dtype=np.float64)
    c_skip, c_out, _ = coeffs(cfg, s, t)
    g_u = _raw(cfg, net, x_t, s, t, null_label)
    if w == 0.0:
        return _combine(c_skip, c_out, x_t, g_u)
    g_c = _raw(cfg, net, x_t, s, t, label)
    return _combine(c_skip, c_out, x_t, w * g_c + (1.0 - w) * g_u)


def g_theta(cfg: HeadConfig, net, x_t, s, t, label=None):
    """Clean-data prediction c_skip(t) x_t + c_out(t) G(...)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    cs, co = coeffs_t(cfg, t)
    return _combine(cs, co, x_t, _raw(cfg, net, x_t, s, t, label))


def as_array(y):
    return y.data if isinstance(y, Tensor) else np.asarray(y)
