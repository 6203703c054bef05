"""Closed-form flow trajectories and their scalar time functions.

Both schedules interpolate data (t=0) and prior (t=1) as
``x_t = alpha(t) * x + sigma(t) * eps``.  Every function accepts a float or a
numpy array of times and is evaluated in float64.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

OTFM = "otfm"
COSINE = "cosine"
KINDS = (OTFM, COSINE)

# Upper time bound used when none is given: keeps eta(T_max) finite.
DEFAULT_T_MAX = {OTFM: 0.994, COSINE: 0.996}


class ScheduleError(ValueError):
    """Raised for times outside a schedule's domain."""


@dataclasses.dataclass(frozen=True)
class FlowSchedule:
    kind: str = OTFM
    sigma_d: float = 0.5
    eps_t: float = 0.0
    t_max: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.t_max is None:
            object.__setattr__(self, "t_max", DEFAULT_T_MAX[self.kind])
        if not self.sigma_d > 0:
            raise ScheduleError("sigma_d must be positive")
        if not 0.0 <= self.eps_t < 1.0:
            raise ScheduleError("eps_t must lie in [0, 1)")
        if not self.eps_t <= self.t_max <= 1.0:
            raise ScheduleError("t_max must lie in [eps_t, 1]")

    @property
    def eta_max(self) -> float:
        return float(eta(self, self.t_max))

    @property
    def eta_min(self) -> float:
        return float(eta(self, self.eps_t))


def _times(t, lo=0.0, hi=1.0, open_lo=False, open_hi=False, what="t"):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ScheduleError(f"{what} must be finite")
    bad = (arr < lo) | (arr > hi)
    if open_lo:
        bad |= arr == lo
    if open_hi:
        bad |= arr == hi
    if np.any(bad):
        lb = "(" if open_lo else "["
        rb = ")" if open_hi else "]"
        raise ScheduleError(f"{what} outside {lb}{lo}, {hi}{rb}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def _alpha_sigma(kind, t):
    if kind == OTFM:
        return 1.0 - t, t
    half_pi_t = 0.5 * math.pi * t
    a, s = np.cos(half_pi_t), np.sin(half_pi_t)
    # exact endpoints; cos(pi/2) is 6e-17 in floating point
    a = np.where(t == 1.0, 0.0, a)
    s = np.where(t == 1.0, 1.0, s)
    return a, s


def alpha_sigma(sched: FlowSchedule, t):
    """Return ``(alpha_t, sigma_t)``."""
    t = _times(t)
    a, s = _alpha_sigma(sched.kind, t)
    return _out(np.asarray(a, dtype=np.float64)), _out(np.asarray(s, dtype=np.float64))


def alpha_sigma_deriv(sched: FlowSchedule, t):
    """Return the time derivatives ``(alpha'_t, sigma'_t)``."""
    t = _times(t)
    if sched.kind == OTFM:
        one = np.ones_like(t)
        return _out(-one), _out(one)
    half_pi = 0.5 * math.pi
    return _out(-half_pi * np.sin(half_pi * t)), _out(half_pi * np.cos(half_pi * t))


def eta(sched: FlowSchedule, t):
    """Noise-to-signal ratio sigma_t / alpha_t; undefined at t=1."""
    t = _times(t, open_hi=True)
    a, s = _alpha_sigma(sched.kind, t)
    return _out(np.asarray(s / a, dtype=np.float64))


def eta_inv(sched: FlowSchedule, eta_val):
    v = _times(eta_val, hi=np.inf, what="eta")
    if sched.kind == OTFM:
        out = v / (1.0 + v)
    else:
        out = (2.0 / math.pi) * np.arctan(v)
    return _out(out)


def deta_dt(sched: FlowSchedule, t):
    t = _times(t, open_hi=True)
    if sched.kind == OTFM:
        return _out(1.0 / (1.0 - t) ** 2)
    return _out(0.5 * math.pi / np.cos(0.5 * math.pi * t) ** 2)


def log_snr(sched: FlowSchedule, t):
    """lambda_t = 2 log(alpha_t / sigma_t)."""
    t = _times(t, open_lo=True, open_hi=True)
    a, s = _alpha_sigma(sched.kind, t)
    return _out(2.0 * (np.log(a) - np.log(s)))


def log_snr_inv(sched: FlowSchedule, lam):
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ScheduleError("log-SNR must be finite")
    if sched.kind == OTFM:
        # alpha/sigma = exp(lam/2) with alpha = 1 - t, sigma = t
        out = 1.0 / (1.0 + np.exp(0.5 * lam))
    else:
        out = (2.0 / math.pi) * np.arctan(np.exp(-0.5 * lam))
    return _out(out)


def dlog_snr_dt(sched: FlowSchedule, t):
    t = _times(t, open_lo=True, open_hi=True)
    if sched.kind == OTFM:
        return _out(-2.0 / (t * (1.0 - t)))
    return _out(-2.0 * math.pi / np.sin(math.pi * t))
