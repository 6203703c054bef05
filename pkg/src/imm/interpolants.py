"""Forward marginals and the generalized interpolants between x and x_t.

``ddim`` is the deterministic interpolant used everywhere in training and
sampling.  ``ddpm_posterior`` is its stochastic sibling.  The ``check_*`` and
``failure_case_*`` helpers turn the algebraic and distributional properties
of these interpolants into executable residuals.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .schedules import FlowSchedule, ScheduleError, alpha_sigma

DDIM = "ddim"
DDPM_POSTERIOR = "ddpm_posterior"


class InterpolantError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class InterpolantSpec:
    kind: str
    sched: FlowSchedule

    def __post_init__(self):
        if self.kind not in (DDIM, DDPM_POSTERIOR):
            raise InterpolantError(f"unknown interpolant {self.kind!r}")


def _col(v, ndim):
    """Broadcast per-sample scalars against trailing point dimensions."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InterpolantError(f"dimension mismatch in {what}: {a.shape} vs {b.shape}")
    return a, b


def forward_marginal(sched: FlowSchedule, x, eps, t):
    """x_t = alpha_t x + sigma_t eps.  ``eps`` should be N(0, sigma_d^2 I)."""
    x, eps = _same_shape(x, eps, "forward_marginal")
    a, s = alpha_sigma(sched, t)
    return _col(a, x.ndim) * x + _col(s, x.ndim) * eps


def ddim_coeffs(sched: FlowSchedule, s, t):
    """Coefficients (on x, on x_t) of the DDIM interpolant from t to s."""
    s_arr = np.asarray(s, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(s_arr > t_arr):
        raise InterpolantError("ddim requires s <= t")
    a_s, sig_s = alpha_sigma(sched, s)
    a_t, sig_t = alpha_sigma(sched, t)
    if np.any(np.asarray(sig_t) == 0.0):
        raise InterpolantError("ddim undefined at sigma_t = 0 (t = 0)")
    ratio = np.asarray(sig_s) / np.asarray(sig_t)
    return np.asarray(a_s) - ratio * np.asarray(a_t), ratio


def ddim(sched: FlowSchedule, x_t, x, s, t):
    """x_s = (alpha_s - sigma_s/sigma_t alpha_t) x + (sigma_s/sigma_t) x_t."""
    x_t, x = _same_shape(x_t, x, "ddim")
    c_x, c_xt = ddim_coeffs(sched, s, t)
    return _col(c_x, x.ndim) * x + _col(c_xt, x.ndim) * x_t


def reuse_xr(sched: FlowSchedule, x_t, x, r, t):
    """Training-time x_r: DDIM from the same (x, x_t) pair, not a fresh draw."""
    return ddim(sched, x_t, x, r, t)


def ddpm_posterior_params(sched: FlowSchedule, s, t):
    """Return (coef on x_t, coef on x, std) of the DDPM posterior from t to s."""
    a_s, sig_s = (np.asarray(v) for v in alpha_sigma(sched, s))
    a_t, sig_t = (np.asarray(v) for v in alpha_sigma(sched, t))
    if np.any(np.asarray(s) > np.asarray(t)):
        raise InterpolantError("ddpm_posterior requires s <= t")
    if np.any(a_s == 0.0) or np.any(sig_t == 0.0) or np.any(sig_s == 0.0):
        raise InterpolantError("ddpm_posterior singular for these times")
    shrink = (a_t / a_s) ** 2 * (sig_s / sig_t) ** 2
    c_xt = a_t * sig_s**2 / (a_s * sig_t**2)
    c_x = a_s * (1.0 - shrink)
    var = sig_s**2 * (1.0 - shrink)
    return c_xt, c_x, np.sqrt(np.maximum(var, 0.0))


def ddpm_posterior(sched: FlowSchedule, x, x_t, s, t, rng: np.random.Generator):
    """Draw x_s ~ N(mu_Q, sigma_Q^2 I) from the DDPM posterior."""
    x, x_t = _same_shape(x, x_t, "ddpm_posterior")
    c_xt, c_x, std = ddpm_posterior_params(sched, s, t)
    z = rng.standard_normal(x.shape)
    nd = x.ndim
    return _col(c_xt, nd) * x_t + _col(c_x, nd) * x + _col(std, nd) * z


@dataclasses.dataclass
class ConsistencyReport:
    residual: float = 0.0
    mean_gap: float = 0.0
    var_gap: float = 0.0


def check_self_consistency(spec: InterpolantSpec, x, x_t, s, r, t, n_mc=0, rng=None):
    """Compare one hop t -> s with two hops t -> r -> s.

    DDIM is compared pathwise (max-norm residual).  The DDPM posterior is
    compared through the empirical mean and variance of ``n_mc`` draws of each
    route, since the identity only holds in distribution.
    """
    if not s <= r <= t:
        raise InterpolantError("need s <= r <= t")
    x = np.asarray(x, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if spec.kind == DDIM:
        if s == r == t:
            return ConsistencyReport()
        one = ddim(spec.sched, x_t, x, s, t)
        x_r = ddim(spec.sched, x_t, x, r, t)
        two = ddim(spec.sched, x_r, x, s, r)
        return ConsistencyReport(residual=float(np.max(np.abs(one - two))))

    if s == r == t:
        return ConsistencyReport()
    if rng is None:
        rng = np.random.default_rng(0)
    xs = np.broadcast_to(x, (n_mc,) + x.shape)
    xts = np.broadcast_to(x_t, (n_mc,) + x_t.shape)
    one = ddpm_posterior(spec.sched, xs, xts, s, t, rng)
    mid = xts if r == t else ddpm_posterior(spec.sched, xs, xts, r, t, rng)
    two = mid if s == r else ddpm_posterior(spec.sched, xs, mid, s, r, rng)
    mean_gap = np.max(np.abs(one.mean(axis=0) - two.mean(axis=0)))
    var_gap = np.max(np.abs(one.var(axis=0) - two.var(axis=0)))
    return ConsistencyReport(mean_gap=float(mean_gap), var_gap=float(var_gap))


def failure_case_variance(s: float, t: float) -> float:
    """Conditional variance (s/t)^2 (1 - s/t) of the non-marginal-preserving
    interpolant I_{s|t}(x, x_t) = (1 - s/t) x + (s/t) x_t."""
    if not 0.0 <= s < t:
        raise InterpolantError("need 0 <= s < t")
    ratio = s / t
    return ratio**2 * (1.0 - ratio)


def failure_case_samples(s: float, t: float, n: int, rng: np.random.Generator, model=None):
    """Draw x_s through the failure-case interpolant with delta data at 0 and
    delta prior at 1 (so x_t = t exactly).

    ``model`` maps x_t to the clean prediction; any deterministic or random
    model can be plugged in.  The default predicts the true data point 0.
    """
    if not 0.0 < s < t < 1.0:
        raise InterpolantError("need 0 < s < t < 1")
    x_t = np.full(n, t)
    x_hat = np.zeros(n) if model is None else np.asarray(model(x_t, rng), dtype=np.float64)
    ratio = s / t
    gamma = ratio * np.sqrt(1.0 - ratio)
    return (1.0 - ratio) * x_hat + ratio * x_t + gamma * rng.standard_normal(n)


__all__ = [
    "DDIM",
    "DDPM_POSTERIOR",
    "ConsistencyReport",
    "InterpolantError",
    "InterpolantSpec",
    "ScheduleError",
    "check_self_consistency",
    "ddim",
    "ddim_coeffs",
    "ddpm_posterior",
    "ddpm_posterior_params",
    "failure_case_samples",
    "failure_case_variance",
    "forward_marginal",
    "reuse_xr",
]
