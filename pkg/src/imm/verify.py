"""Executable invariant suites.  Each suite returns a :class:`SuiteResult`
holding one line per individual check."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import head as hd
from . import interpolants as ip
from . import kernels as kn
from .data import ToyDataset, sample_dataset
from .netcore import Mlp, Tensor
from .schedules import COSINE, OTFM, FlowSchedule
from .training import (
    GroupBatch,
    WeightConfig,
    differential_imm_loss,
    differential_quotient,
    imm_loss,
    loss_and_grad,
    weight,
)


@dataclasses.dataclass
class Check:
    label: str
    value: float
    limit: str
    ok: bool

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.label}: {self.value:.3e} ({self.limit})"


@dataclasses.dataclass
class SuiteResult:
    name: str
    checks: list
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.ok for c in self.checks)


def _le(label, value, limit):
    return Check(label, float(value), f"<= {limit:g}", bool(value <= limit))


def _ge(label, value, limit):
    return Check(label, float(value), f">= {limit:g}", bool(value >= limit))


def random_net(rng, hidden=(16, 16), temb=16, activation="silu", n_classes=0, out_scale=0.3):
    """A float64 network with a non-zero output layer."""
    mlp = Mlp(2, hidden, 2, activation, temb, n_classes, "float64")
    params = mlp.init_params(rng)
    params["out.w"] = out_scale * rng.standard_normal(params["out.w"].shape)
    params["out.b"] = out_scale * rng.standard_normal(params["out.b"].shape)
    return mlp, params


def _sorted_times(rng, n, lo=0.0):
    u = np.sort(rng.uniform(lo, 1.0, (n, 3)), axis=1)
    return u[:, 0], u[:, 1], u[:, 2]


# --- 1. algebraic identities -----------------------------------------------------


def suite_algebraic(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    checks = []
    n = 10_000
    for kind in (OTFM, COSINE):
        sched = FlowSchedule(kind)
        s, r, t = _sorted_times(rng, n, lo=1e-3)
        x, x_t = rng.standard_normal((2, n, 2))
        one = ip.ddim(sched, x_t, x, s[:, None], t[:, None])
        x_r = ip.ddim(sched, x_t, x, r[:, None], t[:, None])
        two = ip.ddim(sched, x_r, x, s[:, None], r[:, None])
        checks.append(_le(f"ddim self-consistency ({kind}, {n} draws)", np.max(np.abs(one - two)), 1e-10))

    mlp, params = random_net(rng)
    net = mlp.bind(params)
    m = 1000
    for kind, sk in ((hd.SIMPLE_EDM, OTFM), (hd.SIMPLE_EDM, COSINE), (hd.EULER_FM, OTFM), (hd.IDENTITY, OTFM)):
        cfg = hd.HeadConfig(kind, FlowSchedule(sk))
        s, _, t = _sorted_times(rng, m, lo=1e-3)
        x_t = rng.standard_normal((m, 2))
        f = hd.as_array(hd.f_st(cfg, net, x_t, s, t))
        g = hd.as_array(hd.g_theta(cfg, net, x_t, s, t))
        via_ddim = ip.ddim(cfg.sched, x_t, g, s[:, None], t[:, None])
        checks.append(_le(f"f_st = ddim(g_theta) ({kind}/{sk}, {m} draws)", np.max(np.abs(f - via_ddim)), 1e-10))
        if cfg.satisfies_boundary:
            f_ss = hd.as_array(hd.f_st(cfg, net, x_t, t, t))
            checks.append(_le(f"boundary f_tt = identity ({kind}/{sk})", np.max(np.abs(f_ss - x_t)), 0.0))
    return SuiteResult("algebraic", checks)


# --- 2. distributional identities ------------------------------------------------


def suite_distributional(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    checks = []
    spec = ip.InterpolantSpec(ip.DDPM_POSTERIOR, FlowSchedule(OTFM))
    rep = ip.check_self_consistency(spec, np.array([0.7, -0.3]), np.array([0.2, 0.9]), 0.2, 0.5, 0.8, 1_000_000, rng)
    checks.append(_le("ddpm posterior one-hop vs two-hop mean gap (1e6 draws)", rep.mean_gap, 5e-3))
    checks.append(_le("ddpm posterior one-hop vs two-hop variance gap (1e6 draws)", rep.var_gap, 5e-3))

    # reuse-built x_r against the direct forward marginal at r
    n = 100_000
    ds = ToyDataset()
    for kind in (OTFM, COSINE):
        sched = FlowSchedule(kind)
        r, t = 0.35, 0.8
        x, _ = sample_dataset(ds, n, rng)
        eps = sched.sigma_d * rng.standard_normal(x.shape)
        x_t = ip.forward_marginal(sched, x, eps, t)
        x_r = ip.reuse_xr(sched, x_t, x, r, t)
        direct = ip.forward_marginal(sched, x, eps, r)
        scale = direct.std(axis=0)
        gap_mean = np.max(np.abs(x_r.mean(0) - direct.mean(0)) / scale)
        gap_var = np.max(np.abs(x_r.var(0) - direct.var(0)) / scale**2)
        checks.append(_le(f"x_t reuse moments vs forward marginal, paired ({kind})", max(gap_mean, gap_var), 5e-3))
        # independent draws: standardized gaps measured in standard errors
        x2, _ = sample_dataset(ds, n, rng)
        eps2 = sched.sigma_d * rng.standard_normal(x2.shape)
        fresh = ip.forward_marginal(sched, x2, eps2, r)
        se_mean = np.sqrt(2.0 / n)
        z_mean = np.max(np.abs(x_r.mean(0) - fresh.mean(0)) / scale) / se_mean
        kurt = np.mean((fresh - fresh.mean(0)) ** 4, axis=0) / fresh.var(0) ** 2
        se_var = np.sqrt(2.0 * (kurt - 1.0) / n)
        z_var = np.max(np.abs(x_r.var(0) / fresh.var(0) - 1.0) / se_var)
        checks.append(_le(f"x_t reuse moments vs independent forward draws, z-score ({kind})", max(z_mean, z_var), 4.0))
    return SuiteResult("distributional", checks)


# --- 3. kernels --------------------------------------------------------------------


def suite_kernels(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    checks = []
    worst = np.inf
    for _ in range(1000):
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 4))
        c = float(rng.uniform(0.05, 3.0))
        pts = rng.standard_normal((n, d)) * rng.uniform(0.1, 3.0)
        coef = rng.standard_normal(n)
        coef -= coef.mean()
        coef[-1] = -coef[:-1].sum()
        q = kn.cpd_quadratic_form(kn.KernelSpec(kn.PSEUDO_HUBER, c=c), pts, coef)
        worst = min(worst, q)
    checks.append(_ge("pseudo-Huber zero-sum quadratic forms (1000 trials, min)", worst, -1e-9))

    spec = kn.KernelSpec(kn.LAPLACE)
    worst_rel = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 5))
        x, y = rng.standard_normal((2, d))
        w = float(rng.uniform(0.5, 5.0))
        h = 1e-6
        fd = np.array(
            [(kn.kernel_eval(spec, x + h * e, y, w) - kn.kernel_eval(spec, x - h * e, y, w)) / (2 * h) for e in np.eye(d)]
        )
        closed = kn.laplace_grad_norm(spec, np.linalg.norm(x - y), w, d)
        worst_rel = max(worst_rel, abs(np.linalg.norm(fd) - closed) / closed)
        worst_rel = max(worst_rel, abs(np.linalg.norm(kn.laplace_grad(spec, x, y, w)) - closed) / closed)
        xt = Tensor(x[None], requires_grad=True)
        kn.kernel_matrix(spec, xt, y[None], w).sum().backward()
        worst_rel = max(worst_rel, abs(np.linalg.norm(xt.grad) - closed) / closed)
        worst_rel = max(worst_rel, np.linalg.norm(xt.grad[0] - fd) / closed)
    checks.append(_le("Laplace gradient norm vs self-normalized closed form (rel)", worst_rel, 1e-4))
    return SuiteResult("kernels", checks)


# --- 4. reductions -------------------------------------------------------------------


def _group_batch(rng, G, M, sched, s, r, t, duplicate=False):
    x = rng.standard_normal((G, M, 2)) * 0.5
    eps = rng.standard_normal((G, M, 2)) * sched.sigma_d
    if duplicate:
        x[:, 1:] = x[:, :1]
        eps[:, 1:] = eps[:, :1]
    full = lambda v: np.full(G, v) if np.ndim(v) == 0 else np.asarray(v)
    return GroupBatch(x, eps, None, full(s), full(r), full(t))


def suite_reductions(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    checks = []
    mlp, params = random_net(rng)
    net = mlp.bind(params)
    wcfg = WeightConfig()
    for kind in (hd.EULER_FM, hd.SIMPLE_EDM):
        cfg = hd.HeadConfig(kind, FlowSchedule(OTFM))
        G = 16
        s, r, t = _sorted_times(rng, G, lo=0.05)
        batch = _group_batch(rng, G, 2, cfg.sched, s, r, t, duplicate=True)
        _, info = imm_loss(cfg, kn.KernelSpec(kn.ENERGY), wcfg, net, net, batch)
        x_t = ip.forward_marginal(cfg.sched, batch.x[:, 0], batch.eps[:, 0], t[:, None])
        x_r = ip.reuse_xr(cfg.sched, x_t, batch.x[:, 0], r[:, None], t[:, None])
        f_t = hd.as_array(hd.f_st(cfg, net, x_t, s, t))
        f_r = hd.as_array(hd.f_st(cfg, net, x_r, s, r))
        expect = 2.0 * weight(wcfg, cfg.sched, s, t) * np.sum((f_t - f_r) ** 2, axis=1)
        checks.append(_le(f"M=2 duplicated energy loss = 2 w |f - f'|^2 ({kind})", np.max(np.abs(info.group_losses - expect)), 1e-10))

        # naive objective: t = T, s = r = 0
        T = cfg.sched.t_max
        M = 8
        batch = _group_batch(rng, 4, M, cfg.sched, 0.0, 0.0, T)
        spec = kn.KernelSpec(kn.LAPLACE)
        _, info = imm_loss(cfg, spec, wcfg, net, net, batch)
        wt = hd.kernel_weight(cfg, 0.0, T)
        errs = []
        for g in range(4):
            x_T = ip.forward_marginal(cfg.sched, batch.x[g], batch.eps[g], T)
            gen = hd.as_array(hd.f_st(cfg, net, x_T, 0.0, T))
            data = batch.x[g]
            plain = sum(
                kn.kernel_eval(spec, gen[j], gen[k], wt)
                + kn.kernel_eval(spec, data[j], data[k], wt)
                - 2.0 * kn.kernel_eval(spec, gen[j], data[k], wt)
                for j in range(M)
                for k in range(M)
            ) / M**2
            errs.append(abs(info.group_losses[g] / weight(wcfg, cfg.sched, 0.0, T) - plain))
        checks.append(_le(f"degenerate config = plain MMD V-statistic ({kind})", max(errs), 1e-10))
    return SuiteResult("reductions", checks)


# --- 5. differential limit ------------------------------------------------------------


def differential_errors(seed: int = 0, hs=(1e-2, 1e-3, 1e-4)):
    """|quotient(h) - analytic limit| for each h on a fixed random net."""
    rng = np.random.default_rng(seed)
    mlp, params = random_net(rng, hidden=(32, 32), out_scale=0.5)
    cfg = hd.HeadConfig(hd.EULER_FM, FlowSchedule(OTFM), c_noise_scale=1.0)
    net = mlp.bind(params)
    M = 16
    x = 0.5 * rng.standard_normal((M, 2))
    eps = 0.5 * rng.standard_normal((M, 2))
    s, t = 0.2, 0.6
    limit = differential_imm_loss(cfg, net, x, eps, s, t)
    return limit, [abs(differential_quotient(cfg, net, x, eps, s, t, h) - limit) for h in hs]


def suite_differential(seed: int = 0) -> SuiteResult:
    limit, errs = differential_errors(seed)
    ratio = errs[1] / errs[2]
    checks = [
        Check("error(h=1e-3) / error(h=1e-4)", ratio, "in [5, 20]", bool(5.0 <= ratio <= 20.0)),
        Check("error(h=1e-2) / error(h=1e-3)", errs[0] / errs[1], "info", True),
        Check("analytic limit value", limit, "info", True),
    ]
    return SuiteResult("differential", checks)


# --- 6. failure case ------------------------------------------------------------------


def suite_failure_case(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    s, t = 0.25, 0.5
    gamma_sq = ip.failure_case_variance(s, t)
    checks = [_le("gamma^2 closed form at (0.25, 0.5)", abs(gamma_sq - 0.125), 1e-15)]
    models = {
        "exact data model": None,
        "constant model": lambda x_t, r: np.full_like(x_t, 0.3),
        "noisy model": lambda x_t, r: 0.1 * r.standard_normal(x_t.shape),
    }
    for name, model in models.items():
        xs = ip.failure_case_samples(s, t, 100_000, rng, model)
        checks.append(_ge(f"Var(x_s) / gamma^2, {name}", xs.var() / gamma_sq, 0.95))
    return SuiteResult("failure_case", checks)


# --- 7. gradients ------------------------------------------------------------------------


def fd_grad_check(cfg, kspec, mlp, params, batch, h=1e-6, floor=1e-8):
    """Worst per-tensor relative error between autodiff and central differences
    of the loss.  The target branch stays at ``params``."""
    wcfg = WeightConfig()
    target = {k: v.copy() for k, v in params.items()}
    _, grads, _ = loss_and_grad(cfg, kspec, wcfg, mlp, params, batch, target_params=target)
    tgt_net = mlp.bind(target)
    worst = 0.0
    for name, p in params.items():
        fd = np.zeros_like(p)
        flat = p.reshape(-1)
        out = fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = imm_loss(cfg, kspec, wcfg, mlp.bind(params), tgt_net, batch)
            flat[i] = old - h
            lm, _ = imm_loss(cfg, kspec, wcfg, mlp.bind(params), tgt_net, batch)
            flat[i] = old
            out[i] = (float(hd.as_array(lp)) - float(hd.as_array(lm))) / (2 * h)
        err = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), floor)
        worst = max(worst, err)
    return worst


def suite_gradients(seed: int = 0, train_steps: int = 100) -> SuiteResult:
    from .netcore import OptState, adam_step

    rng = np.random.default_rng(seed)
    checks = []
    combos = [
        (hd.EULER_FM, OTFM, "silu"),
        (hd.SIMPLE_EDM, OTFM, "silu"),
        (hd.SIMPLE_EDM, COSINE, "silu"),
        (hd.IDENTITY, OTFM, "silu"),
        (hd.EULER_FM, OTFM, "relu"),
        (hd.SIMPLE_EDM, OTFM, "relu"),
    ]
    kspec = kn.KernelSpec(kn.LAPLACE)
    for kind, sk, act in combos:
        cfg = hd.HeadConfig(kind, FlowSchedule(sk))
        mlp = Mlp(2, (16, 16), 2, act, 8, 0, "float64")
        params = mlp.init_params(rng)

        def batch():
            s, r, t = _sorted_times(rng, 2, lo=0.05)
            return _group_batch(rng, 2, 4, cfg.sched, s, r, t)

        checks.append(_le(f"{kind}/{sk}/{act} at init", fd_grad_check(cfg, kspec, mlp, params, batch()), 1e-3))
        opt = OptState.zeros_like(params, lr=1e-3)
        for _ in range(train_steps):
            _, grads, _ = loss_and_grad(cfg, kspec, WeightConfig(), mlp, params, batch())
            params = adam_step(params, grads, opt)
        checks.append(_le(f"{kind}/{sk}/{act} after {train_steps} steps", fd_grad_check(cfg, kspec, mlp, params, batch()), 1e-3))
    return SuiteResult("gradients", checks)


SUITES = {
    "algebraic": suite_algebraic,
    "distributional": suite_distributional,
    "kernels": suite_kernels,
    "reductions": suite_reductions,
    "differential": suite_differential,
    "failure_case": suite_failure_case,
    "gradients": suite_gradients,
}


def run_suites(filter_name: str | None = None, seed: int = 0) -> list:
    names = [n for n in SUITES if filter_name is None or filter_name in n]
    if not names:
        raise KeyError(f"no suite matches {filter_name!r}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        res = SUITES[name](seed)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
