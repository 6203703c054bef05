import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imm.interpolants import (
    DDIM,
    DDPM_POSTERIOR,
    InterpolantError,
    InterpolantSpec,
    check_self_consistency,
    ddim,
    ddpm_posterior,
    ddpm_posterior_params,
    failure_case_samples,
    failure_case_variance,
    forward_marginal,
    reuse_xr,
)
from imm.schedules import COSINE, OTFM, FlowSchedule

OT = FlowSchedule(OTFM)


def test_forward_marginal_examples():
    x = np.array([0.3, -1.2])
    eps = np.array([2.0, 0.5])
    np.testing.assert_array_equal(forward_marginal(OT, x, eps, 0.0), x)
    np.testing.assert_array_equal(forward_marginal(OT, x, eps, 1.0), eps)
    assert forward_marginal(OT, np.array([2.0]), np.array([-1.0]), 0.25)[0] == pytest.approx(1.25)
    with pytest.raises(InterpolantError):
        forward_marginal(OT, np.zeros(2), np.zeros(3), 0.5)


def test_ddim_examples():
    x_t, x = np.array([0.2]), np.array([1.0])
    assert ddim(OT, x_t, x, 0.4, 0.8)[0] == pytest.approx(0.6)
    assert reuse_xr(OT, x_t, x, 0.4, 0.8)[0] == pytest.approx(0.6)
    np.testing.assert_array_equal(ddim(OT, x_t, x, 0.8, 0.8), x_t)
    np.testing.assert_array_equal(ddim(OT, x_t, x, 0.0, 0.8), x)
    with pytest.raises(InterpolantError):
        ddim(OT, x_t, x, 0.0, 0.0)
    with pytest.raises(InterpolantError):
        ddim(OT, x_t, x, 0.9, 0.8)


def test_ddpm_posterior_variance_value():
    _, _, std = ddpm_posterior_params(OT, 0.4, 0.8)
    assert std**2 == pytest.approx(0.16 * (1 - (0.04 / 0.36) * 0.25))
    assert std**2 == pytest.approx(0.15556, abs=1e-5)


def test_ddpm_posterior_boundary():
    c_xt, c_x, std = ddpm_posterior_params(OT, 0.6, 0.6)
    assert c_xt == pytest.approx(1.0) and c_x == pytest.approx(0.0, abs=1e-15) and std == 0.0
    with pytest.raises(InterpolantError):
        ddpm_posterior_params(OT, 0.0, 0.5)


def test_ddpm_posterior_monte_carlo_mean():
    rng = np.random.default_rng(3)
    n = 1_000_000
    x = np.full((n, 1), 0.7)
    x_t = np.full((n, 1), -0.2)
    draws = ddpm_posterior(OT, x, x_t, 0.4, 0.8, rng)
    c_xt, c_x, std = ddpm_posterior_params(OT, 0.4, 0.8)
    mu = c_xt * -0.2 + c_x * 0.7
    assert abs(draws.mean() - mu) < 4 * std / 1000


def test_self_consistency_reports():
    x, x_t = np.array([0.5, -0.5]), np.array([1.0, 2.0])
    rep = check_self_consistency(InterpolantSpec(DDIM, OT), x, x_t, 0.3, 0.3, 0.3)
    assert rep.residual == 0.0
    rep = check_self_consistency(InterpolantSpec(DDIM, OT), x, x_t, 0.1, 0.4, 0.9)
    assert rep.residual <= 1e-10
    with pytest.raises(InterpolantError):
        check_self_consistency(InterpolantSpec(DDIM, OT), x, x_t, 0.5, 0.4, 0.9)


def test_ddpm_self_consistency_monte_carlo():
    spec = InterpolantSpec(DDPM_POSTERIOR, OT)
    rep = check_self_consistency(spec, np.array([0.4]), np.array([-0.3]), 0.2, 0.5, 0.8, 1_000_000, np.random.default_rng(0))
    assert rep.mean_gap < 5e-3 and rep.var_gap < 5e-3


@settings(max_examples=200)
@given(
    st.sampled_from([OTFM, COSINE]),
    st.lists(st.floats(1e-3, 1.0), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=4, max_size=4),
)
def test_ddim_self_consistency_property(kind, times, vals):
    s, r, t = sorted(times)
    sched = FlowSchedule(kind)
    x, x_t = np.array(vals[:2]), np.array(vals[2:])
    rep = check_self_consistency(InterpolantSpec(DDIM, sched), x, x_t, s, r, t)
    assert rep.residual <= 1e-10


@given(st.sampled_from([OTFM, COSINE]), st.floats(1e-3, 1.0), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_boundary_identities_property(kind, t, vals):
    sched = FlowSchedule(kind)
    x, x_t = np.array(vals[:2]), np.array(vals[2:])
    assert np.max(np.abs(ddim(sched, x_t, x, t, t) - x_t)) <= 1e-12
    assert np.max(np.abs(ddim(sched, x_t, x, 0.0, t) - x)) <= 1e-12


def test_failure_case():
    assert failure_case_variance(0.25, 0.5) == pytest.approx(0.125)
    assert failure_case_variance(1e-9, 0.5) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InterpolantError):
        failure_case_variance(0.5, 0.5)
    xs = failure_case_samples(0.25, 0.5, 100_000, np.random.default_rng(1))
    assert xs.var() >= 0.12


def test_unknown_kind():
    with pytest.raises(InterpolantError):
        InterpolantSpec("flow", OT)
