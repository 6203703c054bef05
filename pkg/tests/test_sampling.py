import numpy as np
import pytest

from imm import head as hd
from imm.sampling import (
    EDM,
    TWO_STEP_ETA,
    UNIFORM,
    SamplerError,
    SamplerSchedule,
    edm_etas,
    gaussian_flow_map,
    gaussian_oracle_net,
    pushforward_sample,
    read_samples,
    restart_sample,
    schedule_times,
    write_samples,
)
from imm.schedules import COSINE, OTFM, FlowSchedule, alpha_sigma
from imm.verify import random_net

OT = FlowSchedule(OTFM)
OT1 = FlowSchedule(OTFM, t_max=1.0)


def zero_net(x_in, ns, nt, labels=None):
    return np.zeros_like(np.asarray(x_in, dtype=np.float64))


def test_schedule_grids():
    np.testing.assert_array_equal(schedule_times(SamplerSchedule(UNIFORM, 1), OT), [0.994, 0.0])
    np.testing.assert_allclose(schedule_times(SamplerSchedule(UNIFORM, 4), OT1), [1.0, 0.75, 0.5, 0.25, 0.0])
    ss = SamplerSchedule(EDM, 2, rho=7.0, eta_min=0.0, eta_max=160.0)
    np.testing.assert_allclose(edm_etas(ss, OT), [160.0, 1.25, 0.0])
    t = schedule_times(SamplerSchedule(TWO_STEP_ETA), OT)
    assert t[1] == pytest.approx(1.4 / 2.4) and t[1] == pytest.approx(0.58333, abs=1e-5)
    for n in (1, 3, 8):
        g = schedule_times(SamplerSchedule(EDM, n), OT)
        assert len(g) == n + 1 and g[0] == OT.t_max and g[-1] == 0.0 and np.all(np.diff(g) < 0)
    with pytest.raises(SamplerError):
        SamplerSchedule(UNIFORM, 0)
    with pytest.raises(SamplerError):
        SamplerSchedule("karras")


def test_untrained_one_step_returns_noise():
    cfg = hd.HeadConfig(hd.EULER_FM, OT)
    x = pushforward_sample(cfg, zero_net, [0.994, 0.0], 10, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(x, 0.5 * np.random.default_rng(0).standard_normal((10, 2)))


def test_degenerate_grid_returns_noise():
    mlp, params = random_net(np.random.default_rng(1))
    cfg = hd.HeadConfig(hd.SIMPLE_EDM, OT)
    x0 = np.random.default_rng(2).standard_normal((6, 2))
    out = pushforward_sample(cfg, mlp.bind(params), [0.6, 0.6, 0.6], 6, 2, None, x_init=x0)
    np.testing.assert_array_equal(out, x0)


def test_samplers_deterministic_and_restart_one_step_matches():
    mlp, params = random_net(np.random.default_rng(3))
    net = mlp.bind(params)
    cfg = hd.HeadConfig(hd.EULER_FM, OT)
    a = pushforward_sample(cfg, net, [0.994, 0.5, 0.0], 20, 2, np.random.default_rng(4))
    b = pushforward_sample(cfg, net, [0.994, 0.5, 0.0], 20, 2, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)
    p1 = pushforward_sample(cfg, net, [0.994, 0.0], 20, 2, np.random.default_rng(5))
    r1 = restart_sample(cfg, net, [0.994, 0.0], 20, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(p1, r1)


def test_restart_with_zero_noise_level_is_deterministic_composition():
    mlp, params = random_net(np.random.default_rng(6))
    net = mlp.bind(params)
    cfg = hd.HeadConfig(hd.SIMPLE_EDM, OT)
    times = [0.8, 0.0, 0.0]
    out = restart_sample(cfg, net, times, 8, 2, np.random.default_rng(7))
    x0 = 0.5 * np.random.default_rng(7).standard_normal((8, 2))
    first = hd.f_st(cfg, net, x0, 0.0, 0.8).data
    second = hd.f_st(cfg, net, first, 0.0, 0.0).data
    np.testing.assert_allclose(out, second)


def test_restart_renoised_variance():
    cfg = hd.HeadConfig(hd.EULER_FM, OT)
    trace = []
    restart_sample(cfg, zero_net, [0.9, 0.6, 0.0], 100_000, 2, np.random.default_rng(8), trace=trace)
    _, sig = alpha_sigma(OT, 0.6)
    assert np.all(trace[0].var(axis=0) >= sig**2 * 0.25 * 0.99)


def test_grid_must_be_nonincreasing():
    cfg = hd.HeadConfig(hd.EULER_FM, OT)
    with pytest.raises(SamplerError):
        pushforward_sample(cfg, zero_net, [0.2, 0.5], 2, 2, np.random.default_rng(0))
    with pytest.raises(SamplerError):
        restart_sample(cfg, zero_net, [0.5], 2, 2, np.random.default_rng(0))


def test_guided_sampling_uses_both_branches():
    mlp, params = random_net(np.random.default_rng(9), n_classes=3)
    net = mlp.bind(params)
    cfg = hd.HeadConfig(hd.EULER_FM, OT)
    times = [0.994, 0.0]
    common = dict(label=np.full(5, 1), null_label=3)
    g1 = pushforward_sample(cfg, net, times, 5, 2, np.random.default_rng(0), w=1.0, **common)
    g2 = pushforward_sample(cfg, net, times, 5, 2, np.random.default_rng(0), w=2.0, **common)
    skip = pushforward_sample(cfg, net, times, 5, 2, np.random.default_rng(0), w=2.0, force_unguided_one_step=True, **common)
    assert not np.allclose(g1, g2)
    np.testing.assert_array_equal(g1, skip)


# --- Gaussian oracle -----------------------------------------------------------

ORACLE_CASES = [(hd.EULER_FM, OTFM), (hd.SIMPLE_EDM, OTFM), (hd.SIMPLE_EDM, COSINE)]


@pytest.mark.parametrize("kind,sk", ORACLE_CASES)
def test_oracle_net_reproduces_flow_map(kind, sk):
    sched = FlowSchedule(sk, t_max=1.0)
    cfg = hd.HeadConfig(kind, sched)
    x = np.random.default_rng(0).standard_normal((10, 2))
    out = hd.f_st(cfg, gaussian_oracle_net(cfg), x, 0.2, 0.7)
    np.testing.assert_allclose(out, gaussian_flow_map(sched, x, 0.2, 0.7), rtol=1e-12)


@pytest.mark.parametrize("kind,sk", ORACLE_CASES)
@pytest.mark.parametrize("n_steps", [1, 2, 4])
def test_oracle_sampler_matches_target_moments(kind, sk, n_steps):
    sched = FlowSchedule(sk, t_max=1.0)
    cfg = hd.HeadConfig(kind, sched)
    times = schedule_times(SamplerSchedule(UNIFORM, n_steps), sched)
    x = pushforward_sample(cfg, gaussian_oracle_net(cfg), times, 400_000, 2, np.random.default_rng(n_steps))
    assert np.max(np.abs(x.mean(axis=0))) < 5e-3
    assert np.max(np.abs(np.cov(x.T) - 0.25 * np.eye(2))) < 5e-3


@pytest.mark.parametrize("kind,sk", ORACLE_CASES)
def test_extra_grid_points_do_not_change_output(kind, sk):
    sched = FlowSchedule(sk, t_max=1.0)
    cfg = hd.HeadConfig(kind, sched)
    net = gaussian_oracle_net(cfg)
    x0 = 0.5 * np.random.default_rng(1).standard_normal((100_000, 2))
    one = pushforward_sample(cfg, net, [1.0, 0.0], 0, 2, None, x_init=x0)
    many = pushforward_sample(cfg, net, [1.0, 0.9, 0.55, 0.3, 0.1, 0.0], 0, 2, None, x_init=x0)
    assert np.max(np.abs(one - many)) < 1e-10
    assert abs(one.var() - many.var()) < 5e-3


def test_oracle_requires_s_conditioning():
    with pytest.raises(SamplerError):
        gaussian_oracle_net(hd.HeadConfig(hd.EULER_FM, OT, second_cond=hd.COND_GAP))


# --- sample files ---------------------------------------------------------------


def test_sample_file_round_trip(tmp_path):
    X = np.random.default_rng(0).standard_normal((7, 2))
    p = tmp_path / "s.txt"
    write_samples(p, X)
    Y, lab = read_samples(p)
    np.testing.assert_array_equal(X, Y)
    assert lab is None
    write_samples(p, X, np.arange(7))
    Y, lab = read_samples(p)
    np.testing.assert_array_equal(X, Y)
    np.testing.assert_array_equal(lab, np.arange(7))
    write_samples(p, np.zeros((0, 2)))
    assert read_samples(p)[0].shape == (0, 2)


def test_sample_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a header\n")
    with pytest.raises(SamplerError):
        read_samples(p)
    p.write_text("# D=2 N=3\n0 1\n")
    with pytest.raises(SamplerError):
        read_samples(p)
