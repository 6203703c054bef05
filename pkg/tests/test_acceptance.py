"""End-to-end acceptance criteria, each reported as one PASS/FAIL line.

Criteria 8 and 9 train the default GaussRing8 model for 20k steps per run
(about 5 minutes each on one core); the M=4 seed-0 run is shared.
"""

import functools
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from imm.config import RunConfig
from imm.data import mode_centers, mode_radius, sample_dataset
from imm.evaluation import mmd2_baseline, mode_coverage, two_sample_mmd
from imm.training import generate, sample_params, stream, train_loop
from imm.verify import run_suites

SUITE_BUDGETS = [
    (1, "algebraic", 10.0),
    (2, "distributional", 60.0),
    (3, "kernels", 30.0),
    (4, "reductions", 10.0),
    (5, "differential", 60.0),
    (6, "failure_case", 10.0),
    (7, "gradients", 60.0),
]

END_TO_END_STEPS = 20_000
N_EVAL = 2000
N_EVAL_PARTICLES = 4000
SEEDS = (0, 1, 2)


@pytest.mark.parametrize("number,suite,budget", SUITE_BUDGETS, ids=[s for _, s, _ in SUITE_BUDGETS])
def test_invariant_suite(number, suite, budget, acceptance):
    (res,) = run_suites(suite)
    ok = res.passed and res.seconds < budget
    failed = [c.line() for c in res.checks if not c.ok]
    acceptance(number, ok, f"{suite} suite, {res.seconds:.1f}s (budget {budget:.0f}s)" + (f"; failing: {failed}" if failed else ""))
    assert res.passed, failed
    assert res.seconds < budget


def end_to_end_run(seed: int, particles: int) -> RunConfig:
    return RunConfig().replace(train={"steps": END_TO_END_STEPS, "particles": particles}, run={"seed": seed})


@functools.lru_cache(maxsize=None)
def trained(seed: int, particles: int):
    run = end_to_end_run(seed, particles)
    t0 = time.perf_counter()
    state = train_loop(run)
    return run, state, time.perf_counter() - t0


def test_end_to_end_convergence(acceptance):
    run, state, seconds = trained(0, 4)
    ds = run.dataset()
    params = sample_params(run, state)
    rng = stream(run.run.seed, END_TO_END_STEPS, 2)
    ref, _ = sample_dataset(ds, N_EVAL, rng)
    baseline = mmd2_baseline(lambda n, r: sample_dataset(ds, n, r)[0], N_EVAL, rng)
    # both step counts start from the same prior draw
    noise_seed = int(rng.integers(2**63))
    two = generate(run, params, N_EVAL, 2, "push", np.random.default_rng(noise_seed))
    eight = generate(run, params, N_EVAL, 8, "push", np.random.default_rng(noise_seed))
    mmd2, mmd8 = two_sample_mmd(two, ref), two_sample_mmd(eight, ref)
    frac = mode_coverage(two, mode_centers(ds), mode_radius(ds))[:8] / N_EVAL
    ok_a = mmd2 <= 3 * baseline
    ok_b = bool(np.all(frac >= 0.05))
    ok_c = mmd8 <= 1.5 * mmd2
    ok_t = seconds <= 30 * 60
    acceptance(
        8,
        ok_a and ok_b and ok_c and ok_t,
        f"2-step MMD2 {mmd2:.3e} vs 3x baseline {3 * baseline:.3e}; min mode mass {frac.min():.3f}; "
        f"8-step MMD2 {mmd8:.3e} vs 1.5x 2-step {1.5 * mmd2:.3e}; train {seconds:.0f}s",
    )
    assert ok_a and ok_b and ok_c and ok_t


def final_mmd(seed: int, particles: int) -> float:
    run, state, _ = trained(seed, particles)
    # identical reference and prior draws for every particle count at a seed
    rng = stream(seed, END_TO_END_STEPS, 3)
    ref, _ = sample_dataset(run.dataset(), N_EVAL_PARTICLES, rng)
    gen = generate(run, sample_params(run, state), N_EVAL_PARTICLES, 2, "push", rng)
    return two_sample_mmd(gen, ref)


def test_particle_count_stability(acceptance):
    rows = [(seed, final_mmd(seed, 4), final_mmd(seed, 1)) for seed in SEEDS]
    wins = sum(m4 <= m1 for _, m4, m1 in rows)
    ok = wins >= 2
    detail = "; ".join(f"seed {s}: M=4 {m4:.3e} M=1 {m1:.3e}" for s, m4, m1 in rows)
    acceptance(9, ok, f"M=4 <= M=1 on {wins}/3 seeds ({detail})")
    assert ok


def test_determinism(tmp_path, acceptance):
    run = RunConfig().replace(train={"steps": 200, "eval_every": 100, "eval_n": 500, "ckpt_every": 100})
    cfg = tmp_path / "det.ini"
    cfg.write_text(run.to_ini())
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        env = dict(os.environ, IMM_OUT_DIR=str(out))
        proc = subprocess.run([sys.executable, "-m", "imm", "--threads", "1", "train", str(cfg)], env=env, capture_output=True)
        assert proc.returncode == 0, proc.stderr.decode()
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    ok = files == sorted(p.name for p in outs[1].iterdir()) and all(same) and "final.imm" in files
    acceptance(10, ok, f"{len(files)} files compared byte-for-byte: {', '.join(files)}")
    assert ok
