"""Command-line entry point: train, sample, eval, verify.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime fault
(including failed verification suites).
"""

from __future__ import annotations

import argparse
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS")

EXIT_OK, EXIT_USAGE, EXIT_FAULT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imm", description="Moment-matching few-step generators on toy data.")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (set before numpy loads)")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from an INI config")
    t.add_argument("config")
    t.add_argument("--resume", help="checkpoint to continue from")

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--sampler", choices=("push", "restart"), default=None)
    s.add_argument("--w", type=float, default=None)
    s.add_argument("--label", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ema", action="store_true", help="sample with the EMA weights")
    s.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="compare a sample file against fresh data")
    e.add_argument("samples")
    e.add_argument("--dataset", default="gauss_ring8")
    e.add_argument("--n-ref", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="run the invariant suites")
    v.add_argument("--filter", default=None)
    return p


def _set_threads(n: int):
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def cmd_train(args) -> int:
    from .checkpoint import load, save
    from .config import RunConfig
    from .training import TrainingFault, init_state, state_from_checkpoint, state_to_checkpoint, train_loop

    run = RunConfig.load(args.config)
    out = run.out_dir()
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(run.to_ini())
    state = state_from_checkpoint(run, load(args.resume)) if args.resume else init_state(run)

    def checkpoint(st, name=None):
        save(os.path.join(out, name or f"ckpt_{st.step:08d}.imm"), state_to_checkpoint(run, st))

    mode = "a" if args.resume else "w"
    with open(os.path.join(out, "metrics.log"), mode, encoding="utf-8") as log:
        try:
            state = train_loop(run, state, log, checkpoint)
        except TrainingFault as fault:
            log.flush()
            checkpoint(fault.state, "last_good.imm")
            print(f"error: training fault at {fault}; last good state saved", file=sys.stderr)
            return EXIT_FAULT
    checkpoint(state, "final.imm")
    print(os.path.join(out, "final.imm"))
    return EXIT_OK


def cmd_sample(args) -> int:
    import numpy as np

    from .checkpoint import load
    from .config import RunConfig
    from .sampling import write_samples
    from .training import generate, state_from_checkpoint

    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    ck = load(args.checkpoint)
    run = RunConfig.from_ini(ck.config_text)
    state = state_from_checkpoint(run, ck)
    params = state.ema.shadow if (args.ema or run.sampler.use_ema) else state.params
    steps = run.sampler.steps if args.steps is None else args.steps
    method = run.sampler.method if args.sampler is None else args.sampler
    w = run.sampler.w if args.w is None else args.w
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed])))
    if args.n == 0:
        X = np.zeros((0, 2))
    else:
        X = generate(run, params, args.n, steps, method, rng, w=w, label=args.label)
    labels = None if args.label is None else np.full(len(X), args.label)
    write_samples(args.out, X, labels)
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .data import GAUSS_RING8, ToyDataset, mode_centers, mode_radius, sample_dataset
    from .evaluation import EvalReport, mmd2_baseline, mode_coverage, sliced_w1, two_sample_mmd
    from .sampling import read_samples

    X, _ = read_samples(args.samples)
    ds = ToyDataset(args.dataset)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed])))
    ref, _ = sample_dataset(ds, args.n_ref, rng)
    n_base = min(len(X), args.n_ref)
    report = EvalReport(
        mmd2=two_sample_mmd(X, ref),
        mmd2_baseline=mmd2_baseline(lambda n, r: sample_dataset(ds, n, r)[0], n_base, rng),
        sliced_w1=sliced_w1(X, ref, 64, rng),
        mode_counts=mode_coverage(X, mode_centers(ds), mode_radius(ds)) if ds.name == GAUSS_RING8 else None,
        n_gen=len(X),
        n_data=args.n_ref,
    )
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    try:
        results = run_suites(args.filter)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    for res in results:
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name} ({res.seconds:.1f}s)")
        for c in res.checks:
            print("    " + c.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAULT


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # bad configs, bad files and domain errors all derive from ValueError
        from .config import ConfigError

        code = EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_FAULT
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
