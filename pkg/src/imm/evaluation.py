"""Two-sample statistics for judging generated samples against held-out data."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from .kernels import median_heuristic


class EvalError(ValueError):
    pass


def _pts(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _rbf_blocks(X, Y, bandwidth):
    g = 1.0 / (2.0 * bandwidth**2)
    kxx = np.exp(-g * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(-g * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(-g * cdist(X, Y, "sqeuclidean"))
    return kxx, kyy, kxy


def _ustat(kxx, kyy, kxy):
    n, m = len(kxx), len(kyy)
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def two_sample_mmd(X, Y, bandwidth: float | None = None) -> float:
    """Unbiased MMD^2 with an RBF kernel at the median-heuristic bandwidth of
    the pooled sample (unless ``bandwidth`` is given)."""
    X, Y = _pts(X), _pts(Y)
    if len(X) < 2 or len(Y) < 2:
        raise EvalError("two_sample_mmd needs at least two points per side")
    bw = median_heuristic(X, Y) if bandwidth is None else bandwidth
    return _ustat(*_rbf_blocks(X, Y, bw))


@dataclasses.dataclass
class PermutationResult:
    statistic: float
    null: np.ndarray
    p_value: float

    @property
    def null_std(self) -> float:
        return float(np.std(self.null))


def permutation_test(X, Y, n_perm: int, rng: np.random.Generator, bandwidth: float | None = None):
    """Permutation null of the MMD^2 U-statistic; the bandwidth is fixed from
    the pooled sample so all permutations share one kernel."""
    X, Y = _pts(X), _pts(Y)
    pooled = np.concatenate([X, Y])
    bw = median_heuristic(X, Y) if bandwidth is None else bandwidth
    K = np.exp(-cdist(pooled, pooled, "sqeuclidean") / (2.0 * bw**2))
    n = len(X)

    def stat(idx):
        a, b = idx[:n], idx[n:]
        return _ustat(K[np.ix_(a, a)], K[np.ix_(b, b)], K[np.ix_(a, b)])

    observed = stat(np.arange(len(pooled)))
    null = np.array([stat(rng.permutation(len(pooled))) for _ in range(n_perm)])
    p = (1 + np.sum(null >= observed)) / (n_perm + 1)
    return PermutationResult(observed, null, float(p))


def sliced_w1(X, Y, n_proj: int, rng: np.random.Generator) -> float:
    """Mean 1-D Wasserstein-1 over random unit projections."""
    X, Y = _pts(X), _pts(Y)
    if n_proj < 1:
        raise EvalError("need at least one projection")
    if len(X) == 0 or len(Y) == 0:
        raise EvalError("sliced_w1 needs nonempty inputs")
    dirs = rng.standard_normal((n_proj, X.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px, py = X @ dirs.T, Y @ dirs.T
    return float(np.mean([wasserstein_distance(px[:, j], py[:, j]) for j in range(n_proj)]))


def mode_coverage(X, centers, radius: float) -> np.ndarray:
    """Counts per nearest center within ``radius``; the last bin counts the
    unassigned points."""
    X, centers = _pts(X), _pts(centers)
    if len(centers) == 0:
        raise EvalError("need at least one center")
    counts = np.zeros(len(centers) + 1, dtype=np.int64)
    if len(X) == 0:
        return counts
    d = cdist(X, centers)
    nearest = np.argmin(d, axis=1)
    ok = d[np.arange(len(X)), nearest] <= radius
    counts[: len(centers)] = np.bincount(nearest[ok], minlength=len(centers))
    counts[-1] = int((~ok).sum())
    return counts


def mmd2_baseline(sample_ref, n: int, rng: np.random.Generator, n_splits: int = 5) -> float:
    """Reference scale: mean |MMD^2| between two independent data draws of
    size ``n``.  ``sample_ref(n, rng)`` returns points."""
    vals = [abs(two_sample_mmd(sample_ref(n, rng), sample_ref(n, rng))) for _ in range(n_splits)]
    return float(np.mean(vals))


@dataclasses.dataclass
class EvalReport:
    mmd2: float
    mmd2_baseline: float
    sliced_w1: float
    mode_counts: np.ndarray | None
    n_gen: int
    n_data: int

    def to_text(self) -> str:
        lines = [
            f"mmd2={self.mmd2!r}",
            f"mmd2_baseline={self.mmd2_baseline!r}",
            f"sliced_w1={self.sliced_w1!r}",
        ]
        if self.mode_counts is not None:
            lines.append("mode_counts=" + ",".join(str(int(c)) for c in self.mode_counts))
        lines += [f"n_gen={self.n_gen}", f"n_data={self.n_data}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        counts = kv.get("mode_counts")
        return cls(
            mmd2=float(kv["mmd2"]),
            mmd2_baseline=float(kv["mmd2_baseline"]),
            sliced_w1=float(kv["sliced_w1"]),
            mode_counts=None if counts is None else np.array([int(c) for c in counts.split(",")]),
            n_gen=int(kv["n_gen"]),
            n_data=int(kv["n_data"]),
        )
