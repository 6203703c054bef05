"""Kernels, the grouped V-statistic MMD used by the training loss, and a few
checkers for (conditional) positive definiteness.

Kernel math is written against :class:`imm.netcore.Tensor` so the same code
serves the differentiable loss and plain numpy evaluation.  Plain arrays in
give plain arrays out.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.distance import pdist

from .netcore import Tensor, as_tensor

LAPLACE = "laplace"
RBF = "rbf"
ENERGY = "energy"
PSEUDO_HUBER = "pseudo_huber"
KINDS = (LAPLACE, RBF, ENERGY, PSEUDO_HUBER)


class KernelError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class KernelSpec:
    kind: str = LAPLACE
    c: float = 1.0  # pseudo-Huber scale
    bandwidth: float = 1.0  # RBF only
    dist_floor: float = 1e-8  # Laplace distance floor
    time_weighted: bool = True  # use 1/|c_out(s,t)| as the kernel weight
    dim_normalize: bool = True  # divide the exponent by the point dimension

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel {self.kind!r}")
        if not (self.c > 0 and self.bandwidth > 0 and self.dist_floor > 0):
            raise KernelError("kernel parameters must be positive")


def _sqdist(X: Tensor, Y: Tensor) -> Tensor:
    """Pairwise squared distances (..., M, N) between (..., M, D) and (..., N, D)."""
    m, n, d = X.shape[-2], Y.shape[-2], X.shape[-1]
    lead = X.shape[:-2]
    diff = X.reshape(*lead, m, 1, d) - Y.reshape(*lead, 1, n, d)
    return (diff * diff).sum(axis=-1)


def _expand_weight(wtilde, lead):
    w = np.asarray(wtilde, dtype=np.float64)
    if w.ndim == 0:
        return w
    return np.broadcast_to(w, lead).reshape(lead + (1, 1))


def kernel_matrix(spec: KernelSpec, X, Y, wtilde=1.0):
    """Gram matrix k(X_j, Y_k) with optional leading group axes.

    ``wtilde`` is a scalar or one weight per group.  Returns a Tensor when
    either input is a Tensor, otherwise an ndarray.
    """
    plain = not isinstance(X, Tensor) and not isinstance(Y, Tensor)
    X = as_tensor(np.asarray(X, dtype=np.float64) if not isinstance(X, Tensor) else X)
    Y = as_tensor(np.asarray(Y, dtype=np.float64) if not isinstance(Y, Tensor) else Y)
    if X.ndim < 2 or X.shape[-1] != Y.shape[-1] or X.shape[:-2] != Y.shape[:-2]:
        raise KernelError(f"incompatible point sets {X.shape} and {Y.shape}")
    if not (np.all(np.isfinite(X.data)) and np.all(np.isfinite(Y.data))):
        raise KernelError("non-finite kernel input")
    d = X.shape[-1]
    norm = float(d) if spec.dim_normalize else 1.0
    sq = _sqdist(X, Y)
    if spec.kind in (LAPLACE, RBF):
        w = 1.0 if not spec.time_weighted else _expand_weight(wtilde, X.shape[:-2])
        if spec.kind == LAPLACE:
            # sqrt(max(d^2, eps^2)) == max(d, eps) but stays differentiable at 0
            dist = sq.maximum(spec.dist_floor**2).sqrt()
            out = (dist * (-w / norm)).exp()
        else:
            out = (sq * (-w / (2.0 * norm * spec.bandwidth**2))).exp()
    elif spec.kind == ENERGY:
        out = -sq
    else:
        c = spec.c
        out = c - (sq + c * c).sqrt()
    return out.data if plain else out


def kernel_eval(spec: KernelSpec, x, y, wtilde: float = 1.0) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.ndim != 1:
        raise KernelError("kernel_eval expects two points of equal dimension")
    return float(kernel_matrix(spec, x[None], y[None], wtilde)[0, 0])


def mmd_vstat(spec: KernelSpec, X, Y, wtilde_t=1.0, wtilde_r=None):
    """(1/M^2) sum_jk [k(X_j,X_k) + k(Y_j,Y_k) - 2 k(X_j,Y_k)].

    X holds the online-branch particles and Y the target-branch particles.
    Leading axes are groups; one value per group is returned.  The cross term
    uses the online-side weight ``wtilde_t``.
    """
    if wtilde_r is None:
        wtilde_r = wtilde_t
    shape_x = X.shape if isinstance(X, Tensor) else np.shape(X)
    shape_y = Y.shape if isinstance(Y, Tensor) else np.shape(Y)
    if len(shape_x) < 2 or shape_x != shape_y:
        raise KernelError(f"mmd_vstat needs equal-size point sets, got {shape_x} and {shape_y}")
    if shape_x[-2] == 0:
        raise KernelError("mmd_vstat needs at least one particle")
    kxx = kernel_matrix(spec, X, X, wtilde_t)
    kyy = kernel_matrix(spec, Y, Y, wtilde_r)
    kxy = kernel_matrix(spec, X, Y, wtilde_t)
    total = kxx + kyy - 2.0 * kxy
    return total.mean(axis=(-2, -1))


def cpd_quadratic_form(spec: KernelSpec, points, coeffs, wtilde: float = 1.0) -> float:
    """sum_ij c_i c_j k(p_i, p_j) for zero-sum coefficients."""
    pts = np.asarray(points, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if c.shape != (pts.shape[0],):
        raise KernelError("one coefficient per point required")
    if abs(c.sum()) > 1e-12:
        raise KernelError("coefficients must sum to zero")
    K = kernel_matrix(spec, pts, pts, wtilde)
    return float(c @ K @ c)


def laplace_grad(spec: KernelSpec, x, y, wtilde: float = 1.0):
    """Closed-form gradient of the Laplace kernel with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x.shape[-1]
    norm = float(d) if spec.dim_normalize else 1.0
    diff = x - y
    r = np.linalg.norm(diff)
    if r <= spec.dist_floor:
        return np.zeros_like(x)
    return -(wtilde / norm) * np.exp(-wtilde * r / norm) * diff / r


def laplace_grad_norm(spec: KernelSpec, dist: float, wtilde: float, dim: int) -> float:
    """The self-normalized gradient magnitude (w/D) exp(-w r / D)."""
    norm = float(dim) if spec.dim_normalize else 1.0
    return (wtilde / norm) * np.exp(-wtilde * dist / norm)


def median_heuristic(X, Y=None) -> float:
    """Median pairwise Euclidean distance of the pooled sample, 1.0 if zero."""
    parts = [np.asarray(a, dtype=np.float64) for a in (X, Y) if a is not None and np.size(a)]
    if not parts:
        raise KernelError("median_heuristic needs points")
    parts = [p[:, None] if p.ndim == 1 else p for p in parts]
    pooled = np.concatenate(parts, axis=0)
    if len(pooled) < 2:
        raise KernelError("median_heuristic needs at least two points")
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0
