"""A small reverse-mode autodiff engine over numpy arrays plus the dense
network, Adam and EMA used as the backbone G_theta.

Only the operations the backbone and the moment-matching loss need are
implemented.  Tensors broadcast like numpy; gradients are reduced back to the
operand shapes on the way down.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import expit


class NetError(RuntimeError):
    """Non-finite values or shape errors inside the network substrate."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the closure that pushes its gradient to its parents."""

    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    # --- graph traversal -------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise NetError("backward() without a seed needs a scalar")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.shape).astype(parent.data.dtype, copy=False)
                parent.grad = g if parent.grad is None else parent.grad + g

    # --- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        a = self.data
        return Tensor(a**p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            ga = g @ b.T if self.requires_grad else None
            gb = a.T @ g if other.requires_grad else None
            return ga, gb

        return Tensor(a @ b, (self, other), back)

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], (self,), back)

    # --- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.data.shape
        return Tensor(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    # --- elementwise -----------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, (self,), lambda g: (g * out,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor(out, (self,), lambda g: (g * 0.5 / out,))

    def abs(self):
        a = self.data
        return Tensor(np.abs(a), (self,), lambda g: (g * np.sign(a),))

    def maximum(self, floor):
        """Elementwise max with a constant; the gradient is zero where clipped."""
        a = self.data
        keep = a > floor
        return Tensor(np.where(keep, a, floor), (self,), lambda g: (g * keep,))

    def silu(self):
        a = self.data
        sig = expit(a)
        return Tensor(a * sig, (self,), lambda g: (g * sig * (1.0 + a * (1.0 - sig)),))

    def relu(self):
        a = self.data
        keep = a > 0
        return Tensor(a * keep, (self,), lambda g: (g * keep,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def data_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# --- time embedding --------------------------------------------------------


def time_embedding(t, c_noise_scale: float, dim: int, max_period: float = 10000.0):
    """Sinusoidal embedding of ``c_noise_scale * t``: sines then cosines over
    geometrically spaced frequencies.  ``t`` may be a scalar or a 1-d array."""
    if dim % 2:
        raise NetError("time embedding dim must be even")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = np.multiply.outer(np.asarray(t, dtype=np.float64) * c_noise_scale, freqs)
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


# --- dense network ---------------------------------------------------------

SILU = "silu"
RELU = "relu"


@dataclasses.dataclass(frozen=True)
class Mlp:
    """Dense backbone G_theta(x_in, noise_s, noise_t, label).

    Two sinusoidal time embeddings each pass through their own 2-layer
    projection and are summed with a learned label embedding (the last row is
    the null token).  The summed embedding is injected additively into every
    hidden layer.  The output layer is zero-initialized.
    """

    in_dim: int = 2
    hidden_dims: tuple = (256, 256, 256)
    out_dim: int = 2
    activation: str = SILU
    time_embed_dim: int = 64
    n_classes: int = 0
    dtype: str = "float32"

    @property
    def null_label(self) -> int:
        return self.n_classes

    def init_params(self, rng: np.random.Generator) -> dict:
        dt = np.dtype(self.dtype)
        e = self.time_embed_dim
        p = {}

        def dense(name, fan_in, fan_out, zero=False):
            bound = 1.0 / math.sqrt(fan_in)
            w = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-bound, bound, (fan_in, fan_out))
            p[name + ".w"] = w.astype(dt)
            p[name + ".b"] = np.zeros(fan_out, dtype=dt)

        for branch in ("temb_t", "temb_s"):
            dense(branch + ".0", e, e)
            dense(branch + ".1", e, e)
        p["label_emb"] = (rng.standard_normal((self.n_classes + 1, e)) * 0.02).astype(dt)
        prev = self.in_dim
        for i, h in enumerate(self.hidden_dims):
            dense(f"hidden.{i}", prev, h)
            dense(f"inject.{i}", e, h)
            prev = h
        dense("out", prev, self.out_dim, zero=True)
        return p

    def _act(self, h):
        return h.silu() if self.activation == SILU else h.relu()

    def forward(self, params: dict, x_in, noise_s, noise_t, labels=None):
        """Run the network.  ``params`` values may be ndarrays or Tensors;
        the result is a Tensor (tracked when any parameter is tracked)."""
        dt = np.dtype(self.dtype)
        P = {k: as_tensor(v) for k, v in params.items()}
        x = Tensor(np.asarray(data_of(x_in), dtype=dt))
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise NetError(f"expected input of shape (n, {self.in_dim}), got {x.shape}")
        n = x.shape[0]
        es = np.broadcast_to(time_embedding(noise_s, 1.0, self.time_embed_dim), (n, self.time_embed_dim))
        et = np.broadcast_to(time_embedding(noise_t, 1.0, self.time_embed_dim), (n, self.time_embed_dim))

        def proj(branch, emb):
            h = Tensor(emb.astype(dt)) @ P[branch + ".0.w"] + P[branch + ".0.b"]
            h = self._act(h)
            return h @ P[branch + ".1.w"] + P[branch + ".1.b"]

        if labels is None:
            labels = np.full(n, self.null_label)
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))
        if np.any(labels < 0) or np.any(labels > self.n_classes):
            raise NetError("label id out of range")
        emb = proj("temb_t", et) + proj("temb_s", es) + P["label_emb"][labels]
        emb = self._act(emb)
        h = x
        for i in range(len(self.hidden_dims)):
            h = h @ P[f"hidden.{i}.w"] + P[f"hidden.{i}.b"] + emb @ P[f"inject.{i}.w"] + P[f"inject.{i}.b"]
            h = self._act(h)
        out = h @ P["out.w"] + P["out.b"]
        if not np.all(np.isfinite(out.data)):
            raise NetError("non-finite network output")
        return out

    def bind(self, params: dict):
        """Close over ``params``: returns net(x_in, noise_s, noise_t, labels)."""

        def net(x_in, noise_s, noise_t, labels=None):
            return self.forward(params, x_in, noise_s, noise_t, labels)

        return net

    def apply(self, params: dict, x_in, noise_s, noise_t, labels=None) -> np.ndarray:
        """Forward pass returning a plain ndarray, no gradient tracking."""
        plain = {k: data_of(v) for k, v in params.items()}
        return self.forward(plain, x_in, noise_s, noise_t, labels).data


def param_count(params: dict) -> int:
    return int(sum(v.size for v in params.values()))


# --- optimizer and EMA ------------------------------------------------------


@dataclasses.dataclass
class OptState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "OptState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **kw,
        )


def adam_step(params: dict, grads: dict, opt: OptState) -> dict:
    """Bias-corrected Adam without weight decay.  Updates ``opt`` in place and
    returns the new parameter dict."""
    for k, g in grads.items():
        if k not in params or np.shape(g) != params[k].shape:
            raise NetError(f"gradient shape mismatch for {k}")
        if not np.all(np.isfinite(g)):
            raise NetError(f"non-finite gradient for {k}")
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    new = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new[k] = p
            continue
        g = np.asarray(g, dtype=p.dtype)
        m = opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g
        v = opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g
        step = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        new[k] = (p - step).astype(p.dtype)
    return new


@dataclasses.dataclass
class EmaState:
    shadow: dict
    rate: float = 0.9999

    @classmethod
    def from_params(cls, params: dict, rate: float = 0.9999) -> "EmaState":
        return cls({k: v.copy() for k, v in params.items()}, rate)


def ema_update(ema: EmaState, params: dict) -> EmaState:
    r = ema.rate
    for k, p in params.items():
        sh = ema.shadow[k]
        ema.shadow[k] = (r * sh + (1.0 - r) * p).astype(sh.dtype)
    return ema
