"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

Design rules:

* double precision everywhere, row-major buffers;
* no silent broadcasting: binary ops demand identical shapes, with the
  single exception that a size-1 tensor acts as a scalar. Dedicated ops
  (add_bias, layer_norm, feature_embed) handle the broadcasts a
  transformer actually needs, each with an exact backward rule;
* ops support 2-D operands and, where useful, a leading batch axis;
* every op checks its output for NaN/Inf and raises NumericError, so a
  numeric blow-up is surfaced at the op that produced it;
* recording only happens under an active Tape. With no tape, ops are
  plain numpy (this is eval mode).

Gradients accumulate into ``requires_grad`` leaves across backward
calls; intermediate flow buffers are local to each backward pass, so
backpropagating a sum of two losses equals the sum of two separate
passes.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense float64 array, optionally tracked for differentiation.

    ``grad`` is lazily allocated (zeros) the first time a backward pass
    reaches the tensor; ``zero_grad`` resets it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(arr) if requires_grad else None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A named trainable tensor. ``decay`` marks it for weight decay."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str, decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.decay = bool(decay)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, decay={self.decay})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_ACTIVE = threading.local()


def _tape_stack():
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed ops; append order is topological.

    Use as a context manager around the forward computation, then call
    ``backward(loss)``. A tape and its tensors belong to one execution
    context; build a fresh tape per training step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _add(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.nodes.append(_Node(out, inputs, vjp))
        self._produced.add(id(out))
        out._tape = self

    def tracks(self, t: Tensor) -> bool:
        """Whether gradient flows into ``t`` on this tape."""
        return t.requires_grad or id(t) in self._produced

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Repeated calls without zeroing keep accumulating. Flow buffers
        for intermediates are private to the pass.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.requires_grad and id(loss) not in self._produced:
            loss.grad += np.ones_like(loss.data)
        for node in reversed(self.nodes):
            out_grad = flows.pop(id(node.out), None)
            if out_grad is None:
                continue
            grads = node.vjp(out_grad)
            for t, g in zip(node.inputs, grads):
                if g is None:
                    continue
                if t.requires_grad:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g.reshape(t.data.shape)
                elif id(t) in self._produced:
                    acc = flows.get(id(t))
                    flows[id(t)] = g if acc is None else acc + g


def backward(loss: Tensor):
    """Backward pass on the tape that produced ``loss``."""
    if loss._tape is None:
        raise ShapeError("loss was not produced under a recording tape")
    loss._tape.backward(loss)


def _finite_or_raise(arr: np.ndarray, op: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced a non-finite value")


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], make_vjp) -> Tensor:
    """Wrap an op result; record it with its vjp if a tape is active.

    ``make_vjp`` is called lazily (only when recording) with the active
    tape, so eval-mode forward passes pay no closure cost.
    """
    _finite_or_raise(data, op)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None:
        tape._add(out, inputs, make_vjp(tape))
    return out


# ---------------------------------------------------------------------------
# Ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D x 2-D, batched 3-D x 2-D, or 3-D x 3-D.

    Backward: dL/da = dL/dout . b^T and dL/db = a^T . dL/dout, with the
    batch axis summed out when b is shared across the batch.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim > 3 or bd.ndim > 3:
        raise ShapeError(f"matmul supports 2-D/3-D operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} vs {bd.shape}")
    if ad.ndim == 2 and bd.ndim == 3:
        raise ShapeError(f"matmul with 2-D left and 3-D right is not supported: {ad.shape} vs {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul batch sizes differ: {ad.shape} vs {bd.shape}")
    data = ad @ bd

    def make_vjp(tape):
        need_a, need_b = tape.tracks(a), tape.tracks(b)

        def vjp(og):
            ga = gb = None
            if ad.ndim == 2 and bd.ndim == 2:
                if need_a:
                    ga = og @ bd.T
                if need_b:
                    gb = ad.T @ og
            elif bd.ndim == 2:  # (B,m,k) @ (k,n)
                if need_a:
                    ga = og @ bd.T
                if need_b:
                    gb = np.tensordot(ad, og, axes=([0, 1], [0, 1]))
            else:  # (B,m,k) @ (B,k,n)
                if need_a:
                    ga = og @ np.swapaxes(bd, -1, -2)
                if need_b:
                    gb = np.swapaxes(ad, -1, -2) @ og
            return ga, gb

        return vjp

    return _emit("matmul", data, (a, b), make_vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 dims, got shape {a.shape}")
    data = np.swapaxes(a.data, -1, -2)
    return _emit("transpose", data, (a,), lambda tape: lambda og: (np.swapaxes(og, -1, -2),))


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    """Allow identical shapes or a size-1 operand (scalar broadcast)."""
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op} shapes differ: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of a scalar-broadcast operand."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def make_vjp(tape):
        def vjp(og):
            return _reduce_to(og, a.data.shape), _reduce_to(og, b.data.shape)

        return vjp

    return _emit("add", data, (a, b), make_vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def make_vjp(tape):
        def vjp(og):
            return _reduce_to(og, a.data.shape), _reduce_to(-og, b.data.shape)

        return vjp

    return _emit("sub", data, (a, b), make_vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (same shapes, or a size-1 scalar operand)."""
    _binary_shapes(a, b, "mul")
    data = a.data * b.data

    def make_vjp(tape):
        def vjp(og):
            return _reduce_to(og * b.data, a.data.shape), _reduce_to(og * a.data, b.data.shape)

        return vjp

    return _emit("mul", data, (a, b), make_vjp)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    """Scale by a python float constant (not differentiated through c)."""
    c = float(c)
    data = a.data * c
    return _emit("mul_scalar", data, (a,), lambda tape: lambda og: (og * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of x[..., n]."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias needs x[..., n] and b[n], got {x.shape} and {b.shape}")
    data = x.data + b.data

    def make_vjp(tape):
        axes = tuple(range(x.data.ndim - 1))

        def vjp(og):
            return og, og.sum(axis=axes)

        return vjp

    return _emit("add_bias", data, (x, b), make_vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def make_vjp(tape):
        def vjp(og):
            dot = (og * s).sum(axis=-1, keepdims=True)
            return (s * (og - dot),)

        return vjp

    return _emit("softmax_rows", s, (a,), make_vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x), via erf."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def make_vjp(tape):
        def vjp(og):
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
            return (og * (cdf + x * pdf),)

        return vjp

    return _emit("gelu", data, (a,), make_vjp)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, computed piecewise so large |x| cannot overflow."""
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def make_vjp(tape):
        def vjp(og):
            return (og * s * (1.0 - s),)

        return vjp

    return _emit("sigmoid", s, (a,), make_vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Population variance with eps inside the square root, so a constant
    row maps to gain*0 + bias rather than dividing by zero.
    """
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({n},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def make_vjp(tape):
        lead = tuple(range(x.data.ndim - 1))

        def vjp(og):
            dxhat = og * gain.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            dgain = (og * xhat).sum(axis=lead)
            dbias = og.sum(axis=lead)
            return dx, dgain, dbias

        return vjp

    return _emit("layer_norm", data, (x, gain, bias), make_vjp)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: identity in eval mode, survivors scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout requires an explicit rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask
    return _emit("dropout", data, (x,), lambda tape: lambda og: (og * mask,))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along one of the last two axes."""
    if axis not in (-1, -2):
        raise ShapeError(f"concat supports axis -1 or -2, got {axis}")
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def make_vjp(tape):
        splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

        def vjp(og):
            return tuple(np.split(og, splits, axis=axis))

        return vjp

    return _emit("concat", data, tuple(tensors), make_vjp)


def concat_last_dim(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def slice_last_dim(x: Tensor, start: int, stop: int) -> Tensor:
    """x[..., start:stop], differentiable."""
    n = x.data.shape[-1]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_last_dim bounds [{start}, {stop}) invalid for width {n}")
    data = x.data[..., start:stop]

    def make_vjp(tape):
        def vjp(og):
            full = np.zeros_like(x.data)
            full[..., start:stop] = og
            return (full,)

        return vjp

    return _emit("slice_last_dim", data, (x,), make_vjp)


def select_row(x: Tensor, index: int) -> Tensor:
    """Select one row along axis -2: x[..., index, :]."""
    if x.data.ndim < 2:
        raise ShapeError(f"select_row needs at least 2 dims, got shape {x.shape}")
    m = x.data.shape[-2]
    if not -m <= index < m:
        raise ShapeError(f"select_row index {index} out of range for {m} rows")
    data = x.data[..., index, :]

    def make_vjp(tape):
        def vjp(og):
            full = np.zeros_like(x.data)
            full[..., index, :] = og
            return (full,)

        return vjp

    return _emit("select_row", data, (x,), make_vjp)


def permute_rows(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder rows along axis -2 by ``perm`` (a permutation of 0..m-1)."""
    perm = np.asarray(perm, dtype=np.intp)
    m = x.data.shape[-2]
    if perm.shape != (m,) or not np.array_equal(np.sort(perm), np.arange(m)):
        raise ShapeError(f"permute_rows needs a permutation of 0..{m - 1}")
    data = np.take(x.data, perm, axis=-2)

    def make_vjp(tape):
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(m)

        def vjp(og):
            return (np.take(og, inverse, axis=-2),)

        return vjp

    return _emit("permute_rows", data, (x,), make_vjp)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis -2 (column means): x[..., m, n] -> x[..., n]."""
    if x.data.ndim < 2:
        raise ShapeError(f"mean_rows needs at least 2 dims, got shape {x.shape}")
    m = x.data.shape[-2]
    data = x.data.mean(axis=-2)

    def make_vjp(tape):
        def vjp(og):
            return (np.repeat(np.expand_dims(og, -2), m, axis=-2) / m,)

        return vjp

    return _emit("mean_rows", data, (x,), make_vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    data = x.data.reshape(shape)
    return _emit("reshape", data, (x,), lambda tape: lambda og: (og.reshape(x.data.shape),))


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())
    return _emit("sum_all", data, (x,), lambda tape: lambda og: (np.full(x.data.shape, og.reshape(())),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean())
    return _emit("mean_all", data, (x,), lambda tape: lambda og: (np.full(x.data.shape, og.reshape(()) / n),))


def feature_embed(x: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """Per-feature affine embedding: out[i, j, :] = x[i, j] * w[j, :] + b[j, :].

    ``x`` is raw data (n rows by f features) and is not differentiated;
    w and b hold one d-vector per feature.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or w.data.ndim != 2 or w.data.shape != b.data.shape:
        raise ShapeError(
            f"feature_embed needs x[n, f], w[f, d], b[f, d]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.data.shape[0]:
        raise ShapeError(f"feature count mismatch: x has {x.shape[1]}, w has {w.data.shape[0]}")
    data = x[:, :, None] * w.data[None, :, :] + b.data[None, :, :]

    def make_vjp(tape):
        def vjp(og):
            gw = np.einsum("nf,nfd->fd", x, og)
            gb = og.sum(axis=0)
            return gw, gb

        return vjp

    return _emit("feature_embed", data, (w, b), make_vjp)


def embedding_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup out[i, :] = table[ids[i], :] with scatter-add backward."""
    ids = np.asarray(ids)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeError(f"embedding_rows needs table[v, d] and 1-D ids, got {table.shape} and {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding index out of range for table with {table.data.shape[0]} rows")
    ids = ids.astype(np.intp)
    data = table.data[ids]

    def make_vjp(tape):
        def vjp(og):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, og)
            return (gt,)

        return vjp

    return _emit("embedding_rows", data, (table,), make_vjp)


def repeat_token(v: Tensor, count: int) -> Tensor:
    """Tile a d-vector into a [count, 1, d] token stack (one per sample)."""
    if v.data.ndim != 1:
        raise ShapeError(f"repeat_token needs a 1-D vector, got shape {v.shape}")
    data = np.tile(v.data, (count, 1, 1))

    def make_vjp(tape):
        def vjp(og):
            return (og.sum(axis=(0, 1)),)

        return vjp

    return _emit("repeat_token", data, (v,), make_vjp)


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic zero-argument callable returning a
    scalar Tensor computed from ``params``. Coordinates are subsampled
    per parameter when ``max_coords_per_param`` is set (seeded via
    ``rng``). The error metric per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise ShapeError(f"grad_check requires a scalar-valued f, got shape {out.shape}")
    tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    max_err = 0.0
    for p, g in zip(params, analytic):
        size = p.data.size
        if max_coords_per_param is not None and size > max_coords_per_param:
            coords = np.sort(rng.choice(size, size=max_coords_per_param, replace=False))
        else:
            coords = np.arange(size)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = f().item()
            flat[idx] = orig - eps
            f_minus = f().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = gflat[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
