"""Reverse-mode automatic differentiation over dense row-major arrays.

This module is the numeric substrate for the whole package: a ``Tensor``
wraps a numpy array, a ``Graph`` records operations eagerly while active,
and ``Graph.backward`` replays the tape in reverse, accumulating gradients
additively across fan-out.  A graph is meant to live for one forward /
backward pass and be dropped afterwards.

Conventions:

* Storage is dense ``float32`` or ``float64``; operations never mix the
  two (mixing raises ``TypeError``).  Python scalars and plain arrays
  passed as operands are coerced to the tensor operand's dtype.
* Nothing is recorded unless a ``Graph`` is active (``with Graph() as g``),
  so code outside a graph runs in no-grad inference mode for free.
* Tensors are treated as immutable once constructed and may be read from
  several threads; a ``Graph`` must stay with a single owner thread.
  (The finite-difference checker nudges ``.data`` in place between graph
  builds; that is sanctioned only outside any active graph.)
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Graph",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "relu",
    "leaky_relu",
    "matmul",
    "transpose",
    "reshape",
    "broadcast_to",
    "reduce_sum",
    "reduce_mean",
    "gather_rows",
    "gather_pixels",
    "softmax",
    "conv2d",
    "upsample_nearest",
    "l2_normalize",
    "squared_error",
    "custom_op",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_GRAPH_STACK: list["Graph"] = []


class Tensor:
    """Dense float array with optional gradient tracking.

    ``requires_grad`` marks trainable leaves.  Operation outputs require
    gradients only while a graph is active and some input requires them.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        """Same storage, severed from gradient tracking."""
        return _make(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar; all routing goes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


def _make(data: np.ndarray, requires_grad: bool = False) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires_grad
    return out


def _coerce(value, like: Tensor) -> Tensor:
    """Wrap scalars / arrays as constant tensors of ``like``'s dtype."""
    if isinstance(value, Tensor):
        if value.data.dtype != like.data.dtype:
            raise TypeError(
                f"mixed dtypes in one operation: {value.data.dtype} vs {like.data.dtype}"
            )
        return value
    return _make(np.asarray(value, dtype=like.data.dtype), False)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    raise TypeError("at least one operand must be a Tensor")


class Graph:
    """Eager operation tape for one reverse pass.

    Entering pushes the graph onto a stack; every operation whose inputs
    require gradients records (output, parents, backward closure) on the
    innermost active graph.  ``backward`` walks the tape once, in reverse.
    """

    __slots__ = ("_tape",)

    def __init__(self):
        self._tape: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _GRAPH_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("graph stack corrupted: exited a graph that is not innermost")
        return False

    def __len__(self) -> int:
        return len(self._tape)

    def backward(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

        Fan-out accumulates additively; tensors the loss never touched get
        zero gradients of their own shape.  Raises ``ContractError`` if the
        loss is not a single-element tensor.
        """
        if not isinstance(loss, Tensor):
            raise ContractError("backward needs a Tensor loss")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, bwd in reversed(self._tape):
            gout = grads.get(id(out))
            if gout is None:
                continue
            parent_grads = bwd(gout)
            for parent, grad in zip(parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = grad if held is None else held + grad
        collected = []
        for target in wrt:
            grad = grads.get(id(target))
            if grad is None:
                collected.append(np.zeros_like(target.data))
            else:
                collected.append(np.array(grad, copy=True))
        return collected


def _record(parents: tuple[Tensor, ...], out_data: np.ndarray, bwd: Callable) -> Tensor:
    graph = _GRAPH_STACK[-1] if _GRAPH_STACK else None
    track = graph is not None and any(p.requires_grad for p in parents)
    out = _make(out_data, track)
    if track:
        graph._tape.append((out, parents, bwd))
    return out


def is_recording() -> bool:
    """True while some graph is active."""
    return bool(_GRAPH_STACK)


def custom_op(parents: Iterable[Tensor], out_data: np.ndarray, backward: Callable) -> Tensor:
    """Extension hook: record a hand-written primitive on the active graph.

    ``backward`` maps the output gradient to a tuple of parent gradients
    (``None`` for parents that need none).  The caller owns correctness;
    new primitives should be run through the finite-difference checker.
    """
    return _record(tuple(parents), np.asarray(out_data), backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeezed:
        grad = grad.sum(axis=squeezed, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    need_a, need_b = a.requires_grad, b.requires_grad
    shape_a, shape_b = a.data.shape, b.data.shape

    def bwd(g):
        return (
            _unbroadcast(g, shape_a) if need_a else None,
            _unbroadcast(g, shape_b) if need_b else None,
        )

    return _record((a, b), out, bwd)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    need_a, need_b = a.requires_grad, b.requires_grad
    shape_a, shape_b = a.data.shape, b.data.shape

    def bwd(g):
        return (
            _unbroadcast(g, shape_a) if need_a else None,
            _unbroadcast(-g, shape_b) if need_b else None,
        )

    return _record((a, b), out, bwd)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    need_a, need_b = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g * bd, ad.shape) if need_a else None,
            _unbroadcast(g * ad, bd.shape) if need_b else None,
        )

    return _record((a, b), out, bwd)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data / b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    need_a, need_b = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g / bd, ad.shape) if need_a else None
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape) if need_b else None
        return ga, gb

    return _record((a, b), out, bwd)


def neg(x: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _record((x,), -x.data, bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (alias for ``mul`` with a constant)."""
    return mul(x, factor)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _record((x,), out, bwd)


def log(x: Tensor) -> Tensor:
    xd = x.data

    def bwd(g):
        return (g / xd,)

    return _record((x,), np.log(xd), bwd)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g):
        return (g / (2.0 * out),)

    return _record((x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # exp(-|x|) keeps the intermediate bounded for large |x|.
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _record((x,), out, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _record((x,), np.where(mask, x.data, 0.0).astype(x.data.dtype), bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    mask = xd > 0
    out = np.where(mask, xd, slope * xd).astype(xd.dtype)

    def bwd(g):
        return (np.where(mask, g, slope * g),)

    return _record((x,), out, bwd)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")
    need_a, need_b = a.requires_grad, b.requires_grad

    def bwd(g):
        return (
            g @ bd.T if need_a else None,
            ad.T @ g if need_b else None,
        )

    return _record((a, b), ad @ bd, bwd)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got shape {x.data.shape}")

    def bwd(g):
        return (g.T,)

    return _record((x,), x.data.T.copy(), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None

    def bwd(g):
        return (g.reshape(old),)

    return _record((x,), out, bwd)


def broadcast_to(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    try:
        out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as e:
        raise ShapeError(str(e)) from None

    def bwd(g):
        return (_unbroadcast(g, old),)

    return _record((x,), out, bwd)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-D tensor")
    return axis % ndim


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    xd = x.data
    if axis is None:
        out = xd.sum()

        def bwd(g):
            return (np.full(xd.shape, g, dtype=xd.dtype) if np.ndim(g) == 0 else np.broadcast_to(g, xd.shape),)

        return _record((x,), np.asarray(out), bwd)

    ax = _norm_axis(axis, xd.ndim)
    out = xd.sum(axis=ax, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg, xd.shape),)

    return _record((x,), out, bwd)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    xd = x.data
    if axis is None:
        n = xd.size
        out = xd.mean()

        def bwd(g):
            return (np.broadcast_to(np.asarray(g) / n, xd.shape),)

        return _record((x,), np.asarray(out), bwd)

    ax = _norm_axis(axis, xd.ndim)
    n = xd.shape[ax]
    out = xd.mean(axis=ax, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg / n, xd.shape),)

    return _record((x,), out, bwd)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; gradients scatter back additively."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got shape {xd.shape}")
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("indices must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= xd.shape[0]):
        raise IndexError(f"row index out of range [0, {xd.shape[0]})")
    idx = idx.copy()

    def bwd(g):
        acc = np.zeros_like(xd)
        np.add.at(acc, idx, g)
        return (acc,)

    return _record((x,), xd[idx], bwd)


def gather_pixels(feature_map: Tensor, flat_indices) -> Tensor:
    """Rows of shape (k, channels) gathered from a (channels, h, w) map.

    ``flat_indices`` address spatial locations in row-major order.
    """
    if feature_map.data.ndim != 3:
        raise ShapeError(f"gather_pixels needs a (c, h, w) tensor, got {feature_map.data.shape}")
    c, h, w = feature_map.data.shape
    flat = reshape(feature_map, (c, h * w))
    return gather_rows(transpose(flat), flat_indices)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stabilized softmax along ``axis`` (max-shifted before exponentiation)."""
    xd = x.data
    ax = _norm_axis(axis, xd.ndim)
    shifted = xd - xd.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=ax, keepdims=True)
        return (out * (g - inner),)

    return _record((x,), out, bwd)


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zero",
) -> Tensor:
    """2-D cross-correlation of a (c_in, h, w) input with (c_out, c_in, kh, kw) kernels.

    Output extents follow ``(h + 2*padding - kh) // stride + 1`` (same for
    width); a kernel larger than the padded input is a dimension error.
    ``pad_mode`` is ``"zero"`` or ``"edge"`` (border replication); edge
    padding keeps locally constant regions constant at the boundary
    instead of manufacturing an artificial edge.
    """
    xd, wd = x.data, kernels.data
    if xd.ndim != 3 or wd.ndim != 4:
        raise ShapeError(f"conv2d needs (c,h,w) input and (o,c,kh,kw) kernels, got {xd.shape}, {wd.shape}")
    if wd.shape[1] != xd.shape[0]:
        raise ShapeError(f"kernel input channels {wd.shape[1]} != input channels {xd.shape[0]}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    if pad_mode not in ("zero", "edge"):
        raise ShapeError(f"pad_mode must be 'zero' or 'edge', got {pad_mode!r}")
    c_in, h, w = xd.shape
    c_out, _, kh, kw = wd.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        mode = "edge" if pad_mode == "edge" else "constant"
        padded = np.pad(xd, ((0, 0), (padding, padding), (padding, padding)), mode=mode)
    else:
        padded = xd
    cols = np.empty((c_in, kh, kw, oh, ow), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[:, i : i + stride * oh : stride, j : j + stride * ow : stride]
    cols2 = cols.reshape(c_in * kh * kw, oh * ow)
    wmat = wd.reshape(c_out, c_in * kh * kw)
    out = (wmat @ cols2).reshape(c_out, oh, ow)

    parents: tuple[Tensor, ...]
    if bias is not None:
        bd = bias.data
        if bd.shape != (c_out,):
            raise ShapeError(f"bias must have shape ({c_out},), got {bd.shape}")
        out = out + bd[:, None, None]
        parents = (x, kernels, bias)
    else:
        parents = (x, kernels)

    need_x = x.requires_grad
    need_w = kernels.requires_grad
    need_b = bias is not None and bias.requires_grad

    def bwd(g):
        gmat = g.reshape(c_out, oh * ow)
        grad_w = (gmat @ cols2.T).reshape(wd.shape) if need_w else None
        grad_b = g.sum(axis=(1, 2)) if need_b else None
        grad_x = None
        if need_x:
            dcols = (wmat.T @ gmat).reshape(c_in, kh, kw, oh, ow)
            dpad = np.zeros((c_in, hp, wp), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dpad[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, i, j]
            if not padding:
                grad_x = dpad
            elif pad_mode == "edge":
                # adjoint of border replication: fold each padded cell's
                # gradient onto the border pixel it was copied from
                rows = np.clip(np.arange(hp) - padding, 0, h - 1)
                cols_ = np.clip(np.arange(wp) - padding, 0, w - 1)
                grad_x = np.zeros((c_in, h, w), dtype=xd.dtype)
                np.add.at(grad_x, (slice(None), rows[:, None], cols_[None, :]), dpad)
            else:
                grad_x = dpad[:, padding : padding + h, padding : padding + w]
        if bias is not None:
            return grad_x, grad_w, grad_b
        return grad_x, grad_w

    return _record(parents, out, bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat each spatial cell of a (c, h, w) tensor ``factor`` times per axis."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_nearest needs a (c, h, w) tensor, got {x.data.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ShapeError(f"factor must be a positive integer, got {factor!r}")
    c, h, w = x.data.shape
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)

    def bwd(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return _record((x,), out, bwd)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Rows scaled to unit Euclidean norm; ``eps`` on the norm guards zero rows."""
    norm = sqrt(reduce_sum(mul(x, x), axis=-1, keepdims=True))
    return div(x, add(norm, eps))


def squared_error(a: Tensor, b) -> Tensor:
    """Mean of elementwise squared differences (scalar output)."""
    d = sub(a, b)
    return reduce_mean(mul(d, d))


def assert_finite(x: Tensor, label: str = "tensor") -> Tensor:
    """Debugging guard: raise if any entry is NaN or infinite."""
    if not np.isfinite(x.data).all():
        raise ContractError(f"{label} contains non-finite values")
    return x
