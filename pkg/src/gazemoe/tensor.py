"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array (float64 by default, float32 optional). Every
differentiable operation records its inputs and a backward rule on the
output tensor; ``backward`` linearizes the recorded graph into a Tape and
propagates adjoints through it once, in reverse order. Gradients
accumulate into ``.grad`` until ``zero_grad`` is called.

Top-k style index selection is deliberately *not* differentiable: the
indexing ops (``take_rows`` etc.) move values around and route gradients
back to the positions they came from, nothing more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional array node in the autodiff graph.

    ``data`` is always a C-contiguous (row-major) numpy array. ``grad``
    is lazily allocated with the same shape. Tensors compare by identity
    so they can key dicts during the backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # set by _make_op for non-leaf tensors
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            _scalar_err(self)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _scalar_err(t):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class TapeOp:
    """One recorded operation: inputs, output, and its backward rule."""

    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Linearized compute graph in topological order.

    Every op's inputs appear before the op itself; the backward pass
    walks the list exactly once, in reverse.
    """

    ops: list[TapeOp]

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        ops: list[TapeOp] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                if node._backward is not None:
                    ops.append(TapeOp(node._parents, node, node._backward))
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        return cls(ops)


def _make_op(out_data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss.

    Populates ``.grad`` on every tensor with ``requires_grad`` reachable
    from ``loss``. Repeated calls without ``zero_grad`` accumulate.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad; nothing to differentiate")
    tape = Tape.trace(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    loss.accumulate_grad(adjoint[id(loss)])
    for op in reversed(tape.ops):
        g = adjoint.pop(id(op.output), None)
        if g is None:
            continue
        parent_grads = op.backward(g)
        for parent, pg in zip(op.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg
        # leaves never appear as tape outputs, so flush their adjoints here
        for parent in op.inputs:
            if parent.requires_grad and parent.is_leaf and id(parent) in adjoint:
                parent.accumulate_grad(adjoint.pop(id(parent)))


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic -------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _make_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make_op(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    return _make_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- reductions and shape ops -----------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make_op(out, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _make_op(out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _make_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _make_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make_op(out, tensors, back)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _make_op(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- activations -------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make_op(out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make_op(out, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make_op(out, (a,), back)


# -- convolution and pooling -------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """[B,C,Hp,Wp] -> [B, oh*ow, C*kh*kw] patch matrix."""
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, oh, ow, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    # [B, oh, ow, C, kh, kw] -> [B, L, C*kh*kw]
    return view.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding.

    x: [B,C,H,W], w: [O,C,kh,kw] -> [B,O,H',W'] with
    H' = (H + 2*pad - kh)//stride + 1.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d stride must be >= 1, got {stride}")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}"
        )
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # [B, L, CK]
    wmat = w.data.reshape(O, -1)  # [O, CK]
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(B, O, oh, ow)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B, oh * ow, O)  # [B, L, O]
        xp_b = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        cols_b = _im2col(xp_b, kh, kw, stride, oh, ow)
        gw = np.einsum("blo,blk->ok", g2, cols_b).reshape(w.shape)
        dcols = g2 @ wmat  # [B, L, CK]
        dcols = dcols.reshape(B, oh, ow, C, kh, kw)
        dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
        # fold: one shifted slice-add per kernel offset
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        return dx, gw

    return _make_op(out, (x, w), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4-d input, got {x.shape}")
    B, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return _make_op(out, (x,), back)


# -- index ops (values move, gradients follow; indices are constants) --


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0: out[i] = x[idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make_op(out, (x,), back)


def put_rows(x: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    """Scatter rows into a zero tensor of ``num_rows`` rows: out[idx[i]] = x[i].

    Indices must be unique; overlapping writes are a caller bug.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((num_rows,) + x.shape[1:], dtype=x.dtype)
    out[idx] = x.data
    return _make_op(out, (x,), lambda g: (g[idx],))


def take_per_row(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 1 per row: out[b, j] = x[b, idx[b, j]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])[:, None]
    out = x.data[rows, idx]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make_op(out, (x,), back)


def put_per_row(x: Tensor, idx: np.ndarray, width: int) -> Tensor:
    """Scatter along axis 1 per row into zeros: out[b, idx[b, j]] = x[b, j]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])[:, None]
    out = np.zeros((x.shape[0], width), dtype=x.dtype)
    out[rows, idx] = x.data
    return _make_op(out, (x,), lambda g: (g[rows, idx],))


# -- gradient verification ---------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_coord: int
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e}) "
            f"at {self.worst_param}[{self.worst_coord}] over {self.n_checked} coordinates"
        )


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-6,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` must be a deterministic scalar function of the given parameter
    tensors (checked by double evaluation). When ``max_coords_per_param``
    is set, a seeded random subset of coordinates is probed per tensor.
    Relative error uses ``|ad - fd| / max(|ad|, |fd|, rel_floor)``.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise ContractError(f"f is not deterministic: {v1!r} != {v2!r}")

    for _, p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    grads = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in params}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = (0.0, "", -1)
    n_checked = 0
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (
            np.arange(n)
            if max_coords_per_param is None or n <= max_coords_per_param
            else rng.choice(n, size=max_coords_per_param, replace=False)
        )
        gflat = grads[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f().item()
            flat[c] = orig - eps
            fm = f().item()
            flat[c] = orig
            fd = (fp - fm) / (2.0 * eps)
            ad = gflat[c]
            rel = abs(ad - fd) / max(abs(ad), abs(fd), rel_floor)
            n_checked += 1
            if rel > worst[0]:
                worst = (rel, name, int(c))
    return GradCheckReport(worst[0], worst[1], worst[2], n_checked, tol)
