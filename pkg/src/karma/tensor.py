"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a `Tensor`: a C-contiguous
float64 ndarray plus an optional gradient slot. Operations record a tape
(parent links and a backward closure per node); ``Tensor.backward`` on a
scalar loss walks the tape once in reverse topological order and
accumulates gradients into every reachable tensor with ``requires_grad``.

Forward outputs are checked for NaN/Inf (a `NumericError`, never silent);
set ``karma.tensor.CHECK_FINITE = False`` to disable the check.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class NumericError(FloatingPointError):
    """A forward op produced NaN/Inf from finite inputs, or a gradient went bad."""


CHECK_FINITE = True

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / metrics)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _asarray(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    return np.ascontiguousarray(a)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # Gradients are never mutated in place anywhere in the package, so
        # aliasing a producer's buffer here is safe and avoids copies.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Populate gradients of every reachable tensor with requires_grad.

        The loss must be scalar. The tape is consumed: closures and parent
        links are dropped as nodes are visited.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None:
                node._bwd(node.grad)
            node._bwd = None
            node._parents = ()

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, op: str) -> np.ndarray:
    if CHECK_FINITE and not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite values produced by {op}")
    return out


def node(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str = "op") -> Tensor:
    """Create a tape node. ``bwd(grad_out)`` must accumulate into parents.

    Extension ops (e.g. the B-spline basis) build nodes through this hook
    instead of reaching into Tensor internals.
    """
    out = Tensor(_check(np.ascontiguousarray(data), op))
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient over broadcast axes back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return node(a.data + b.data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return node(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return node(a.data * b.data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return node(a.data / b.data, (a, b), bwd, "div")


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    p = float(p)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * p * np.power(a.data, p - 1.0))

    return node(np.power(a.data, p), (a,), bwd, "power")


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return node(out_data, (a,), bwd, "exp")


def log(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return node(np.log(a.data), (a,), bwd, "log")


def absolute(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return node(np.abs(a.data), (a,), bwd, "abs")


# -- reductions and shape ops ----------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g / count, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg / count, a.shape).copy())

    return node(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd, "mean")


def reshape(a, *shape) -> Tensor:
    a = _wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return node(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a, *axes) -> Tensor:
    a = _wrap(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return node(a.data.transpose(axes), (a,), bwd, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(sl)]))

    return node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd, "concat")


# -- activations ----------------------------------------------------------------


def relu(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return node(np.maximum(a.data, 0.0), (a,), bwd, "relu")


def silu(a) -> Tensor:
    a = _wrap(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * sig * (1.0 + a.data * (1.0 - sig)))

    return node(a.data * sig, (a,), bwd, "silu")


def activation(a, kind: str) -> Tensor:
    if kind == "silu":
        return silu(a)
    if kind == "relu":
        return relu(a)
    raise ValueError(f"unknown activation kind {kind!r}")


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return node(y, (a,), bwd, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logz

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return node(y, (a,), bwd, "log_softmax")


# -- linear algebra ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return node(a.data @ b.data, (a, b), bwd, "matmul")


# -- spatial ops --------------------------------------------------------------------


def _resolve_pad(padding, k: int) -> int:
    if padding == "same":
        return (k - 1) // 2
    pad = int(padding)
    if pad < 0:
        raise ValueError("padding must be >= 0")
    return pad


def conv2d(x, kernel, mode: str = "standard", stride: int = 1, padding="same") -> Tensor:
    """2-D convolution (cross-correlation) over [B, C, H, W].

    ``mode`` selects the kernel layout: ``standard`` [F, C, kh, kw],
    ``depthwise`` [C, kh, kw] (one filter per channel), ``pointwise`` [F, C].
    """
    x, kernel = _wrap(x), _wrap(kernel)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape

    if mode == "pointwise":
        if kernel.ndim != 2 or kernel.shape[1] != c:
            raise ShapeError(f"pointwise kernel [F,C] mismatch: {kernel.shape} vs C={c}")
        f = kernel.shape[0]
        xm = x.data.reshape(b, c, h * w)
        y = np.einsum("fc,bcn->bfn", kernel.data, xm, optimize=True).reshape(b, f, h, w)

        def bwd(g):
            gm = g.reshape(b, f, h * w)
            if x.requires_grad:
                dx = np.einsum("fc,bfn->bcn", kernel.data, gm, optimize=True)
                x._accumulate(dx.reshape(b, c, h, w))
            if kernel.requires_grad:
                kernel._accumulate(np.einsum("bfn,bcn->fc", gm, xm, optimize=True))

        return node(y, (x, kernel), bwd, "conv2d(pointwise)")

    if mode == "depthwise":
        if kernel.ndim != 3 or kernel.shape[0] != c:
            raise ShapeError(f"depthwise kernel [C,kh,kw] mismatch: {kernel.shape} vs C={c}")
        kh = kernel.shape[1]
        pad = _resolve_pad(padding, kh)
        y = K.depthwise_fwd(x.data, kernel.data, stride, pad)

        def bwd(g):
            dx, dw = K.depthwise_bwd(x.data, kernel.data, g, stride, pad)
            if x.requires_grad:
                x._accumulate(dx)
            if kernel.requires_grad:
                kernel._accumulate(dw)

        return node(y, (x, kernel), bwd, "conv2d(depthwise)")

    if mode == "standard":
        if kernel.ndim != 4 or kernel.shape[1] != c:
            raise ShapeError(f"standard kernel [F,C,kh,kw] mismatch: {kernel.shape} vs C={c}")
        f, _, kh, kw = kernel.shape
        pad = _resolve_pad(padding, kh)
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        cols = K.im2col(x.data, kh, kw, stride, pad)
        wmat = kernel.data.reshape(f, -1)
        y = (cols @ wmat.T).reshape(b, ho, wo, f).transpose(0, 3, 1, 2)

        def bwd(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
            if kernel.requires_grad:
                kernel._accumulate((gmat.T @ cols).reshape(kernel.shape))
            if x.requires_grad:
                x._accumulate(K.col2im(gmat @ wmat, x.shape, kh, kw, stride, pad))

        return node(np.ascontiguousarray(y), (x, kernel), bwd, "conv2d(standard)")

    raise ValueError(f"unknown conv2d mode {mode!r}")


def maxpool2d(x, window: int = 2, stride: int | None = None, padding=0) -> Tensor:
    """Window maximum; backward routes the gradient to the argmax position.

    Extents that do not divide evenly are padded on the bottom/right with
    -inf so no input row or column is silently dropped.
    """
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be [B,C,H,W], got {x.shape}")
    stride = window if stride is None else stride
    pad = _resolve_pad(padding, window)
    b, c, h, w = x.shape
    # extents are expected to divide the stride; otherwise pad with -inf so
    # the trailing rows/columns still reach a window
    extra_h = -h % stride
    extra_w = -w % stride
    data = x.data
    if extra_h or extra_w:
        data = np.pad(
            data, ((0, 0), (0, 0), (0, extra_h), (0, extra_w)), constant_values=-np.inf
        )
    y, idx = K.maxpool_fwd(data, window, stride, pad)

    def bwd(g):
        if x.requires_grad:
            dx = K.maxpool_bwd(idx, g, data.shape, window, stride, pad)
            if extra_h or extra_w:
                dx = np.ascontiguousarray(dx[:, :, :h, :w])
            x._accumulate(dx)

    return node(y, (x,), bwd, "maxpool2d")


def upsample2d(x, factor: int) -> Tensor:
    """Nearest-neighbor upsampling: each value becomes a factor x factor block."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2d input must be [B,C,H,W], got {x.shape}")
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return reshape(x, x.shape)
    b, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)))

    return node(y, (x,), bwd, "upsample2d")


# -- normalization --------------------------------------------------------------------


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return node(y, (x, gamma, beta), bwd, "layernorm")


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over [B, C, H, W].

    In training mode batch statistics are used and the running buffers are
    updated in place (biased variance throughout); in eval mode the running
    statistics are used.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm input must be [B,C,H,W], got {x.shape}")
    c = x.shape[1]
    gsh = (1, c, 1, 1)
    axes = (0, 2, 3)

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(gsh)) * inv.reshape(gsh)
    y = xhat * gamma.data.reshape(gsh) + beta.data.reshape(gsh)

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data.reshape(gsh)
            if training:
                m1 = gx.mean(axis=axes, keepdims=True)
                m2 = (gx * xhat).mean(axis=axes, keepdims=True)
                x._accumulate(inv.reshape(gsh) * (gx - m1 - xhat * m2))
            else:
                x._accumulate(gx * inv.reshape(gsh))

    return node(y, (x, gamma, beta), bwd, "batchnorm")


def normalize(x, kind: str, **kw) -> Tensor:
    if kind == "layernorm":
        return layernorm(x, **kw)
    if kind == "batchnorm":
        return batchnorm(x, **kw)
    raise ValueError(f"unknown normalization kind {kind!r}")
