"""Minimal dense tensor library with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (NCHW layout for images). Every differentiable
operation records a backward closure; calling ``backward()`` on a scalar
walks the recorded graph in reverse topological order and accumulates
gradients into the leaves. Gradients add into ``.grad`` (explicit zeroing),
so calling backward twice doubles them.
"""

from __future__ import annotations

import contextlib

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """N-dimensional array participating in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, op="leaf"):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.op = op
        self._prev: tuple = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def _accum(self, g):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self):
        """Reverse pass from a scalar; accumulates into leaf ``.grad``."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._prev:
                node._accum(g)
                continue
            for inp, gi in node._backward(g):
                if not inp.requires_grad:
                    continue
                if inp._prev:
                    if id(inp) in grads:
                        grads[id(inp)] += gi
                    else:
                        grads[id(inp)] = gi.astype(inp.data.dtype, copy=False)
                else:
                    node_g = gi
                    inp._accum(node_g)


def _make(data, prev, backward, op):
    rg = _GRAD_ENABLED and any(p.requires_grad for p in prev)
    out = Tensor(data, op=op)
    out.requires_grad = rg
    if rg:
        out._prev = tuple(prev)
        out._backward = backward
    return out


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# -- elementwise arithmetic -----------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(data, (a, b), backward, "add")


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(data, (a, b), backward, "mul")


def _broadcastable(s1, s2):
    try:
        np.broadcast_shapes(s1, s2)
        return True
    except ValueError:
        return False


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    data = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(data, (a, b), backward, "sub")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: ((a, -g),), "neg")


def power(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def backward(g):
        return ((a, g * p * a.data ** (p - 1)),)

    return _make(data, (a,), backward, "pow")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        return ((a, g / a.data),)

    return _make(data, (a,), backward, "log")


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def backward(g):
        return ((a, g * np.sign(a.data)),)

    return _make(data, (a,), backward, "abs")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(a.dtype)

    def backward(g):
        return ((a, g * inside),)

    return _make(data, (a,), backward, "clamp")


def where(cond: np.ndarray, a: Tensor, b) -> Tensor:
    """Select elementwise from ``a`` where ``cond`` else ``b``.

    ``cond`` is a plain boolean array (not differentiated through).
    """
    b = _wrap(b, a)
    data = np.where(cond, a.data, b.data)

    def backward(g):
        return (
            (a, _unbroadcast(np.where(cond, g, 0.0), a.shape)),
            (b, _unbroadcast(np.where(cond, 0.0, g), b.shape)),
        )

    return _make(data, (a, b), backward, "where")


# -- activations -----------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)

    def backward(g):
        return ((a, g * mask),)

    return _make(a.data * mask, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    # evaluated from the non-overflowing side for numerical stability
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        return ((a, g * data * (1.0 - data)),)

    return _make(data, (a,), backward, "sigmoid")


def pointwise(a: Tensor, f: str) -> Tensor:
    if f == "relu":
        return relu(a)
    if f == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown pointwise function {f!r}")


# -- reductions ------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            gi = np.broadcast_to(g, a.shape)
        elif keepdims:
            gi = np.broadcast_to(g, a.shape)
        else:
            gi = np.broadcast_to(np.expand_dims(g, axis), a.shape)
        return ((a, gi.astype(a.dtype, copy=False).copy()),)

    return _make(data, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def global_avg_pool(a: Tensor) -> Tensor:
    """NCHW -> NC11 spatial mean."""
    return tmean(a, axis=(2, 3), keepdims=True)


def reduce(a: Tensor, kind: str) -> Tensor:
    if kind == "sum":
        return tsum(a)
    if kind == "mean":
        return tmean(a)
    if kind == "global_avg_pool":
        return global_avg_pool(a)
    raise ValueError(f"unknown reduction {kind!r}")


# -- shape ops -------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return _make(data, (a,), backward, "reshape")


def narrow_channels(a: Tensor, start: int, length: int) -> Tensor:
    """Slice channels [start, start+length) of an NCHW tensor."""
    data = a.data[:, start : start + length]

    def backward(g):
        gi = np.zeros_like(a.data)
        gi[:, start : start + length] = g
        return ((a, gi),)

    return _make(data.copy(), (a,), backward, "narrow")


def concat_channels(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels: empty input list")
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ShapeError(
                f"concat_channels: shape {x.shape} incompatible with {base}"
            )
    data = np.concatenate([x.data for x in xs], axis=1)
    offsets = np.cumsum([0] + [x.shape[1] for x in xs])

    def backward(g):
        return tuple(
            (x, g[:, offsets[i] : offsets[i + 1]].copy()) for i, x in enumerate(xs)
        )

    return _make(data, tuple(xs), backward, "concat")


def broadcast_add(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-channel vector (N,C,1,1 or C,1,1) at every spatial position."""
    if x.shape[-3] != v.shape[-3]:
        raise ShapeError(
            f"broadcast_add: channel extents differ ({x.shape} vs {v.shape})"
        )
    return add(x, v)


# -- softmax over spatial positions ---------------------------------------

def softmax_positions(logits: Tensor) -> Tensor:
    """Softmax over all H*W positions of a (..., H, W) map, stabilized."""
    flatshape = logits.shape[:-2] + (-1,)
    z = logits.data.reshape(flatshape)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    data = s.reshape(logits.shape)

    def backward(g):
        gf = g.reshape(flatshape)
        dot = (gf * s).sum(axis=-1, keepdims=True)
        gi = (s * (gf - dot)).reshape(logits.shape)
        return ((logits, gi),)

    return _make(data, (logits,), backward, "softmax_positions")


# -- layer normalization ---------------------------------------------------

def layer_norm(a: Tensor, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance over ``axis`` (no affine)."""
    if a.shape[axis] < 1:
        raise ShapeError("layer_norm: normalized extent must be >= 1")
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv
    n = a.shape[axis]

    def backward(g):
        gxhat = g
        # d/dx of (x - mu) * inv with mu, var functions of x
        gsum = gxhat.sum(axis=axis, keepdims=True)
        xg = (gxhat * data).sum(axis=axis, keepdims=True)
        gi = inv * (gxhat - gsum / n - data * xg / n)
        return ((a, gi),)

    return _make(data, (a,), backward, "layer_norm")


# -- convolution -----------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[
                :, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride
            ]
    return cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, OIkk weight, O bias."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: non-square kernel {w.shape}")
    if ci != c:
        raise ShapeError(
            f"conv2d: input has {c} channels but weight {w.shape} expects {ci}"
        )
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: kernel {w.shape} does not fit input {x.shape} "
            f"with stride={stride} pad={pad}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, oh, ow)  # (N, C, k, k, OH, OW)
    cols2 = cols.reshape(n, c * k * k, oh * ow)
    wmat = w.data.reshape(o, c * k * k)
    out = np.matmul(wmat, cols2).reshape(n, o, oh, ow)
    if b is not None:
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
        out = out + b.data.reshape(1, o, 1, 1)

    def backward(g):
        gmat = g.reshape(n, o, oh * ow)
        gw = np.einsum("nop,ncp->oc", gmat, cols2).reshape(w.shape)
        grads = [(w, gw.astype(w.dtype, copy=False))]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3)).astype(b.dtype, copy=False)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T[None], gmat).reshape(n, c, k, k, oh, ow)
            ph, pw = h + 2 * pad, wd + 2 * pad
            dxp = np.zeros((n, c, ph, pw), dtype=x.dtype)
            for ki in range(k):
                for kj in range(k):
                    dxp[
                        :, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride
                    ] += dcols[:, :, ki, kj]
            dx = dxp[:, :, pad : ph - pad, pad : pw - pad] if pad else dxp
            grads.insert(0, (x, dx))
        return tuple(grads)

    prev = (x, w, b) if b is not None else (x, w)
    return _make(out, prev, backward, "conv2d")


# -- bilinear upsampling ---------------------------------------------------

def _bilinear_plan(n_in: int, factor: int):
    """Source indices/weights for align-corners-false bilinear resize."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    return i0c, i1c, frac


def upsample_bilinear2x(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear upsample by an integer factor, align_corners=False."""
    if factor < 1:
        raise ShapeError("upsample: factor must be >= 1")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    r0, r1, rf = _bilinear_plan(h, factor)
    c0, c1, cf = _bilinear_plan(w, factor)
    rf = rf.astype(x.dtype)[:, None]
    cf = cf.astype(x.dtype)[None, :]
    d = x.data
    top = d[:, :, r0][:, :, :, c0] * (1 - cf) + d[:, :, r0][:, :, :, c1] * cf
    bot = d[:, :, r1][:, :, :, c0] * (1 - cf) + d[:, :, r1][:, :, :, c1] * cf
    out = top * (1 - rf) + bot * rf

    def backward(g):
        gi = np.zeros_like(x.data)
        w00 = (1 - rf) * (1 - cf)
        w01 = (1 - rf) * cf
        w10 = rf * (1 - cf)
        w11 = rf * cf
        rr0 = np.broadcast_to(r0[:, None], (h * factor, w * factor))
        rr1 = np.broadcast_to(r1[:, None], (h * factor, w * factor))
        cc0 = np.broadcast_to(c0[None, :], (h * factor, w * factor))
        cc1 = np.broadcast_to(c1[None, :], (h * factor, w * factor))
        np.add.at(gi, (slice(None), slice(None), rr0, cc0), g * w00)
        np.add.at(gi, (slice(None), slice(None), rr0, cc1), g * w01)
        np.add.at(gi, (slice(None), slice(None), rr1, cc0), g * w10)
        np.add.at(gi, (slice(None), slice(None), rr1, cc1), g * w11)
        return ((x, gi),)

    return _make(out, (x,), backward, "upsample")


# -- operator sugar --------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: add(neg(self), other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.__truediv__ = lambda self, other: (
    mul(self, power(other, -1.0)) if isinstance(other, Tensor) else mul(self, 1.0 / other)
)
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = reshape


# -- gradient checking -----------------------------------------------------

def gradcheck(fn, inputs, h=1e-5, tol=1e-6, coords=None, rng=None):
    """Compare analytic gradients of ``fn(*inputs)`` to central differences.

    ``fn`` must return a scalar Tensor. Inputs should be float64 tensors
    with requires_grad=True. ``coords`` limits the check to that many
    randomly sampled coordinates per input (full check otherwise).
    Returns the max relative error; raises AssertionError above ``tol``.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    analytic = [t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if coords is None:
            idxs = range(flat.size)
        else:
            rng = rng or np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*inputs).item()
            flat[i] = orig - h
            fm = fn(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = ga.reshape(-1)[i]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
    if worst > tol:
        raise AssertionError(f"gradcheck failed: max relative error {worst:.3e} > {tol:g}")
    return worst
