"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor` and, when gradients are being
recorded, a closure mapping the output gradient to one gradient per
parent. Creation order is tracked with a global counter; :func:`backward`
replays adjoints in reverse creation order, which is a valid topological
order because a tensor is always created after its parents.
"""

import contextlib
import itertools

import numpy as np

from . import kernels

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for key encoders)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of the ops reachable from a root, in creation order."""

    def __init__(self, root):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._id)
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)


def backward(root):
    """Populate ``.grad`` on every tensor that requires grad below ``root``."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("root does not require grad")
    tape = Tape(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(tape.nodes):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True).reshape(parent.shape)
            else:
                parent.grad = parent.grad + g
        # dynamic tape: release the graph once adjoints are propagated
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw)


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.01):
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


# ------------------------------------------------------------------ reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _make(out, (a,), bw)


def spatial_pool(x):
    """Mean over the trailing two (spatial) axes."""
    return mean(x, axis=(-2, -1))


def spatiotemporal_pool(x):
    """Mean over the trailing three (T, H, W) axes."""
    return mean(x, axis=(-3, -2, -1))


# ------------------------------------------------------------------- shaping


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index):
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bw)


def upsample_nearest(x, factors):
    """Nearest-neighbour upsample of the trailing ``len(factors)`` axes."""
    factors = tuple(int(f) for f in factors)
    lead = x.ndim - len(factors)
    out = x.data
    for i, f in enumerate(factors):
        if f != 1:
            out = np.repeat(out, f, axis=lead + i)

    def bw(g):
        for i, f in enumerate(factors):
            if f != 1:
                ax = lead + i
                shape = g.shape[:ax] + (g.shape[ax] // f, f) + g.shape[ax + 1 :]
                g = g.reshape(shape).sum(axis=ax + 1)
        return (g,)

    return _make(out, (x,), bw)


# ------------------------------------------------------------ linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        ad = a.data[None, :] if a.ndim == 1 else a.data
        bd = b.data[:, None] if b.ndim == 1 else b.data
        gg = g
        if a.ndim == 1:
            gg = np.expand_dims(gg, -2)
        if b.ndim == 1:
            gg = np.expand_dims(gg, -1)
        ga = gg @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ gg
        if a.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
        if b.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def softmax(x, axis=-1):
    """Overflow-safe softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def l2_normalize(x, axis=-1, eps=None):
    """Unit-normalise along ``axis``.

    With ``eps=None`` a zero vector is an error; otherwise the norm is
    clamped below at ``eps``.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if eps is None:
        if np.any(norm == 0):
            raise ValueError("cannot L2-normalize a zero vector")
        denom = norm
    else:
        denom = np.maximum(norm, eps)
    out = x.data / denom
    clamped = norm < denom

    def bw(g):
        gx = (g - out * (g * out).sum(axis=axis, keepdims=True)) / denom
        if eps is not None and np.any(clamped):
            gx = np.where(clamped, g / denom, gx)
        return (gx,)

    return _make(out, (x,), bw)


# ------------------------------------------------------------------- padding

_PAD_MODES = {"zeros": None, "reflect": "reflect", "replicate": "edge"}


def pad(x, widths, mode="zeros"):
    """Pad each axis by ``widths[i] = (before, after)``.

    ``mode`` is ``"zeros"``, ``"reflect"`` or ``"replicate"``.
    """
    if mode not in _PAD_MODES:
        raise ValueError(f"unknown pad mode {mode!r}; expected one of {sorted(_PAD_MODES)}")
    widths = [tuple(int(v) for v in w) for w in widths]
    if len(widths) != x.ndim:
        raise ValueError(f"pad widths for {len(widths)} axes, tensor has {x.ndim}")
    if mode == "zeros":
        out = np.pad(x.data, widths)
        slices = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
        return _make(out, (x,), lambda g: (g[slices],))

    index_maps = []
    out = x.data
    for ax, (before, after) in enumerate(widths):
        n = x.shape[ax]
        if before == 0 and after == 0:
            index_maps.append(None)
            continue
        if mode == "reflect" and max(before, after) >= n:
            raise ValueError(f"reflect pad {max(before, after)} too large for axis {ax} of extent {n}")
        idx = np.pad(np.arange(n), (before, after), mode=_PAD_MODES[mode])
        index_maps.append(idx)
        out = np.take(out, idx, axis=ax)

    def bw(g):
        for ax in reversed(range(x.ndim)):
            idx = index_maps[ax]
            if idx is None:
                continue
            moved = np.moveaxis(g, ax, 0)
            acc = np.zeros((x.shape[ax],) + moved.shape[1:])
            np.add.at(acc, idx, moved)
            g = np.moveaxis(acc, 0, ax)
        return (g,)

    return _make(out, (x,), bw)


# -------------------------------------------------------------- convolution


def _triple(v):
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"expected an int or a triple, got {v}")
    return v


def _conv3d_valid(x, w, stride):
    N, C, T, H, W = x.shape
    O, Cw, kt, kh, kw = w.shape
    st, sh, sw = stride
    To, Ho, Wo = (T - kt) // st + 1, (H - kh) // sh + 1, (W - kw) // sw + 1
    xd = np.ascontiguousarray(x.data)
    cols = kernels.im2col3d(xd, kt, kh, kw, st, sh, sw, To, Ho, Wo)
    w2 = w.data.reshape(O, -1)
    out = np.matmul(w2, cols).reshape(N, O, To, Ho, Wo)

    def bw(g):
        g2 = g.reshape(N, O, To * Ho * Wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.ascontiguousarray(np.matmul(w2.T, g2))
            gx = kernels.col2im3d(gcols, x.shape, kt, kh, kw, st, sh, sw, To, Ho, Wo)
        return gx, gw

    return _make(out, (x, w), bw)


def conv3d(x, w, bias=None, stride=1, padding=0, pad_mode="zeros"):
    """Cross-correlate ``x`` (N, C, T, H, W) with ``w`` (O, C, kt, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d expects 5-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv3d channel mismatch: input has C={x.shape[1]}, kernel expects {w.shape[1]}")
    if min(stride) < 1 or min(padding) < 0:
        raise ValueError(f"invalid stride {stride} or padding {padding}")
    for name, e, k, p in zip("THW", x.shape[2:], w.shape[2:], padding):
        if e + 2 * p < k:
            raise ValueError(f"conv3d {name} extent {e} with padding {p} is smaller than kernel {k}")
    if any(padding):
        x = pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding], mode=pad_mode)
    out = _conv3d_valid(x, w, stride)
    if bias is not None:
        out = add(out, reshape(as_tensor(bias), (1, -1, 1, 1, 1)))
    return out


def conv2d(x, w, bias=None, stride=1, padding=0, pad_mode="zeros"):
    """Cross-correlate ``x`` (N, C, H, W) with ``w`` (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    s = (stride, stride) if isinstance(stride, int) else tuple(stride)
    p = (padding, padding) if isinstance(padding, int) else tuple(padding)
    x5 = reshape(x, (x.shape[0], x.shape[1], 1) + x.shape[2:])
    w5 = reshape(w, (w.shape[0], w.shape[1], 1) + w.shape[2:])
    out = conv3d(x5, w5, bias, stride=(1,) + s, padding=(0,) + p, pad_mode=pad_mode)
    return reshape(out, (out.shape[0], out.shape[1]) + out.shape[3:])
