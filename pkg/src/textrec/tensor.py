"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (float32 by default, float64 in gradient-check
mode). Gradients are recorded on an explicit Tape: while a tape is active,
every differentiable operation appends a node holding its inputs, its output
and a backward rule. The tape is rebuilt on every forward pass, so graphs
with data-dependent control flow (the decoder's EOS-terminated loop) need no
special handling. Nodes are appended in execution order, which is already a
topological order, so the backward sweep is a single reversed walk that
visits each node exactly once.

A tape and the tensors recorded on it belong to one thread; independent
passes on independent tapes may run concurrently.
"""

import threading

import numpy as np

from .errors import ShapeError

_tls = threading.local()


def active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """N-dimensional float array, optionally participating in a tape.

    `kind` classifies parameters for weight decay ('matrix' decays; 'gain',
    'bias' and 'embed' are exempt). It is None for non-parameter tensors.
    """

    __slots__ = ("data", "requires_grad", "grad", "kind")

    def __init__(self, data, requires_grad=False, dtype=np.float32, kind=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.kind = kind

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def backward(self, seed=None, leaves=None):
        """Accumulate gradients through the recorded graph.

        `seed` is the gradient of the final output (default: ones). Sets
        `.grad` on every requires_grad tensor reached by the sweep; tensors
        in `leaves` that the graph never touched receive exact zeros.
        """
        if not self.nodes:
            if leaves:
                for leaf in leaves:
                    leaf.grad = np.zeros_like(leaf.data)
            return
        out = self.nodes[-1].output
        if seed is None:
            seed_arr = np.ones_like(out.data)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=out.dtype)
            if seed_arr.shape != out.data.shape:
                raise ShapeError(
                    f"seed shape {seed_arr.shape} does not match tape output shape {out.data.shape}"
                )
        grads = {id(out): seed_arr.copy()}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                acc = grads.get(id(inp))
                if acc is None:
                    grads[id(inp)] = gi.copy()
                else:
                    acc += gi
        tensors = {id(out): out}
        for node in self.nodes:
            for inp in node.inputs:
                tensors[id(inp)] = inp
            tensors[id(node.output)] = node.output
        for key, g in grads.items():
            t = tensors[key]
            if t.requires_grad:
                t.grad = g
        if leaves:
            for leaf in leaves:
                if id(leaf) not in grads:
                    leaf.grad = np.zeros_like(leaf.data)


def record(inputs, out_data, backward):
    """Wrap an op result in a Tensor, recording it if a tape is listening.

    `backward(grad_out) -> per-input gradient arrays (None for skips)`.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(tuple(inputs), out, backward))
    return out


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _broadcastable(a_shape, b_shape):
    # trailing-dimension rule: align right, each pair equal or 1
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if da != db and da != 1 and db != 1:
            return False
    return True


def unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting trailing-dimension broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, fwd, bwd_a, bwd_b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast")
    out_data = fwd(a.data, b.data)

    def backward(g):
        return (
            unbroadcast(bwd_a(g, a.data, b.data), a.shape),
            unbroadcast(bwd_b(g, a.data, b.data), b.shape),
        )

    return record((a, b), out_data, backward)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a, s):
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    s = a.data.dtype.type(s)
    return record((a,), a.data * s, lambda g: (g * s,))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record((a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return record((a,), out, lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return record((a,), out, lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    return record((a,), np.log(a.data), lambda g: (g / a.data,))


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)
    return record((a,), out, lambda g: (g * (a.data > 0),))


def matmul(a, b):
    """Matrix product of the last two axes; leading axes broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    if not _broadcastable(a.shape[:-2], b.shape[:-2]):
        raise ShapeError(f"matmul batch extents do not broadcast: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record((a, b), out_data, backward)


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(ax % ndim for ax in axis)
    for ax in axes:
        if ax >= ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
    return axes


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def rsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if isinstance(axis, int) and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return record((a,), np.asarray(out), lambda g: (_expand(g, a.shape, axes, keepdims).copy(),))


def rmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if isinstance(axis, int) and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return record(
        (a,),
        np.asarray(out),
        lambda g: (_expand(g, a.shape, axes, keepdims) / count,),
    )


def rmax(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if isinstance(axis, int) and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.max(axis=axes, keepdims=keepdims)
    out_keep = a.data.max(axis=axes, keepdims=True)

    def backward(g):
        mask = (a.data == out_keep).astype(a.dtype)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (_expand(g, a.shape, axes, keepdims) * mask,)

    return record((a,), np.asarray(out), backward)


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return record((a,), out, lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != ax and d != t.shape[i] for i, d in enumerate(ref.shape)
        ):
            raise ShapeError(f"cannot concat shapes {[t.shape for t in tensors]} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    offsets = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=ax))

    return record(tuple(tensors), out, backward)


def split(a, m, axis=-1):
    """Split into m equal parts along `axis`; concat(split(x, m)) == x."""
    a = _as_tensor(a)
    ax = axis % a.ndim
    extent = a.shape[ax]
    if extent % m != 0:
        raise ShapeError(f"axis extent {extent} of shape {a.shape} not divisible into {m} parts")
    step = extent // m
    parts = []
    for i in range(m):
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)
        part_data = a.data[sl].copy()

        def backward(g, sl=sl):
            full = np.zeros_like(a.data)
            full[sl] = g
            return (full,)

        parts.append(record((a,), part_data, backward))
    return parts


def softmax(a, axis=-1):
    """Stable softmax along `axis`."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return record((a,), out, backward)
