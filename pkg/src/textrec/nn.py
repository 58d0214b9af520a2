"""Neural building blocks: layernorm, dropout, linear/embedding, conv2d,
max pooling and sinusoidal position encoding.

Parameter-carrying layers are small classes holding Tensors; the math lives
in free functions that register backward rules on the active tape. All
layers take channels-last inputs ([B, H, W, C] for images, [B, D] for
vectors).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, ShapeError
from .tensor import Tensor, record, softmax  # noqa: F401  (softmax re-exported)

LAYERNORM_EPS = 1e-5


def xavier_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def layer_norm(x, gain, eps=LAYERNORM_EPS):
    """Normalize the last axis to zero mean and unit population std, then
    scale by `gain`. The bias term is fixed at zero and carries no parameter.
    """
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeError(f"layer_norm gain width {gain.shape} does not match input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    sigma = np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc / sigma
    out = xhat * gain.data

    def backward(g):
        dxhat = g * gain.data
        dgain = (g * xhat).reshape(-1, gain.shape[-1]).sum(axis=0).reshape(gain.shape)
        dx = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) / sigma
        return dx, dgain

    return record((x, gain), out, backward)


class LayerNorm:
    """Gain-only layernorm parameters (learnable gain, zero fixed bias)."""

    def __init__(self, width, dtype=np.float32):
        self.gain = Tensor(
            np.ones(width, dtype=dtype), requires_grad=True, dtype=dtype, kind="gain"
        )

    def __call__(self, x):
        return layer_norm(x, self.gain)

    def params(self):
        return [("gain", self.gain)]


def dropout(x, p, mode, rng=None):
    """Inverted dropout: in train mode each element is zeroed with
    probability p and survivors are scaled by 1/(1-p); eval mode is the
    identity. p = 0 is the identity in either mode.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype.type)
    keep /= x.dtype.type(1.0 - p)
    mask = Tensor(keep, dtype=x.dtype)
    return x * mask


class Linear:
    """Affine map x @ w + b with x of shape [..., d_in]."""

    def __init__(self, rng, d_in, d_out, bias=True, dtype=np.float32):
        self.w = Tensor(
            xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype),
            requires_grad=True,
            dtype=dtype,
            kind="matrix",
        )
        self.b = None
        if bias:
            self.b = Tensor(
                np.zeros(d_out, dtype=dtype), requires_grad=True, dtype=dtype, kind="bias"
            )

    def __call__(self, x):
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out

    def params(self):
        return [("w", self.w)] + ([("b", self.b)] if self.b is not None else [])


def embed(table, tokens):
    """Row lookup into an embedding table; tokens is an int array."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.shape[0]):
        raise IndexError(
            f"token index out of range [0, {table.shape[0]}): {tokens.min()}..{tokens.max()}"
        )
    out = table.data[tokens]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, tokens, g)
        return (gt,)

    return record((table,), out, backward)


class Embedding:
    def __init__(self, rng, n_rows, width, dtype=np.float32):
        self.table = Tensor(
            xavier_uniform(rng, (n_rows, width), n_rows, width, dtype),
            requires_grad=True,
            dtype=dtype,
            kind="embed",
        )

    def __call__(self, tokens):
        return embed(self.table, tokens)

    def params(self):
        return [("table", self.table)]


def _pad2d(x, pad):
    """Zero padding on the two spatial axes of [B, H, W, C]."""
    if not pad:
        return x
    b, h, w, c = x.shape
    out = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w, :] = x
    return out


def _im2col(x, kh, kw):
    """Copy [B, H, W, C] into [B, Ho, Wo, kh*kw*C] stride-1 windows.

    Built from kh*kw shifted slice copies; these run near memcpy speed
    where a windowed-view gather does not.
    """
    b, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    col = np.empty((b, ho, wo, kh * kw, c), dtype=x.dtype)
    k = 0
    for dy in range(kh):
        for dx in range(kw):
            col[:, :, :, k, :] = x[:, dy:dy + ho, dx:dx + wo, :]
            k += 1
    return col.reshape(b, ho, wo, kh * kw * c)


def conv2d(x, w, pad=0):
    """2-D correlation, stride 1, symmetric zero padding.

    x: [B, H, W, Cin], w: [kh, kw, Cin, Cout] -> [B, Ho, Wo, Cout].
    Bias, when wanted, is a separate broadcast add.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    xd = _pad2d(x.data, pad)
    if xd.shape[1] < kh or xd.shape[2] < kw:
        raise ShapeError(f"conv2d input {x.shape} smaller than kernel {w.shape} at pad {pad}")
    col = _im2col(xd, kh, kw)
    b, ho, wo, _ = col.shape
    hp, wp = xd.shape[1], xd.shape[2]
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (col.reshape(-1, kh * kw * cin) @ wmat).reshape(b, ho, wo, cout)

    def backward(g):
        gmat = g.reshape(-1, cout)
        dw = (col.reshape(-1, kh * kw * cin).T @ gmat).reshape(w.shape)
        # dx: per-offset matmuls into contiguous blocks, then shifted adds;
        # one fused matmul would leave the offset axis strided, which costs
        # more in the adds than it saves in the multiply
        dxp = np.zeros((b, hp, wp, cin), dtype=g.dtype)
        for dy in range(kh):
            for dx in range(kw):
                blk = (gmat @ w.data[dy, dx].T).reshape(b, ho, wo, cin)
                dxp[:, dy:dy + ho, dx:dx + wo, :] += blk
        if pad:
            dxp = dxp[:, pad:-pad, pad:-pad, :]
        return dxp, dw

    return record((x, w), out, backward)


class Conv2d:
    def __init__(self, rng, kh, kw, cin, cout, pad=0, bias=True, dtype=np.float32):
        fan_in, fan_out = kh * kw * cin, kh * kw * cout
        self.w = Tensor(
            xavier_uniform(rng, (kh, kw, cin, cout), fan_in, fan_out, dtype),
            requires_grad=True,
            dtype=dtype,
            kind="matrix",
        )
        self.b = None
        if bias:
            self.b = Tensor(
                np.zeros(cout, dtype=dtype), requires_grad=True, dtype=dtype, kind="bias"
            )
        self.pad = pad

    def __call__(self, x):
        out = conv2d(x, self.w, pad=self.pad)
        if self.b is not None:
            out = out + self.b
        return out

    def params(self):
        return [("w", self.w)] + ([("b", self.b)] if self.b is not None else [])


def max_pool2d(x, kernel, stride, pad_right=(0, 0)):
    """Max pooling over [B, H, W, C]. `pad_right` pads the bottom/right edge
    with -inf so 'same'-style output extents are reachable.
    """
    kh, kw = kernel
    sh, sw = stride
    ph, pw = pad_right
    xd = x.data
    b, h, w, c = xd.shape
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, ph), (0, pw), (0, 0)), constant_values=-np.inf)
    hp, wp = xd.shape[1], xd.shape[2]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d kernel {kernel} too large for input {x.shape}")
    xd = np.ascontiguousarray(xd)
    sb, s1, s2, sc = xd.strides
    win = as_strided(xd, (b, ho, wo, kh, kw, c), (sb, s1 * sh, s2 * sw, s1, s2, sc))
    win = win.reshape(b, ho, wo, kh * kw, c)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        bi, hi, wi, ci = np.indices(arg.shape, sparse=True)
        ky = hi * sh + arg // kw
        kx = wi * sw + arg % kw
        lin = ((bi * hp + ky) * wp + kx) * c + ci
        flat = np.zeros(b * hp * wp * c, dtype=g.dtype)
        np.add.at(flat, np.broadcast_to(lin, arg.shape).ravel(), g.ravel())
        dxp = flat.reshape(b, hp, wp, c)
        return (dxp[:, :h, :w, :],)

    return record((x,), out, backward)


def sinusoidal_positions(n_positions, width, dtype=np.float32):
    """Absolute-position encoding: even channels sin, odd channels cos,
    wavelengths geometric in the channel index with base 10000.
    """
    if width % 2 != 0:
        raise ConfigError(f"position encoding width must be even, got {width}")
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(width // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / width)
    pe = np.empty((n_positions, width), dtype=dtype)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe
