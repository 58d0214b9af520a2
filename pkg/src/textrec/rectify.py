"""Thin-plate-spline rectification.

A small conv net looks at the raw image and predicts K control points in
normalized [0, 1] image coordinates. Those points, matched against a fixed
fiducial layout along the top and bottom edges of the output, define a
thin-plate spline that maps every output pixel to a source location; the
output is bilinearly sampled there.

The spline system is built over the fixed output-side points, so its
matrix is constant and inverted once; the mapping is then linear in the
predicted points, which keeps the whole warp differentiable through plain
matmuls. At initialization the predictor emits the fiducial layout itself,
making the warp exactly the identity.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, TPSSolveError
from .nn import Conv2d, Linear, max_pool2d
from .tensor import Tensor, record


def base_control_points(k=20, margin=0.05):
    """K/2 points along the top edge and K/2 along the bottom, x spaced
    evenly in [margin, 1-margin], y at margin / 1-margin. Rows are (x, y).
    """
    if k < 6 or k % 2 != 0:
        raise ConfigError(f"control point count must be even and >= 6, got {k}")
    xs = np.linspace(margin, 1.0 - margin, k // 2)
    top = np.stack([xs, np.full(k // 2, margin)], axis=1)
    bot = np.stack([xs, np.full(k // 2, 1.0 - margin)], axis=1)
    return np.concatenate([top, bot], axis=0)


def tps_kernel(d2):
    """Radial basis on squared distance: d2 * log(d2), defined as 0 at 0."""
    out = np.zeros_like(d2)
    nz = d2 > 0
    out[nz] = d2[nz] * np.log(d2[nz])
    return out


def tps_system(dst_points):
    """Build and invert the interpolation matrix for fixed dst points.
    Returns the (K+3, K+3) inverse in float64.
    """
    pts = np.asarray(dst_points, dtype=np.float64)
    k = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    kmat = tps_kernel((diff * diff).sum(-1))
    p = np.concatenate([np.ones((k, 1)), pts], axis=1)
    lmat = np.zeros((k + 3, k + 3))
    lmat[:k, :k] = kmat
    lmat[:k, k:] = p
    lmat[k:, :k] = p.T
    try:
        inv = np.linalg.inv(lmat)
    except np.linalg.LinAlgError as e:
        raise TPSSolveError(f"control point layout is degenerate: {e}") from e
    if not np.all(np.isfinite(inv)) or np.abs(lmat @ inv - np.eye(k + 3)).max() > 1e-6:
        raise TPSSolveError("control point layout is numerically singular")
    return inv


def tps_basis(queries, dst_points):
    """Phi matrix [N, K+3]: kernel responses to each dst point plus the
    affine monomials (1, x, y), for query points [N, 2].
    """
    q = np.asarray(queries, dtype=np.float64)
    pts = np.asarray(dst_points, dtype=np.float64)
    diff = q[:, None, :] - pts[None, :, :]
    phi = tps_kernel((diff * diff).sum(-1))
    ones = np.ones((q.shape[0], 1))
    return np.concatenate([phi, ones, q], axis=1)


def output_pixel_grid(out_h, out_w):
    """Normalized [0,1] centers of the output pixels, row-major [H*W, 2]."""
    ys = np.linspace(0.0, 1.0, out_h)
    xs = np.linspace(0.0, 1.0, out_w)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def warp_grid(src_points, linv, phi):
    """Map output pixels into the source image through the spline.

    src_points [B, K, 2] (Tensor), linv [K+3, K+3], phi [N, K+3] ->
    sample locations [B, N, 2] in normalized source coordinates.
    """
    b, k, _ = src_points.shape
    pad = Tensor(np.zeros((b, 3, 2), dtype=src_points.data.dtype),
                 dtype=src_points.data.dtype)
    rhs = T.concat([src_points, pad], axis=1)
    linv_t = Tensor(linv.astype(src_points.data.dtype), dtype=src_points.data.dtype)
    phi_t = Tensor(phi.astype(src_points.data.dtype), dtype=src_points.data.dtype)
    coeff = linv_t @ rhs
    return phi_t @ coeff


def bilinear_sample(img, grid):
    """Sample img [B, H, W, C] at grid [B, N, 2] of normalized (x, y).

    Coordinates map to pixels as px = x * (W - 1); locations outside the
    image clamp to the border. Differentiable in both the image and the
    grid.
    """
    if img.ndim != 4 or grid.ndim != 3 or grid.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample got image {img.shape}, grid {grid.shape}")
    if img.shape[0] != grid.shape[0]:
        raise ShapeError(f"batch mismatch: image {img.shape} vs grid {grid.shape}")
    b, h, w, c = img.shape
    gd = grid.data
    px = np.clip(gd[:, :, 0] * (w - 1), 0.0, w - 1.0)
    py = np.clip(gd[:, :, 1] * (h - 1), 0.0, h - 1.0)
    x0 = np.clip(np.floor(px), 0, w - 2).astype(np.int64) if w > 1 else np.zeros_like(px, np.int64)
    y0 = np.clip(np.floor(py), 0, h - 2).astype(np.int64) if h > 1 else np.zeros_like(py, np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0)[:, :, None]
    fy = (py - y0)[:, :, None]
    bi = np.arange(b)[:, None]
    i00 = img.data[bi, y0, x0]
    i01 = img.data[bi, y0, x1]
    i10 = img.data[bi, y1, x0]
    i11 = img.data[bi, y1, x1]
    top = i00 * (1 - fx) + i01 * fx
    bot = i10 * (1 - fx) + i11 * fx
    # emitted in the image's dtype: the grid may be at higher precision,
    # and that must not leak into everything downstream
    out = (top * (1 - fy) + bot * fy).astype(img.data.dtype, copy=False)

    def backward(g):
        w00 = (1 - fx) * (1 - fy)
        w01 = fx * (1 - fy)
        w10 = (1 - fx) * fy
        w11 = fx * fy
        dimg = np.zeros(b * h * w * c, dtype=img.data.dtype).reshape(-1, c)
        base = bi * h
        for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
            lin = (base + yy) * w + xx
            np.add.at(dimg, lin.ravel(), (g * ww).reshape(-1, c).astype(img.data.dtype, copy=False))
        dimg = dimg.reshape(b, h, w, c)
        # grid gradient: slope of the bilinear surface, zero where clamped
        dpx = ((i01 - i00) * (1 - fy) + (i11 - i10) * fy) * g
        dpy = ((i10 - i00) * (1 - fx) + (i11 - i01) * fx) * g
        raw_x = gd[:, :, 0] * (w - 1)
        raw_y = gd[:, :, 1] * (h - 1)
        in_x = ((raw_x > 0) & (raw_x < w - 1)).astype(gd.dtype)
        in_y = ((raw_y > 0) & (raw_y < h - 1)).astype(gd.dtype)
        dgx = dpx.sum(-1) * (w - 1) * in_x
        dgy = dpy.sum(-1) * (h - 1) * in_y
        return dimg, np.stack([dgx, dgy], axis=-1).astype(gd.dtype, copy=False)

    return record((img, grid), out, backward)


def _logit(p):
    return np.log(p / (1.0 - p))


class LocalizationNet:
    """Conv tower that reads the raw image and emits K control points in
    [0, 1] via a sigmoid. Four 3x3-conv + 2x2-pool stages, so the input
    extents must be divisible by 16. The final layer starts at zero weight
    with its bias set so the initial prediction is exactly `init_points`.
    """

    def __init__(self, rng, in_h, in_w, in_c, init_points,
                 channels=(16, 32, 64, 128), fc_width=256, dtype=np.float32):
        if in_h % 16 or in_w % 16:
            raise ConfigError(
                f"localization input {in_h}x{in_w} must be divisible by 16"
            )
        self.convs = []
        c_prev = in_c
        for c_out in channels:
            self.convs.append(Conv2d(rng, 3, 3, c_prev, c_out, pad=1, dtype=dtype))
            c_prev = c_out
        flat = (in_h // 16) * (in_w // 16) * channels[-1]
        self.fc1 = Linear(rng, flat, fc_width, dtype=dtype)
        k = init_points.shape[0]
        self.fc2 = Linear(rng, fc_width, 2 * k, dtype=dtype)
        self.fc2.w.data[:] = 0.0
        self.fc2.b.data[:] = _logit(np.asarray(init_points, np.float64)).ravel().astype(dtype)
        self.k = k
        self.flat = flat

    def __call__(self, img):
        x = img
        for conv in self.convs:
            x = T.relu(conv(x))
            x = max_pool2d(x, (2, 2), (2, 2))
        x = T.reshape(x, (img.shape[0], self.flat))
        x = T.relu(self.fc1(x))
        x = T.sigmoid(self.fc2(x))
        return T.reshape(x, (img.shape[0], self.k, 2))

    def params(self):
        out = []
        for i, conv in enumerate(self.convs):
            out += [(f"conv{i}.{n}", t) for n, t in conv.params()]
        out += [("fc1." + n, t) for n, t in self.fc1.params()]
        out += [("fc2." + n, t) for n, t in self.fc2.params()]
        return out


class Rectifier:
    """Predict control points, solve the spline, resample the image."""

    def __init__(self, rng, in_h, in_w, in_c=1, out_h=None, out_w=None, k=20,
                 margin=0.05, loc_channels=(16, 32, 64, 128), loc_fc=256,
                 dtype=np.float32):
        self.out_h = out_h or in_h
        self.out_w = out_w or in_w
        self.dst = base_control_points(k, margin)
        self.loc = LocalizationNet(rng, in_h, in_w, in_c, self.dst,
                                   channels=loc_channels, fc_width=loc_fc, dtype=dtype)
        self.linv = tps_system(self.dst)
        self.phi = tps_basis(output_pixel_grid(self.out_h, self.out_w), self.dst)

    def __call__(self, img):
        points = self.loc(img)
        grid = warp_grid(points, self.linv, self.phi)
        flat = bilinear_sample(img, grid)
        out = T.reshape(flat, (img.shape[0], self.out_h, self.out_w, img.shape[3]))
        return out, points

    def params(self):
        return [("loc." + n, t) for n, t in self.loc.params()]
