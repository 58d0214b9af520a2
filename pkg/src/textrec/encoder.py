"""Feature encoder.

A residual conv backbone turns the rectified image into a grid of visual
features, pooling height 16x and width 8x (the last pool keeps width).
The grid's columns, averaged over the remaining rows, feed a bidirectional
LSTM whose per-column outputs are context features and whose final states
concatenate into a holistic summary vector. Visual and context features
are fused by addition (context broadcasts down each column), flattened
row-major, and offset by a fixed sinusoidal position code.

The `visual_fuse` / `context_fuse` switches replace the respective addend
with zeros without changing any shape.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .lstm import BiLSTM
from .nn import Conv2d, max_pool2d, sinusoidal_positions
from .tensor import Tensor


class ResidualBlock:
    """x + F(x) with F = conv3x3 -> relu -> conv3x3. The shortcut is the
    identity, or a 1x1 projection when the channel count changes. Nothing
    is applied after the add, so zeroing F leaves the input intact.
    """

    def __init__(self, rng, cin, cout, dtype=np.float32):
        self.conv1 = Conv2d(rng, 3, 3, cin, cout, pad=1, dtype=dtype)
        self.conv2 = Conv2d(rng, 3, 3, cout, cout, pad=1, dtype=dtype)
        self.proj = None
        if cin != cout:
            self.proj = Conv2d(rng, 1, 1, cin, cout, pad=0, bias=False, dtype=dtype)

    def __call__(self, x):
        f = self.conv2(T.relu(self.conv1(x)))
        shortcut = self.proj(x) if self.proj is not None else x
        return shortcut + f

    def params(self):
        out = [("conv1." + n, t) for n, t in self.conv1.params()]
        out += [("conv2." + n, t) for n, t in self.conv2.params()]
        if self.proj is not None:
            out += [("proj." + n, t) for n, t in self.proj.params()]
        return out


class Backbone:
    """conv w1, conv w2, pool; then four residual stages: two at w3 and two
    at w4, each a run of blocks plus a trailing conv. Pools follow the
    first three stages; the third pool keeps width (stride 1, right pad).
    """

    def __init__(self, rng, in_c, widths, repeats, dtype=np.float32):
        w1, w2, w3, w4 = widths
        rA, rB, rC, rD = repeats
        self.conv1 = Conv2d(rng, 3, 3, in_c, w1, pad=1, dtype=dtype)
        self.conv2 = Conv2d(rng, 3, 3, w1, w2, pad=1, dtype=dtype)

        def stage(cin, cout, reps):
            blocks = [ResidualBlock(rng, cin, cout, dtype=dtype)]
            blocks += [ResidualBlock(rng, cout, cout, dtype=dtype) for _ in range(reps - 1)]
            return blocks, Conv2d(rng, 3, 3, cout, cout, pad=1, dtype=dtype)

        self.stageA, self.convA = stage(w2, w3, rA)
        self.stageB, self.convB = stage(w3, w3, rB)
        self.stageC, self.convC = stage(w3, w4, rC)
        self.stageD, self.convD = stage(w4, w4, rD)
        self.out_channels = w4

    def __call__(self, x, taps=None):
        """taps, when given, collects the output shape of every layer row
        (convs, pools, stages) in execution order."""

        def tap(t):
            if taps is not None:
                taps.append(tuple(t.shape))
            return t

        x = tap(T.relu(self.conv1(x)))
        x = tap(T.relu(self.conv2(x)))
        x = tap(max_pool2d(x, (2, 2), (2, 2)))
        for blk in self.stageA:
            x = blk(x)
        x = tap(x)
        x = tap(T.relu(self.convA(x)))
        x = tap(max_pool2d(x, (2, 2), (2, 2)))
        for blk in self.stageB:
            x = blk(x)
        x = tap(x)
        x = tap(T.relu(self.convB(x)))
        x = tap(max_pool2d(x, (2, 2), (2, 2)))
        for blk in self.stageC:
            x = blk(x)
        x = tap(x)
        x = tap(T.relu(self.convC(x)))
        x = tap(max_pool2d(x, (2, 2), (2, 1), pad_right=(0, 1)))
        for blk in self.stageD:
            x = blk(x)
        x = tap(x)
        x = tap(T.relu(self.convD(x)))
        return x

    def params(self):
        out = [("conv1." + n, t) for n, t in self.conv1.params()]
        out += [("conv2." + n, t) for n, t in self.conv2.params()]
        for tag, blocks, conv in (
            ("A", self.stageA, self.convA),
            ("B", self.stageB, self.convB),
            ("C", self.stageC, self.convC),
            ("D", self.stageD, self.convD),
        ):
            for i, blk in enumerate(blocks):
                out += [(f"stage{tag}.{i}.{n}", t) for n, t in blk.params()]
            out += [(f"stage{tag}.conv.{n}", t) for n, t in conv.params()]
        return out


class Encoder:
    def __init__(self, rng, cfg, dtype=np.float32):
        self.cfg = cfg
        self.backbone = Backbone(rng, cfg.in_c, cfg.bb_widths, cfg.bb_repeats, dtype=dtype)
        self.bilstm = BiLSTM(rng, cfg.d_visual, cfg.enc_hidden,
                             layer_norm=cfg.layer_norm, dtype=dtype)
        self.pe = Tensor(
            sinusoidal_positions(cfg.n_positions, cfg.d_visual).astype(dtype), dtype=dtype
        )

    def __call__(self, img, mode="eval", rng=None):
        """img [B, H, W, C] -> (features [B, N, d], holistic [B, d])."""
        cfg = self.cfg
        if img.shape[1:] != (cfg.in_h, cfg.in_w, cfg.in_c):
            raise ShapeError(
                f"encoder expects [B, {cfg.in_h}, {cfg.in_w}, {cfg.in_c}], got {img.shape}"
            )
        feat = self.backbone(img)
        b, rows, cols, width = feat.shape
        col_seq = T.rmean(feat, axis=1)
        ctx_seq, holistic = self.bilstm(col_seq, p=cfg.p_enc, mode=mode, rng=rng)
        dtype = feat.data.dtype
        if cfg.visual_fuse:
            vis = feat
        else:
            vis = Tensor(np.zeros(feat.shape, dtype=dtype), dtype=dtype)
        if cfg.context_fuse:
            ctx = T.reshape(ctx_seq, (b, 1, cols, width))
        else:
            ctx = Tensor(np.zeros((b, 1, cols, width), dtype=dtype), dtype=dtype)
        fused = vis + ctx
        flat = T.reshape(fused, (b, rows * cols, width))
        return flat + self.pe, holistic

    def params(self):
        return [("backbone." + n, t) for n, t in self.backbone.params()] + [
            ("bilstm." + n, t) for n, t in self.bilstm.params()
        ]
