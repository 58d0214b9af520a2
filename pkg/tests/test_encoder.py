"""Backbone and encoder wiring: shapes, residual identity, fusion
switches, holistic summary, gradients."""

import numpy as np
import pytest

from gradcheck import check_scalar_fn
from textrec import tensor as T
from textrec.config import ModelConfig, desk_model
from textrec.encoder import Backbone, Encoder, ResidualBlock
from textrec.errors import ShapeError
from textrec.nn import sinusoidal_positions
from textrec.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def t64(a, grad=True):
    return Tensor(np.asarray(a, np.float64), requires_grad=grad, dtype=np.float64)


def micro_cfg(**kw):
    base = dict(
        in_h=16, in_w=32, in_c=1,
        loc_channels=(2, 2, 2, 2), loc_fc=8,
        bb_widths=(2, 3, 4, 8), bb_repeats=(1, 1, 1, 1),
        enc_hidden=4, n_heads=2, attn_exponent=1.0, dec_embed=6,
        p_enc=0.0, p_dec=0.0,
    )
    base.update(kw)
    return ModelConfig(**base).validate()


# ------------------------------------------------------------ residual


def test_residual_zero_f_is_identity():
    blk = ResidualBlock(rng(1), 5, 5, dtype=np.float64)
    for conv in (blk.conv1, blk.conv2):
        conv.w.data[:] = 0.0
        conv.b.data[:] = 0.0
    x = t64(rng(2).standard_normal((2, 4, 6, 5)))
    out = blk(x)
    assert np.array_equal(out.data, x.data)


def test_residual_zero_f_projects_on_channel_change():
    blk = ResidualBlock(rng(3), 3, 6, dtype=np.float64)
    for conv in (blk.conv1, blk.conv2):
        conv.w.data[:] = 0.0
        conv.b.data[:] = 0.0
    x = t64(rng(4).standard_normal((1, 4, 4, 3)))
    out = blk(x)
    assert blk.proj is not None
    assert np.allclose(out.data, x.data @ blk.proj.w.data[0, 0], atol=1e-12)


def test_residual_adds_f():
    blk = ResidualBlock(rng(5), 4, 4, dtype=np.float64)
    x = t64(rng(6).standard_normal((1, 3, 3, 4)))
    f_only = blk.conv2(T.relu(blk.conv1(x)))
    assert np.allclose(blk(x).data, x.data + f_only.data, atol=1e-12)


def test_residual_grad_fd():
    blk = ResidualBlock(rng(7), 2, 4, dtype=np.float64)
    x = t64(rng(8).standard_normal((1, 3, 4, 2)))
    check_scalar_fn(lambda: T.rsum(T.tanh(blk(x))), [x, blk.conv1.w, blk.proj.w])


# ------------------------------------------------------------ backbone


def test_backbone_desk_shape():
    cfg = desk_model()
    bb = Backbone(rng(9), 1, cfg.bb_widths, cfg.bb_repeats)
    out = bb(Tensor(rng(10).random((1, 48, 160, 1)).astype(np.float32)))
    assert out.shape == (1, 3, 20, 128)


def test_backbone_micro_shape_tracks_input():
    cfg = micro_cfg()
    bb = Backbone(rng(11), 1, cfg.bb_widths, cfg.bb_repeats, dtype=np.float64)
    out = bb(t64(rng(12).random((2, 16, 32, 1))))
    assert out.shape == (2, 1, 4, 8)   # h/16, w/8, w4


def test_backbone_grad_fd():
    cfg = micro_cfg()
    bb = Backbone(rng(13), 1, cfg.bb_widths, cfg.bb_repeats, dtype=np.float64)
    x = t64(rng(14).random((1, 16, 32, 1)))
    leaves = [x, bb.conv1.w, bb.stageC[0].conv1.w, bb.convD.b]
    check_scalar_fn(lambda: T.rsum(T.tanh(bb(x))), leaves)


# ------------------------------------------------------------ encoder


def flat_backbone(enc, img):
    feat = enc.backbone(img)
    b, r, c, w = feat.shape
    return feat, T.reshape(feat, (b, r * c, w))


def test_encoder_output_shapes():
    cfg = micro_cfg()
    enc = Encoder(rng(15), cfg, dtype=np.float64)
    v, hol = enc(t64(rng(16).random((2, 16, 32, 1))))
    assert v.shape == (2, cfg.n_positions, cfg.d_visual)
    assert hol.shape == (2, cfg.d_decoder)


def test_visual_only_fusion_is_backbone_plus_positions():
    cfg = micro_cfg(context_fuse=False)
    enc = Encoder(rng(17), cfg, dtype=np.float64)
    img = t64(rng(18).random((1, 16, 32, 1)))
    v, _ = enc(img)
    _, flat = flat_backbone(enc, img)
    assert np.allclose(v.data, flat.data + enc.pe.data, atol=1e-10)


def test_context_only_fusion_tiles_rows():
    cfg = micro_cfg(visual_fuse=False, in_h=32)  # two grid rows
    enc = Encoder(rng(19), cfg, dtype=np.float64)
    img = t64(rng(20).random((1, 32, 32, 1)))
    v, _ = enc(img)
    feat = enc.backbone(img)
    cols = T.rmean(feat, axis=1)
    ctx, _ = enc.bilstm(cols)
    noPE = v.data - enc.pe.data
    rows = noPE.reshape(1, cfg.grid_rows, cfg.grid_cols, cfg.d_visual)
    for r in range(cfg.grid_rows):
        assert np.allclose(rows[0, r], ctx.data[0], atol=1e-10)


def test_both_fusions_off_leaves_position_code():
    cfg = micro_cfg(visual_fuse=False, context_fuse=False)
    enc = Encoder(rng(21), cfg, dtype=np.float64)
    v, hol = enc(t64(rng(22).random((2, 16, 32, 1))))
    pe = sinusoidal_positions(cfg.n_positions, cfg.d_visual)
    assert np.allclose(v.data, np.broadcast_to(pe, v.shape), atol=1e-10)
    # the holistic summary still reflects the image
    assert not np.allclose(hol.data[0], hol.data[1], atol=1e-6)


def test_holistic_comes_from_column_sequence():
    cfg = micro_cfg()
    enc = Encoder(rng(23), cfg, dtype=np.float64)
    img = t64(rng(24).random((1, 16, 32, 1)))
    _, hol = enc(img)
    feat = enc.backbone(img)
    cols = T.rmean(feat, axis=1)
    _, expect = enc.bilstm(cols)
    assert np.allclose(hol.data, expect.data, atol=1e-10)


def test_column_pool_averages_rows():
    cfg = micro_cfg(in_h=32)
    enc = Encoder(rng(25), cfg, dtype=np.float64)
    img = t64(rng(26).random((1, 32, 32, 1)))
    feat = enc.backbone(img)
    cols = T.rmean(feat, axis=1)
    assert np.allclose(cols.data, feat.data.mean(axis=1), atol=1e-12)
    assert cols.shape == (1, cfg.grid_cols, cfg.d_visual)


def test_encoder_rejects_wrong_geometry():
    cfg = micro_cfg()
    enc = Encoder(rng(27), cfg)
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 16, 48, 1), dtype=np.float32)))


def test_encoder_train_dropout_varies():
    cfg = micro_cfg(p_enc=0.3)
    enc = Encoder(rng(28), cfg, dtype=np.float64)
    img = t64(rng(29).random((1, 16, 32, 1)))
    r = np.random.default_rng(0)
    a, _ = enc(img, mode="train", rng=r)
    b, _ = enc(img, mode="train", rng=r)
    assert not np.allclose(a.data, b.data)
    c, _ = enc(img)
    d, _ = enc(img)
    assert np.array_equal(c.data, d.data)


def test_encoder_grad_fd():
    cfg = micro_cfg(bb_widths=(2, 2, 2, 4), enc_hidden=2, bb_repeats=(1, 1, 1, 1))
    enc = Encoder(rng(30), cfg, dtype=np.float64)
    img = t64(rng(31).random((1, 16, 32, 1)))

    def f():
        v, hol = enc(img)
        return T.rsum(T.tanh(v)) + T.rsum(hol * hol)

    leaves = [img, enc.backbone.conv1.w, enc.bilstm.fwd.wx, enc.bilstm.bwd.ln_h.gain]
    check_scalar_fn(f, leaves, tol=2e-4)
