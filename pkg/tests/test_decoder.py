"""Decoder flow: warmup, emission, coupling switches, greedy/forced
consistency, gradients."""

import numpy as np
import pytest

from gradcheck import check_scalar_fn
from textrec import charset
from textrec import tensor as T
from textrec.config import ModelConfig
from textrec.decoder import Decoder
from textrec.errors import ShapeError
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
        p_enc=0.0, p_dec=0.0, max_steps=5,
    )
    base.update(kw)
    return ModelConfig(**base).validate()


def make_inputs(seed, b=2, n=4, dv=8, d=8):
    r = rng(seed)
    return t64(r.standard_normal((b, n, dv))), t64(r.standard_normal((b, d)))


# ------------------------------------------------------------ warmup


def test_warmup_state_uses_holistic_glimpse_and_start_token():
    cfg = micro_cfg()
    dec = Decoder(rng(1), cfg, dtype=np.float64)
    values, hol = make_inputs(2)
    state, g0, attn0 = dec.init_state(hol, values)
    g_ref, attn_ref = dec.attn(hol, values)
    assert np.allclose(g0.data, g_ref.data, atol=1e-12)
    assert np.allclose(attn0.data, attn_ref.data, atol=1e-12)
    sos = np.full(2, charset.SOS)
    c0 = Tensor(np.zeros((2, cfg.d_decoder)), dtype=np.float64)
    h_ref, c_ref = dec.cell(g_ref, hol, c0, cond=dec.embed(sos))
    assert np.allclose(state[0].data, h_ref.data, atol=1e-12)
    assert np.allclose(state[1].data, c_ref.data, atol=1e-12)


def test_warmup_without_holistic_coupling_starts_from_zero():
    cfg = micro_cfg(glimpse_init=False)
    dec = Decoder(rng(3), cfg, dtype=np.float64)
    values, hol = make_inputs(4)
    state, g0, attn0 = dec.init_state(hol, values)
    assert attn0 is None
    assert np.array_equal(g0.data, np.zeros((2, 8)))
    zeros = Tensor(np.zeros((2, cfg.d_decoder)), dtype=np.float64)
    sos = np.full(2, charset.SOS)
    h_ref, _ = dec.cell(g0, zeros, zeros, cond=dec.embed(sos))
    assert np.allclose(state[0].data, h_ref.data, atol=1e-12)
    # the holistic vector no longer influences the warmup
    _, hol2 = make_inputs(99)
    state2, _, _ = dec.init_state(hol2, values)
    assert np.allclose(state[0].data, state2[0].data, atol=1e-12)


def test_warmup_checks_holistic_width():
    dec = Decoder(rng(5), micro_cfg(), dtype=np.float64)
    values, _ = make_inputs(6)
    with pytest.raises(ShapeError):
        dec.init_state(t64(np.zeros((2, 5))), values)


# ------------------------------------------------------------ emission


def test_emit_concatenates_hidden_and_glimpse():
    cfg = micro_cfg()
    dec = Decoder(rng(7), cfg, dtype=np.float64)
    values, hol = make_inputs(8)
    state, _, _ = dec.init_state(hol, values)
    h = state[0]
    g, attn_w, logits = dec.emit(h, values)
    ref = np.concatenate([h.data, g.data], axis=-1) @ dec.out.w.data + dec.out.b.data
    assert np.allclose(logits.data, ref, atol=1e-12)
    assert logits.shape == (2, charset.N_CLASSES)


def test_emit_zeroes_glimpse_slot_when_uncoupled():
    cfg = micro_cfg(glimpse_pred=False)
    dec = Decoder(rng(9), cfg, dtype=np.float64)
    values, hol = make_inputs(10)
    state, _, _ = dec.init_state(hol, values)
    h = state[0]
    g, _, logits = dec.emit(h, values)
    d = cfg.d_decoder
    ref = h.data @ dec.out.w.data[:d] + dec.out.b.data
    assert np.allclose(logits.data, ref, atol=1e-12)
    # the glimpse itself is still produced for the recurrence
    assert not np.allclose(g.data, 0.0)


def test_step_feeds_previous_glimpse_and_token():
    cfg = micro_cfg()
    dec = Decoder(rng(11), cfg, dtype=np.float64)
    values, hol = make_inputs(12)
    state, g, _ = dec.init_state(hol, values)
    y_prev = np.array([3, 40])
    new_state, g2, _, logits = dec.step(state, g, y_prev, values)
    h_ref, c_ref = dec.cell(g, *state, cond=dec.embed(y_prev))
    assert np.allclose(new_state[0].data, h_ref.data, atol=1e-12)
    g_ref, _, logits_ref = dec.emit(h_ref, values)
    assert np.allclose(g2.data, g_ref.data, atol=1e-12)
    assert np.allclose(logits.data, logits_ref.data, atol=1e-12)


# ------------------------------------------------------------ loops


def test_teacher_forced_shape_and_gold_feeding():
    cfg = micro_cfg()
    dec = Decoder(rng(13), cfg, dtype=np.float64)
    values, hol = make_inputs(14)
    targets = np.array([[4, 9, charset.EOS], [17, charset.EOS, charset.EOS]])
    logits = dec.teacher_forced_logits(values, hol, targets, mode="eval")
    assert logits.shape == (2, 3, charset.N_CLASSES)
    # replay by hand: position 2's conditioning token is targets[:, 0]
    state, g, _ = dec.init_state(hol, values)
    g1, _, l1 = dec.emit(state[0], values)
    state2, g2, _, l2 = dec.step(state, g1, targets[:, 0], values)
    _, _, _, l3 = dec.step(state2, g2, targets[:, 1], values)
    assert np.allclose(logits.data[:, 0], l1.data, atol=1e-12)
    assert np.allclose(logits.data[:, 1], l2.data, atol=1e-12)
    assert np.allclose(logits.data[:, 2], l3.data, atol=1e-12)


def test_greedy_matches_teacher_forcing_on_own_output():
    cfg = micro_cfg()
    dec = Decoder(rng(15), cfg, dtype=np.float64)
    values, hol = make_inputs(16)
    trace = dec.greedy_decode(values, hol)
    forced = dec.teacher_forced_logits(values, hol, trace.tokens, mode="eval")
    assert np.allclose(forced.data, trace.logits, atol=1e-10)


def test_greedy_stops_at_eos():
    cfg = micro_cfg()
    dec = Decoder(rng(17), cfg, dtype=np.float64)
    values, hol = make_inputs(18)
    dec.out.w.data[:] = 0.0
    dec.out.b.data[:] = 0.0
    dec.out.b.data[charset.EOS] = 10.0
    trace = dec.greedy_decode(values, hol)
    assert trace.tokens.shape == (2, 1)
    assert np.all(trace.tokens[:, 0] == charset.EOS)
    assert np.all(trace.lengths == 1)


def test_greedy_caps_at_max_steps():
    cfg = micro_cfg(max_steps=4)
    dec = Decoder(rng(19), cfg, dtype=np.float64)
    values, hol = make_inputs(20)
    dec.out.w.data[:] = 0.0
    dec.out.b.data[:] = 0.0
    dec.out.b.data[5] = 10.0  # never EOS
    trace = dec.greedy_decode(values, hol)
    assert trace.tokens.shape == (2, 4)
    assert np.all(trace.tokens == 5)
    assert np.all(trace.lengths == 4)


def test_greedy_tie_breaks_to_lowest_class():
    cfg = micro_cfg()
    dec = Decoder(rng(21), cfg, dtype=np.float64)
    values, hol = make_inputs(22)
    dec.out.w.data[:] = 0.0
    dec.out.b.data[:] = 0.0  # every class scores identically
    trace = dec.greedy_decode(values, hol, max_steps=2)
    assert np.all(trace.tokens == 0)


def test_greedy_trace_attention_shape():
    cfg = micro_cfg()
    dec = Decoder(rng(23), cfg, dtype=np.float64)
    values, hol = make_inputs(24, n=6)
    trace = dec.greedy_decode(values, hol)
    steps = trace.tokens.shape[1]
    assert trace.attention.shape == (2, steps, cfg.n_heads, 6)
    assert trace.init_attention.shape == (2, cfg.n_heads, 6)
    assert np.allclose(trace.attention.sum(-1), 1.0, atol=1e-10)


def test_switch_combinations_keep_param_layout():
    layouts = []
    for gi in (True, False):
        for gp in (True, False):
            for ln in (True, False):
                cfg = micro_cfg(glimpse_init=gi, glimpse_pred=gp, layer_norm=ln)
                dec = Decoder(rng(25), cfg)
                layouts.append(tuple((n, t.shape) for n, t in dec.params()))
    assert len(set(layouts)) == 1


def test_teacher_forced_grad_fd():
    cfg = micro_cfg()
    dec = Decoder(rng(26), cfg, dtype=np.float64)
    values, hol = make_inputs(27)
    targets = np.array([[2, charset.EOS], [8, charset.EOS]])

    def f():
        logits = dec.teacher_forced_logits(values, hol, targets, mode="eval")
        return T.rsum(T.tanh(logits))

    leaves = [values, hol, dec.embed.table, dec.cell.wc, dec.attn.wq[0],
              dec.out.w, dec.cell.wx]
    check_scalar_fn(f, leaves, tol=2e-4)


def test_grad_reaches_warmup_attention_only_when_coupled():
    values, hol = make_inputs(28)
    targets = np.array([[2, charset.EOS], [8, charset.EOS]])
    for gi, expect_nonzero in ((True, True), (False, False)):
        cfg = micro_cfg(glimpse_init=gi)
        dec = Decoder(rng(29), cfg, dtype=np.float64)
        from textrec.tensor import Tape

        with Tape() as tape:
            logits = dec.teacher_forced_logits(values, hol, targets, mode="eval")
            loss = T.rsum(T.tanh(logits))
        tape.backward(leaves=[hol])
        if expect_nonzero:
            assert np.abs(hol.grad).max() > 0
        else:
            assert np.array_equal(hol.grad, np.zeros_like(hol.data))
