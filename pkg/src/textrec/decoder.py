"""Attention decoder.

The recurrent state starts from the encoder's holistic vector, warmed up
by one LSTM step whose input is a glimpse attended with that vector and
whose conditioning embedding is the start token. Every emission then
attends with the current hidden state, concatenates hidden state and
glimpse (the glimpse slot zeroes under `glimpse_pred=False`), and applies
the output layer; the glimpse also becomes the next step's LSTM input,
with the previous character's embedding as conditioning.

`glimpse_init=False` replaces both the initial hidden state and the warmup
glimpse with zeros and skips the initial attention. All parameters exist
under every switch combination, so checkpoints share one layout.
"""

from dataclasses import dataclass

import numpy as np

from . import charset
from . import tensor as T
from .attention import MultiHeadAttention
from .errors import ShapeError
from .lstm import LSTMCell
from .nn import Embedding, Linear
from .tensor import Tensor


@dataclass
class DecodeTrace:
    """Greedy decode record: emitted tokens [B, T], per-step class scores
    [B, T, n_classes], per-step attention [B, T, heads, N], the warmup
    attention [B, heads, N] or None, and per-sample lengths counting the
    EOS position (capped at T).
    """

    tokens: np.ndarray
    logits: np.ndarray
    attention: np.ndarray
    init_attention: object
    lengths: np.ndarray


class Decoder:
    def __init__(self, rng, cfg, dtype=np.float32):
        self.cfg = cfg
        d = cfg.d_decoder
        self.embed = Embedding(rng, charset.N_TOKENS, cfg.dec_embed, dtype=dtype)
        self.cell = LSTMCell(rng, cfg.d_visual, d, d_cond=cfg.dec_embed,
                             layer_norm=cfg.layer_norm, dtype=dtype)
        self.attn = MultiHeadAttention(rng, d, cfg.d_visual, cfg.n_heads,
                                       cfg.attn_exponent, dtype=dtype)
        self.out = Linear(rng, d + cfg.d_visual, charset.N_CLASSES, dtype=dtype)
        self.dtype = dtype

    # ---------------------------------------------------------------- steps

    def _zeros(self, b, width):
        return Tensor(np.zeros((b, width), dtype=self.dtype), dtype=self.dtype)

    def init_state(self, holistic, values, mode="eval", rng=None):
        """Warmup step consuming the start token. Returns the state after
        step one, the warmup glimpse, and the warmup attention (None when
        the holistic coupling is off).
        """
        cfg = self.cfg
        b = holistic.shape[0]
        if holistic.shape[1] != cfg.d_decoder:
            raise ShapeError(
                f"holistic width {holistic.shape} does not match decoder {cfg.d_decoder}"
            )
        if cfg.glimpse_init:
            h0 = holistic
            g0, attn0 = self.attn(holistic, values)
        else:
            h0 = self._zeros(b, cfg.d_decoder)
            g0 = self._zeros(b, cfg.d_visual)
            attn0 = None
        c0 = self._zeros(b, cfg.d_decoder)
        sos = np.full(b, charset.SOS, dtype=np.int64)
        state = self.cell(g0, h0, c0, cond=self.embed(sos),
                          p=cfg.p_dec, mode=mode, rng=rng)
        return state, g0, attn0

    def emit(self, h, values):
        """Attend with the hidden state and score the classes. Returns the
        fresh glimpse (next step's input), the attention weights, and the
        class logits.
        """
        g, attn_w = self.attn(h, values)
        slot = g if self.cfg.glimpse_pred else self._zeros(g.shape[0], self.cfg.d_visual)
        logits = self.out(T.concat([h, slot], axis=-1))
        return g, attn_w, logits

    def step(self, state, g_prev, y_prev, values, mode="eval", rng=None):
        """Advance one emission: run the LSTM on the previous glimpse and
        previous token, then attend and score.
        """
        h, c = self.cell(g_prev, *state, cond=self.embed(y_prev),
                         p=self.cfg.p_dec, mode=mode, rng=rng)
        g, attn_w, logits = self.emit(h, values)
        return (h, c), g, attn_w, logits

    # ---------------------------------------------------------------- loops

    def teacher_forced_logits(self, values, holistic, targets, mode="train", rng=None):
        """Score every target position with gold history. targets [B, L]
        already carry EOS; position t sees targets[:, :t-1]. Returns
        [B, L, n_classes].
        """
        targets = np.asarray(targets)
        if targets.ndim != 2:
            raise ShapeError(f"targets must be [B, L], got {targets.shape}")
        b, length = targets.shape
        state, g, _ = self.init_state(holistic, values, mode=mode, rng=rng)
        outs = []
        for t in range(length):
            if t == 0:
                h = state[0]
                g, _, logits = self.emit(h, values)
            else:
                state, g, _, logits = self.step(
                    state, g, targets[:, t - 1], values, mode=mode, rng=rng
                )
            outs.append(T.reshape(logits, (b, 1, charset.N_CLASSES)))
        return T.concat(outs, axis=1)

    def greedy_decode(self, values, holistic, max_steps=None, mode="eval", rng=None):
        """Argmax decoding, stopping once every sample emitted EOS or the
        step cap is hit. Argmax ties resolve to the lowest class index.
        """
        cap = max_steps or self.cfg.max_steps
        b = holistic.shape[0]
        state, g, attn0 = self.init_state(holistic, values, mode=mode, rng=rng)
        tokens, scores, attns = [], [], []
        done = np.zeros(b, dtype=bool)
        lengths = np.full(b, cap, dtype=np.int64)
        y = None
        for t in range(cap):
            if t == 0:
                g, attn_w, logits = self.emit(state[0], values)
            else:
                state, g, attn_w, logits = self.step(state, g, y, values,
                                                     mode=mode, rng=rng)
            y = logits.data.argmax(axis=-1)
            newly = (~done) & (y == charset.EOS)
            lengths[newly] = t + 1
            done |= newly
            tokens.append(y)
            scores.append(logits.data.copy())
            attns.append(attn_w.data.copy())
            if done.all():
                break
        return DecodeTrace(
            tokens=np.stack(tokens, axis=1),
            logits=np.stack(scores, axis=1),
            attention=np.stack(attns, axis=1),
            init_attention=None if attn0 is None else attn0.data.copy(),
            lengths=lengths,
        )

    def params(self):
        out = [("embed." + n, t) for n, t in self.embed.params()]
        out += [("cell." + n, t) for n, t in self.cell.params()]
        out += [("attn." + n, t) for n, t in self.attn.params()]
        out += [("out." + n, t) for n, t in self.out.params()]
        return out
