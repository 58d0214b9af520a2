"""LSTM cell with per-stream layer normalization and recurrent dropout,
plus a bidirectional sequence wrapper.

The cell computes the four gate pre-activations (forget, input, output,
candidate, in that order along the last axis) from up to three input
streams: the step input, the previous hidden state, and an optional
conditioning vector (used by the decoder for the previous character
embedding). With `layer_norm` on, each stream's projection is normalized
separately with its own gain before the streams are summed; the layernorm
bias is fixed at zero. With `layer_norm` off the cell is a plain LSTM with
a single additive bias. Both cell and hidden state get their own fresh
dropout mask every step, and the hidden state is computed from the
already-dropped cell state.

All parameters exist in both modes so checkpoints keep one layout.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import LayerNorm, dropout, xavier_uniform
from .tensor import Tensor


class LSTMCell:
    def __init__(self, rng, d_in, d_hidden, d_cond=None, layer_norm=True, dtype=np.float32):
        def mat(rows, cols):
            return Tensor(
                xavier_uniform(rng, (rows, cols), rows, cols, dtype),
                requires_grad=True,
                dtype=dtype,
                kind="matrix",
            )

        g4 = 4 * d_hidden
        self.d_hidden = d_hidden
        self.layer_norm = layer_norm
        self.wx = mat(d_in, g4)
        self.wh = mat(d_hidden, g4)
        self.b = Tensor(np.zeros(g4, dtype=dtype), requires_grad=True, dtype=dtype, kind="bias")
        self.ln_x = LayerNorm(g4, dtype=dtype)
        self.ln_h = LayerNorm(g4, dtype=dtype)
        self.wc = None
        self.ln_c = None
        if d_cond is not None:
            self.wc = mat(d_cond, g4)
            self.ln_c = LayerNorm(g4, dtype=dtype)

    def __call__(self, x, h_prev, c_prev, cond=None, p=0.0, mode="eval", rng=None):
        if (cond is None) != (self.wc is None):
            raise ShapeError(
                "conditioning input must be passed exactly when the cell was built with one"
            )
        if self.layer_norm:
            pre = self.ln_x(x @ self.wx) + self.ln_h(h_prev @ self.wh)
            if cond is not None:
                pre = pre + self.ln_c(cond @ self.wc)
        else:
            pre = (x @ self.wx) + (h_prev @ self.wh) + self.b
            if cond is not None:
                pre = pre + (cond @ self.wc)
        f, i, o, cand = T.split(pre, 4, axis=-1)
        c_new = T.sigmoid(f) * c_prev + T.sigmoid(i) * T.tanh(cand)
        c_new = dropout(c_new, p, mode, rng)
        h_new = dropout(T.sigmoid(o) * T.tanh(c_new), p, mode, rng)
        return h_new, c_new

    def zero_state(self, batch, dtype=np.float32):
        z = np.zeros((batch, self.d_hidden), dtype=dtype)
        return Tensor(z, dtype=dtype), Tensor(z.copy(), dtype=dtype)

    def params(self):
        out = [("wx", self.wx), ("wh", self.wh), ("b", self.b)]
        out += [("ln_x." + n, t) for n, t in self.ln_x.params()]
        out += [("ln_h." + n, t) for n, t in self.ln_h.params()]
        if self.wc is not None:
            out.append(("wc", self.wc))
            out += [("ln_c." + n, t) for n, t in self.ln_c.params()]
        return out


class BiLSTM:
    """Runs one cell left-to-right and another right-to-left over a
    [B, N, D] sequence. Returns per-step outputs [B, N, 2H] (forward half
    first) and the concatenated final hidden states [B, 2H].
    """

    def __init__(self, rng, d_in, d_hidden, layer_norm=True, dtype=np.float32):
        self.fwd = LSTMCell(rng, d_in, d_hidden, layer_norm=layer_norm, dtype=dtype)
        self.bwd = LSTMCell(rng, d_in, d_hidden, layer_norm=layer_norm, dtype=dtype)

    def __call__(self, x, p=0.0, mode="eval", rng=None):
        if x.ndim != 3:
            raise ShapeError(f"BiLSTM expects [batch, steps, width], got {x.shape}")
        b, n, d = x.shape
        steps = [T.reshape(s, (b, d)) for s in T.split(x, n, axis=1)]

        def run(cell, seq):
            h, c = cell.zero_state(b, dtype=x.data.dtype)
            outs = []
            for xt in seq:
                h, c = cell(xt, h, c, p=p, mode=mode, rng=rng)
                outs.append(h)
            return outs, h

        f_outs, f_last = run(self.fwd, steps)
        b_outs, b_last = run(self.bwd, steps[::-1])
        b_outs = b_outs[::-1]
        per_step = [
            T.reshape(T.concat([f, bk], axis=-1), (b, 1, 2 * self.fwd.d_hidden))
            for f, bk in zip(f_outs, b_outs)
        ]
        return T.concat(per_step, axis=1), T.concat([f_last, b_last], axis=-1)

    def params(self):
        return [("fwd." + n, t) for n, t in self.fwd.params()] + [
            ("bwd." + n, t) for n, t in self.bwd.params()
        ]
