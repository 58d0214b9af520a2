"""Multi-head attention with a general bilinear score.

Each head projects the query vector and the full value sequence into a
shared d_head-wide space, scores every position by the dot product of the
two projections divided by d_head**exponent, and softmaxes the scores into
weights. The head's output mixes that head's slice of the value vectors
(the values are split across heads; only the key projection sees the full
width). Head outputs concatenate back to the value width.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import xavier_uniform
from .tensor import Tensor


def attend(query, values, wq, wk, exponent):
    """Score one head and return its softmax mix weights [B, N].

    query [B, dq], values [B, N, dv], wq [dq, dh], wk [dv, dh]. The caller
    mixes its slice of the values with the returned weights.
    """
    d_head = wq.shape[1]
    q = query @ wq
    keys = values @ wk
    scores = keys @ T.reshape(q, (q.shape[0], d_head, 1))
    scores = T.reshape(scores, (values.shape[0], values.shape[1]))
    scores = T.scale(scores, 1.0 / float(d_head) ** exponent)
    return T.softmax(scores, axis=-1)


class MultiHeadAttention:
    def __init__(self, rng, d_query, d_values, n_heads, exponent, dtype=np.float32):
        if d_values % n_heads != 0:
            raise ConfigError(
                f"value width {d_values} not divisible by {n_heads} heads"
            )
        self.n_heads = n_heads
        self.d_values = d_values
        self.d_head = d_values // n_heads
        self.exponent = float(exponent)
        self.wq = []
        self.wk = []
        for _ in range(n_heads):
            self.wq.append(
                Tensor(
                    xavier_uniform(rng, (d_query, self.d_head), d_query, self.d_head, dtype),
                    requires_grad=True, dtype=dtype, kind="matrix",
                )
            )
            self.wk.append(
                Tensor(
                    xavier_uniform(rng, (d_values, self.d_head), d_values, self.d_head, dtype),
                    requires_grad=True, dtype=dtype, kind="matrix",
                )
            )

    def __call__(self, query, values):
        """query [B, dq], values [B, N, dv] -> (glimpse [B, dv],
        weights [B, n_heads, N]).
        """
        if query.ndim != 2 or values.ndim != 3:
            raise ShapeError(
                f"attention expects query [B, dq] and values [B, N, dv], "
                f"got {query.shape} and {values.shape}"
            )
        if query.shape[0] != values.shape[0]:
            raise ShapeError(
                f"batch mismatch: query {query.shape} vs values {values.shape}"
            )
        if values.shape[2] != self.d_values:
            raise ShapeError(
                f"value width {values.shape} does not match configured {self.d_values}"
            )
        b, n, _ = values.shape
        v_split = T.split(values, self.n_heads, axis=-1)
        mixes = []
        weights = []
        for j in range(self.n_heads):
            w = attend(query, values, self.wq[j], self.wk[j], self.exponent)
            mixed = T.reshape(w, (b, 1, n)) @ v_split[j]
            mixes.append(T.reshape(mixed, (b, self.d_head)))
            weights.append(T.reshape(w, (b, 1, n)))
        return T.concat(mixes, axis=-1), T.concat(weights, axis=1)

    def params(self):
        out = []
        for j in range(self.n_heads):
            out.append((f"head{j}.wq", self.wq[j]))
            out.append((f"head{j}.wk", self.wk[j]))
        return out
