"""Loss, optimizer, and the training loop.

The sequence loss is masked cross-entropy over teacher-forced positions,
averaged over unmasked slots; padding (everything after each sample's EOS)
contributes nothing. Weight decay is an explicit squared-norm penalty over
matrix-kind parameters only; layernorm gains, biases, and the embedding
table are exempt. Adam with bias correction drives updates, with optional
global-norm gradient clipping; the learning rate drops by a fixed factor
for the tail fraction of the run.
"""

import time

import numpy as np

from . import charset
from . import tensor as T
from .errors import ConfigError, TrainingError
from .tensor import Tape, Tensor


def build_targets(labels, dtype=np.int64):
    """Pad label strings to a [B, L] index array with EOS, plus a float
    mask that covers each sample's characters and its first EOS.
    """
    seqs = [charset.encode_target(s) for s in labels]
    length = max(len(s) for s in seqs)
    targets = np.full((len(seqs), length), charset.EOS, dtype=dtype)
    mask = np.zeros((len(seqs), length), dtype=np.float64)
    for i, s in enumerate(seqs):
        targets[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return targets, mask


def masked_cross_entropy(logits, targets, mask):
    """Mean negative log-likelihood of `targets` under row softmaxes of
    `logits` [B, L, C], counting only mask==1 positions. The max shift is
    a constant, so the gradient is the exact softmax-minus-onehot form.
    """
    b, length, n_classes = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (b, length) or mask.shape != (b, length):
        raise ConfigError(
            f"targets/mask {targets.shape}/{np.shape(mask)} do not match logits {logits.shape}"
        )
    dtype = logits.data.dtype
    shift = Tensor(logits.data.max(axis=-1, keepdims=True), dtype=dtype)
    z = logits - shift
    lse = T.log(T.rsum(T.exp(z), axis=-1, keepdims=True))
    logp = z - lse
    onehot = np.zeros((b, length, n_classes), dtype=dtype)
    bi, li = np.meshgrid(np.arange(b), np.arange(length), indexing="ij")
    onehot[bi, li, targets] = 1.0
    picked = T.rsum(logp * Tensor(onehot, dtype=dtype), axis=-1)
    mask_t = Tensor(np.asarray(mask, dtype=dtype), dtype=dtype)
    count = float(np.asarray(mask).sum())
    if count <= 0:
        raise ConfigError("cross entropy mask selects no positions")
    return T.scale(T.rsum(picked * mask_t), -1.0 / count)


def l2_penalty(params):
    """Sum of squared entries over matrix-kind parameters."""
    terms = [T.rsum(t * t) for _, t in params if t.kind == "matrix"]
    if not terms:
        raise ConfigError("no matrix parameters to decay")
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def global_norm(grads):
    return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))


def clip_gradients(params, clip):
    """Scale every gradient by clip/norm when the global norm exceeds
    `clip`. Returns the pre-clip norm. clip <= 0 disables clipping.
    """
    norm = global_norm([t.grad for _, t in params])
    if clip > 0 and norm > clip:
        factor = clip / norm
        for _, t in params:
            t.grad *= factor
    return norm


def check_finite_grads(params, step):
    for name, t in params:
        if not np.all(np.isfinite(t.grad)):
            raise TrainingError(f"non-finite gradient in {name!r} at step {step}")


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.data, dtype=np.float64) for _, t in self.params]
        self.v = [np.zeros_like(t.data, dtype=np.float64) for _, t in self.params]

    def step(self, lr):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad.astype(np.float64)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data -= update.astype(p.data.dtype)


def lr_at(cfg, step):
    """Step is 1-based; the rate drops by lr_drop once past the
    drop_fraction point of the run.
    """
    if step > cfg.drop_fraction * cfg.steps:
        return cfg.lr * cfg.lr_drop
    return cfg.lr


def evaluate(model, images, labels, batch=32):
    """Exact-match accuracy of greedy decoding over a labeled set."""
    hits = 0
    for start in range(0, len(labels), batch):
        chunk = images[start:start + batch]
        trace = model.recognize(Tensor(chunk.astype(model.dtype), dtype=model.dtype))
        for row, label in zip(trace.tokens, labels[start:start + batch]):
            if charset.decode(row) == label:
                hits += 1
    return hits / len(labels)


def train(model, images, labels, cfg, log_path=None, eval_images=None,
          eval_labels=None, progress=None):
    """Run the optimization loop. Returns a list of per-step records
    (step, lr, ce, l2, total, elapsed_s) plus the early-stop step (0 when
    it ran to the end).

    Early stopping: when cfg.early_stop_acc > 0, greedy accuracy on the
    eval set (default: the training set) is measured every eval_every
    steps and the loop exits once the threshold is met.
    """
    cfg.validate()
    params = model.params()
    leaves = [t for _, t in params]
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    history = []
    stopped_at = 0
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if log:
        log.write("step\tlr\tce\tl2\ttotal\telapsed_s\n")
    t0 = time.monotonic()
    try:
        for step in range(1, cfg.steps + 1):
            idx = rng.choice(n, size=min(cfg.batch, n), replace=n < cfg.batch)
            batch_imgs = Tensor(images[idx].astype(model.dtype), dtype=model.dtype)
            targets, mask = build_targets([labels[i] for i in idx])
            with Tape() as tape:
                logits = model.forward_train(batch_imgs, targets, rng)
                ce = masked_cross_entropy(logits, targets, mask)
                if cfg.l2 > 0:
                    l2 = l2_penalty(params)
                    loss = ce + T.scale(l2, cfg.l2)
                    l2_val = float(l2.item())
                else:
                    loss = ce
                    l2_val = 0.0
            tape.backward(leaves=leaves)
            check_finite_grads(params, step)
            clip_gradients(params, cfg.clip)
            lr = lr_at(cfg, step)
            opt.step(lr)
            rec = (step, lr, float(ce.item()), l2_val, float(loss.item()),
                   time.monotonic() - t0)
            history.append(rec)
            if log:
                log.write("%d\t%.8g\t%.8g\t%.8g\t%.8g\t%.3f\n" % rec)
                log.flush()
            if progress:
                progress(rec)
            if cfg.early_stop_acc > 0 and step % cfg.eval_every == 0:
                acc = evaluate(
                    model,
                    images if eval_images is None else eval_images,
                    labels if eval_labels is None else eval_labels,
                )
                if acc >= cfg.early_stop_acc:
                    stopped_at = step
                    break
    finally:
        if log:
            log.close()
    return history, stopped_at
