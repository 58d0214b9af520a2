"""Command line front end.

Exit codes: 0 success, 1 runtime failure (bad file, config clash,
training blow-up), 2 usage error (argparse).

Model settings come from a preset plus optional `key = value` config file
plus repeatable --set overrides, later sources winning. Training fields
share the same channel under a `train.` prefix, e.g. --set train.lr=1e-3.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import charset, checkpoint, data
from .config import (
    MODEL_PRESETS,
    TrainConfig,
    apply_overrides,
    parse_kv_file,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    InputError,
    ShapeError,
    TPSSolveError,
    TrainingError,
)
from .model import Model
from .train import evaluate, train

_RUNTIME_ERRORS = (
    CheckpointError,
    ConfigError,
    DataError,
    InputError,
    ShapeError,
    TPSSolveError,
    TrainingError,
    OSError,
)


def _collect_overrides(args):
    """File first, then --set pairs; returns (model_kv, train_kv)."""
    pairs = {}
    if getattr(args, "config", None):
        pairs.update(parse_kv_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        pairs[key.strip()] = val.strip()
    model_kv, train_kv = {}, {}
    for key, val in pairs.items():
        if key.startswith("train."):
            train_kv[key[len("train."):]] = val
        else:
            model_kv[key] = val
    return model_kv, train_kv


def _model_cfg_from_args(args):
    model_kv, train_kv = _collect_overrides(args)
    cfg = apply_overrides(MODEL_PRESETS[args.preset](), model_kv).validate()
    tc = apply_overrides(TrainConfig(), train_kv).validate()
    return cfg, tc


def _require_checkpoint_agreement(cfg, args):
    """eval/infer take their architecture from the checkpoint; explicit
    settings are allowed only when they agree with it."""
    model_kv, _ = _collect_overrides(args)
    if not model_kv:
        return
    probe = apply_overrides(cfg, model_kv)
    if probe != cfg:
        bad = [
            f.name
            for f in dataclasses.fields(cfg)
            if getattr(probe, f.name) != getattr(cfg, f.name)
        ]
        raise ConfigError(
            "requested settings disagree with the checkpoint: "
            + ", ".join(bad)
        )


def _load_images(paths, cfg):
    batch = np.empty((len(paths), cfg.in_h, cfg.in_w, cfg.in_c), dtype=np.float32)
    for i, path in enumerate(paths):
        img = data.read_pgm(path).astype(np.float64) / 255.0
        batch[i, :, :, 0] = data.fit_to_input(img, cfg.in_h, cfg.in_w)
    return batch


def _token_text(tok):
    return charset.CHARS[tok] if tok < charset.EOS else "<eos>"


def cmd_gen_data(args):
    kw = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(data.GenConfig)
        if getattr(args, f.name, None) is not None
    }
    cfg = data.GenConfig(**kw).validate()
    images, labels = data.generate_dataset(cfg)
    data.save_dataset(args.out, images, labels)
    print(f"wrote {len(labels)} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg, tc = _model_cfg_from_args(args)
    images, labels = data.load_dataset(args.data)
    eval_images = eval_labels = None
    if args.eval_data:
        eval_images, eval_labels = data.load_dataset(args.eval_data)
    model = Model(cfg, seed=tc.seed)
    log_path = args.log or args.out + ".log.tsv"

    def progress(rec):
        if not args.quiet and (rec[0] % 10 == 0 or rec[0] == 1):
            print(f"step {rec[0]} lr {rec[1]:.3g} loss {rec[4]:.4f}", flush=True)

    history, stopped_at = train(
        model, images, labels, tc,
        log_path=log_path,
        eval_images=eval_images, eval_labels=eval_labels,
        progress=progress,
    )
    checkpoint.save_model(args.out, model)
    ran = stopped_at or len(history)
    print(f"trained {ran} steps, final loss {history[-1][4]:.4f}")
    if stopped_at:
        print(f"stopped early at step {stopped_at}")
    print(f"saved {args.out}")
    if eval_labels is not None:
        acc = evaluate(model, eval_images, eval_labels)
        print(f"exact_match\t{acc:.4f}")
    return 0


def cmd_eval(args):
    model = checkpoint.restore_model(args.model)
    _require_checkpoint_agreement(model.cfg, args)
    images, labels = data.load_dataset(args.data)
    acc = evaluate(model, images, labels, batch=args.batch)
    print(f"n\t{len(labels)}")
    print(f"exact_match\t{acc:.4f}")
    return 0


def cmd_infer(args):
    model = checkpoint.restore_model(args.model)
    _require_checkpoint_agreement(model.cfg, args)
    batch = _load_images(args.images, model.cfg)
    trace = model.recognize(batch)
    for path, row in zip(args.images, trace.tokens):
        print(f"{path}\t{charset.decode(row)}")
    return 0


def cmd_dump_attention(args):
    model = checkpoint.restore_model(args.model)
    _require_checkpoint_agreement(model.cfg, args)
    cfg = model.cfg
    batch = _load_images([args.image], cfg)
    trace = model.recognize(batch)
    os.makedirs(args.out, exist_ok=True)
    steps = int(trace.lengths[0])
    n_heads = trace.attention.shape[2]
    lines = ["step\tchar\t" + "\t".join(f"head{j}" for j in range(n_heads))]
    for t in range(steps):
        tok = int(trace.tokens[0, t])
        peaks = []
        for j in range(n_heads):
            w = trace.attention[0, t, j].astype(np.float64)
            peaks.append(str(int(w.argmax())))
            span = w.max() - w.min()
            norm = (w - w.min()) / span if span > 0 else np.zeros_like(w)
            grid = norm.reshape(cfg.grid_rows, cfg.grid_cols)
            data.write_pgm(os.path.join(args.out, f"step{t}_head{j}.pgm"), grid)
        lines.append(f"{t}\t{_token_text(tok)}\t" + "\t".join(peaks))
    manifest = os.path.join(args.out, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"{args.image}\t{charset.decode(trace.tokens[0])}")
    print(f"wrote {steps * n_heads} maps and {manifest}")
    return 0


def _add_model_flags(p):
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="desk",
                   help="base architecture settings")
    p.add_argument("--config", metavar="FILE",
                   help="key = value settings file; train.* keys reach the trainer")
    p.add_argument("--set", metavar="KEY=VALUE", action="append",
                   help="single setting override, repeatable")


def _add_checkpoint_flags(p):
    p.add_argument("--model", required=True, metavar="CKPT",
                   help="checkpoint to load")
    p.add_argument("--config", metavar="FILE", help=argparse.SUPPRESS)
    p.add_argument("--set", metavar="KEY=VALUE", action="append",
                   help="must agree with the checkpoint; use to assert settings")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="textrec",
        description="Train and run the scene text recognizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic labeled dataset")
    p.add_argument("--out", required=True, metavar="DIR")
    for f in dataclasses.fields(data.GenConfig):
        ftype = type(f.default)
        p.add_argument(f"--{f.name.replace('_', '-')}", type=ftype,
                       default=None, metavar=ftype.__name__.upper(),
                       help=f"default {f.default}")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model and save a checkpoint")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--log", metavar="TSV", help="default: CKPT.log.tsv")
    p.add_argument("--eval-data", metavar="DIR",
                   help="held-out set for early stopping and the final score")
    p.add_argument("--quiet", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exact-match accuracy on a dataset")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--batch", type=int, default=32)
    _add_checkpoint_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="read text from PGM images")
    p.add_argument("images", nargs="+", metavar="PGM")
    _add_checkpoint_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("dump-attention",
                       help="write per-step per-head attention maps")
    p.add_argument("--image", required=True, metavar="PGM")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_checkpoint_flags(p)
    p.set_defaults(func=cmd_dump_attention)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
