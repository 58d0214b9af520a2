"""Memorization run: fit the desk model to a small synthetic set.

Generates a handful of curved-text images, trains until the training set
is decoded exactly (or the step budget runs out), then writes a checkpoint
and per-step attention maps for the first sample.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from textrec.checkpoint import save_model
from textrec.cli import main as cli_main
from textrec.config import TrainConfig, desk_model
from textrec.data import GenConfig, generate_dataset, write_pgm
from textrec.model import Model
from textrec.train import evaluate, train


def run(args):
    cfg = desk_model()
    gen = GenConfig(n=args.n, min_len=1, max_len=5, curvature=0.10,
                    tilt=0.08, noise=0.02, seed=args.data_seed)
    images, labels = generate_dataset(gen)
    model = Model(cfg, seed=args.model_seed)

    tc = TrainConfig(steps=args.steps, batch=args.batch, lr=1e-3, l2=1e-4,
                     clip=5.0, seed=args.model_seed,
                     early_stop_acc=0.95, eval_every=50)

    def progress(rec):
        step, _, ce, _, total, elapsed = rec
        if step % 50 == 0:
            print(f"step {step:5d}  ce {ce:7.4f}  total {total:7.4f}  "
                  f"{elapsed:6.1f}s", flush=True)

    t0 = time.monotonic()
    _, stopped = train(model, images, labels, tc, progress=progress)
    wall = time.monotonic() - t0
    acc = evaluate(model, images, labels)
    print(f"train accuracy {acc:.4f} after "
          f"{stopped or args.steps} steps ({wall:.0f}s)")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "overfit.ckpt"
    save_model(str(ckpt), model)
    sample = out / "sample0.pgm"
    write_pgm(str(sample), images[0])
    print(f"label of sample 0: {labels[0]!r}")
    rc = cli_main(["dump-attention", "--model", str(ckpt),
                   "--image", str(sample), "--out", str(out / "attn")])
    if rc:
        print("attention dump failed", file=sys.stderr)
    return rc


def build_parser():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--data-seed", type=int, default=7)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--out", default="runs/overfit")
    return p


if __name__ == "__main__":
    sys.exit(run(build_parser().parse_args()))
