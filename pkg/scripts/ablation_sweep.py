"""Short-budget sweep over the architecture toggles.

Every toggle combination and head count trains for a fixed number of steps
on the same small dataset and reports its final loss plus a sample decode.
With the default budget the losses say nothing about final quality; the
sweep exists to show every variant constructs, trains, and decodes.

Runs on a deliberately tiny network so the full grid finishes in minutes.
"""

import argparse
import itertools
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from textrec import charset
from textrec.config import ModelConfig, TrainConfig
from textrec.data import GenConfig, generate_dataset
from textrec.model import Model
from textrec.train import train

TOGGLES = ("layer_norm", "visual_fuse", "context_fuse",
           "glimpse_init", "glimpse_pred")


def tiny_model():
    # widths sized so every head count in the sweep divides d_visual
    return ModelConfig(
        in_h=16, in_w=32,
        loc_channels=(2, 2, 2, 2), loc_fc=8,
        bb_widths=(2, 3, 4, 8), bb_repeats=(1, 1, 1, 1),
        enc_hidden=4, n_heads=2, attn_exponent=1.0, dec_embed=6,
        p_enc=0.0, p_dec=0.0,
    ).validate()


def variant_name(combo):
    return "".join("+" if on else "-" for on in combo)


def run(args):
    base = tiny_model()
    images, labels = generate_dataset(
        GenConfig(n=args.n, max_len=3, seed=args.data_seed,
                  out_h=base.in_h, out_w=base.in_w))
    tc = TrainConfig(steps=args.steps, batch=args.batch, lr=1e-3,
                     seed=args.model_seed)

    combos = list(itertools.product([True, False], repeat=len(TOGGLES)))
    print(" ".join(t[:2] for t in TOGGLES), "heads  final_ce  sample")
    for combo in combos:
        for heads in args.heads:
            cfg = replace(base, n_heads=heads,
                          **dict(zip(TOGGLES, combo))).validate()
            model = Model(cfg, seed=args.model_seed)
            t0 = time.monotonic()
            history, _ = train(model, images, labels, tc)
            decoded = charset.decode(model.recognize(images[:1]).tokens[0])
            print(f"{variant_name(combo):>14}  {heads}  "
                  f"{history[-1][2]:8.4f}  {decoded!r}  "
                  f"({time.monotonic() - t0:.0f}s)", flush=True)
    return 0


def build_parser():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--heads", type=int, nargs="+", default=[1, 4, 8])
    p.add_argument("--data-seed", type=int, default=3)
    p.add_argument("--model-seed", type=int, default=0)
    return p


if __name__ == "__main__":
    sys.exit(run(build_parser().parse_args()))
