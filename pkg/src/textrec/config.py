"""Model and training configuration.

ModelConfig pins every width, repeat count, and ablation toggle; it can be
flattened to a float vector (and rebuilt from one) so checkpoints carry
enough to reconstruct the network they were saved from. TrainConfig holds
optimizer knobs only.

Two presets exist: "paper" is the full-size network, "desk" a reduced one
with the same topology that trains in minutes on one CPU core.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError


@dataclass
class ModelConfig:
    in_h: int = 48
    in_w: int = 160
    in_c: int = 1
    k_points: int = 20
    point_margin: float = 0.05
    loc_channels: tuple = (16, 32, 64, 128)
    loc_fc: int = 256
    bb_widths: tuple = (64, 128, 256, 512)
    bb_repeats: tuple = (1, 2, 5, 3)
    enc_hidden: int = 256
    n_heads: int = 8
    attn_exponent: float = 2.0
    dec_embed: int = 256
    p_enc: float = 0.1
    p_dec: float = 0.5
    max_steps: int = 27
    layer_norm: bool = True
    visual_fuse: bool = True
    context_fuse: bool = True
    glimpse_init: bool = True
    glimpse_pred: bool = True

    @property
    def d_visual(self):
        return self.bb_widths[-1]

    @property
    def d_decoder(self):
        return 2 * self.enc_hidden

    @property
    def grid_rows(self):
        return self.in_h // 16

    @property
    def grid_cols(self):
        return self.in_w // 8

    @property
    def n_positions(self):
        return self.grid_rows * self.grid_cols

    def validate(self):
        if self.in_h % 16 or self.in_w % 16:
            raise ConfigError(f"input {self.in_h}x{self.in_w} must be divisible by 16")
        if len(self.bb_widths) != 4 or len(self.bb_repeats) != 4:
            raise ConfigError("backbone needs 4 widths and 4 repeat counts")
        if len(self.loc_channels) != 4:
            raise ConfigError("localization tower needs 4 channel widths")
        if 2 * self.enc_hidden != self.bb_widths[-1]:
            raise ConfigError(
                f"context width {2 * self.enc_hidden} must match "
                f"visual width {self.bb_widths[-1]} for fusion"
            )
        if self.d_visual % self.n_heads:
            raise ConfigError(
                f"visual width {self.d_visual} not divisible by {self.n_heads} heads"
            )
        if self.d_visual % 2:
            raise ConfigError("visual width must be even for the position code")
        if not 0 < self.max_steps:
            raise ConfigError("max_steps must be positive")
        if self.k_points < 6 or self.k_points % 2:
            raise ConfigError(f"control point count must be even and >= 6, got {self.k_points}")
        return self

    _TUPLE_FIELDS = ("loc_channels", "bb_widths", "bb_repeats")

    def to_vector(self):
        """Flatten to floats in declaration order; tuples expand to 4 slots."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in self._TUPLE_FIELDS:
                out.extend(float(x) for x in v)
            elif isinstance(v, bool):
                out.append(1.0 if v else 0.0)
            else:
                out.append(float(v))
        return out

    @classmethod
    def from_vector(cls, vec):
        vals = {}
        i = 0
        proto = cls()
        for f in fields(cls):
            if f.name in cls._TUPLE_FIELDS:
                vals[f.name] = tuple(int(round(x)) for x in vec[i:i + 4])
                i += 4
            else:
                ref = getattr(proto, f.name)
                x = vec[i]
                i += 1
                if isinstance(ref, bool):
                    vals[f.name] = bool(round(x))
                elif isinstance(ref, int):
                    vals[f.name] = int(round(x))
                else:
                    # vectors may have passed through float32 storage; take the
                    # shortest decimal that still maps to the same float32
                    vals[f.name] = float(
                        np.format_float_positional(np.float32(x), unique=True)
                    )
        if i != len(vec):
            raise ConfigError(f"config vector length {len(vec)} does not match {i}")
        return cls(**vals)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 16
    lr: float = 1e-4
    lr_drop: float = 0.1
    drop_fraction: float = 0.9
    l2: float = 1e-4
    clip: float = 5.0
    seed: int = 0
    early_stop_acc: float = 0.0
    eval_every: int = 50

    def validate(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.drop_fraction <= 1.0:
            raise ConfigError("drop_fraction must be in (0, 1]")
        return self


def paper_model():
    return ModelConfig().validate()


def desk_model():
    # score divisor n_positions**0.5: at this width the full-size
    # divisor keeps attention near uniform for the whole training budget
    return ModelConfig(
        loc_channels=(8, 16, 32, 64),
        loc_fc=64,
        bb_widths=(16, 32, 64, 128),
        bb_repeats=(1, 2, 5, 3),
        enc_hidden=64,
        n_heads=4,
        attn_exponent=0.5,
        dec_embed=64,
    ).validate()


MODEL_PRESETS = {"paper": paper_model, "desk": desk_model}


def _coerce_like(ref, text):
    if isinstance(ref, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(ref, int):
        return int(text)
    if isinstance(ref, float):
        return float(text)
    if isinstance(ref, tuple):
        return tuple(int(p) for p in text.split(","))
    raise ConfigError(f"cannot parse value for field of type {type(ref).__name__}")


def apply_overrides(cfg, overrides):
    """Return a copy of a config dataclass with string overrides applied,
    coercing each value to the field's existing type.
    """
    known = {f.name for f in fields(cfg)}
    updates = {}
    for key, text in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _coerce_like(getattr(cfg, key), text)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {text!r}") from e
    return replace(cfg, **updates)


def parse_kv_file(path):
    """Read `key = value` lines; '#' starts a comment, blanks are skipped."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = stripped.split("=", 1)
            out[key.strip()] = val.strip()
    return out
