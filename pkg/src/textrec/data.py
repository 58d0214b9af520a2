"""Synthetic word-image generation and the on-disk dataset format.

Rendering composes 5x7 glyph bitmaps (digits, uppercase, lowercase;
lowercase sit at x-height so case survives downscaling) onto a height-48
canvas with per-character size jitter, then distorts with a sine baseline
(integer per-column shift), a shear (integer per-row shift), brightness
and contrast jitter, and Gaussian noise. Images are light text on dark
ground, clipped to [0, 1].

Canvases are fitted to the model input: height is scaled to 48 keeping
aspect, then the image is right-padded with zeros up to width 160, or
squeezed down to 160 when wider.

On disk a dataset is a directory of binary PGM (P5, maxval 255) files
plus labels.tsv, one "filename<TAB>label" line per image, UTF-8 with LF
line ends.
"""

import os
import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import charset
from .errors import DataError

MAX_LABEL_LEN = 26

_GLYPH_ROWS = {
    "0": ("_XXX_", "X___X", "X__XX", "X_X_X", "XX__X", "X___X", "_XXX_"),
    "1": ("__X__", "_XX__", "__X__", "__X__", "__X__", "__X__", "_XXX_"),
    "2": ("_XXX_", "X___X", "____X", "___X_", "__X__", "_X___", "XXXXX"),
    "3": ("XXXXX", "____X", "___X_", "__XX_", "____X", "X___X", "_XXX_"),
    "4": ("___X_", "__XX_", "_X_X_", "X__X_", "XXXXX", "___X_", "___X_"),
    "5": ("XXXXX", "X____", "XXXX_", "____X", "____X", "X___X", "_XXX_"),
    "6": ("__XX_", "_X___", "X____", "XXXX_", "X___X", "X___X", "_XXX_"),
    "7": ("XXXXX", "____X", "___X_", "__X__", "__X__", "__X__", "__X__"),
    "8": ("_XXX_", "X___X", "X___X", "_XXX_", "X___X", "X___X", "_XXX_"),
    "9": ("_XXX_", "X___X", "X___X", "_XXXX", "____X", "___X_", "_XX__"),
    "A": ("_XXX_", "X___X", "X___X", "XXXXX", "X___X", "X___X", "X___X"),
    "B": ("XXXX_", "X___X", "X___X", "XXXX_", "X___X", "X___X", "XXXX_"),
    "C": ("_XXX_", "X___X", "X____", "X____", "X____", "X___X", "_XXX_"),
    "D": ("XXXX_", "X___X", "X___X", "X___X", "X___X", "X___X", "XXXX_"),
    "E": ("XXXXX", "X____", "X____", "XXXX_", "X____", "X____", "XXXXX"),
    "F": ("XXXXX", "X____", "X____", "XXXX_", "X____", "X____", "X____"),
    "G": ("_XXX_", "X___X", "X____", "X_XXX", "X___X", "X___X", "_XXXX"),
    "H": ("X___X", "X___X", "X___X", "XXXXX", "X___X", "X___X", "X___X"),
    "I": ("_XXX_", "__X__", "__X__", "__X__", "__X__", "__X__", "_XXX_"),
    "J": ("__XXX", "___X_", "___X_", "___X_", "___X_", "X__X_", "_XX__"),
    "K": ("X___X", "X__X_", "X_X__", "XX___", "X_X__", "X__X_", "X___X"),
    "L": ("X____", "X____", "X____", "X____", "X____", "X____", "XXXXX"),
    "M": ("X___X", "XX_XX", "X_X_X", "X_X_X", "X___X", "X___X", "X___X"),
    "N": ("X___X", "XX__X", "X_X_X", "X__XX", "X___X", "X___X", "X___X"),
    "O": ("_XXX_", "X___X", "X___X", "X___X", "X___X", "X___X", "_XXX_"),
    "P": ("XXXX_", "X___X", "X___X", "XXXX_", "X____", "X____", "X____"),
    "Q": ("_XXX_", "X___X", "X___X", "X___X", "X_X_X", "X__X_", "_XX_X"),
    "R": ("XXXX_", "X___X", "X___X", "XXXX_", "X_X__", "X__X_", "X___X"),
    "S": ("_XXXX", "X____", "X____", "_XXX_", "____X", "____X", "XXXX_"),
    "T": ("XXXXX", "__X__", "__X__", "__X__", "__X__", "__X__", "__X__"),
    "U": ("X___X", "X___X", "X___X", "X___X", "X___X", "X___X", "_XXX_"),
    "V": ("X___X", "X___X", "X___X", "X___X", "X___X", "_X_X_", "__X__"),
    "W": ("X___X", "X___X", "X___X", "X_X_X", "X_X_X", "XX_XX", "X___X"),
    "X": ("X___X", "X___X", "_X_X_", "__X__", "_X_X_", "X___X", "X___X"),
    "Y": ("X___X", "X___X", "_X_X_", "__X__", "__X__", "__X__", "__X__"),
    "Z": ("XXXXX", "____X", "___X_", "__X__", "_X___", "X____", "XXXXX"),
    "a": ("_____", "_____", "_XXX_", "____X", "_XXXX", "X___X", "_XXXX"),
    "b": ("X____", "X____", "XXXX_", "X___X", "X___X", "X___X", "XXXX_"),
    "c": ("_____", "_____", "_XXX_", "X____", "X____", "X____", "_XXX_"),
    "d": ("____X", "____X", "_XXXX", "X___X", "X___X", "X___X", "_XXXX"),
    "e": ("_____", "_____", "_XXX_", "X___X", "XXXXX", "X____", "_XXX_"),
    "f": ("__XX_", "_X___", "XXXX_", "_X___", "_X___", "_X___", "_X___"),
    "g": ("_____", "_XXXX", "X___X", "X___X", "_XXXX", "____X", "_XXX_"),
    "h": ("X____", "X____", "XXXX_", "X___X", "X___X", "X___X", "X___X"),
    "i": ("__X__", "_____", "_XX__", "__X__", "__X__", "__X__", "_XXX_"),
    "j": ("___X_", "_____", "__XX_", "___X_", "___X_", "X__X_", "_XX__"),
    "k": ("X____", "X____", "X__X_", "X_X__", "XX___", "X_X__", "X__X_"),
    "l": ("_XX__", "__X__", "__X__", "__X__", "__X__", "__X__", "__XXX"),
    "m": ("_____", "_____", "XX_X_", "X_X_X", "X_X_X", "X_X_X", "X_X_X"),
    "n": ("_____", "_____", "XXXX_", "X___X", "X___X", "X___X", "X___X"),
    "o": ("_____", "_____", "_XXX_", "X___X", "X___X", "X___X", "_XXX_"),
    "p": ("_____", "XXXX_", "X___X", "X___X", "XXXX_", "X____", "X____"),
    "q": ("_____", "_XXXX", "X___X", "X___X", "_XXXX", "____X", "____X"),
    "r": ("_____", "_____", "X_XX_", "XX__X", "X____", "X____", "X____"),
    "s": ("_____", "_____", "_XXXX", "X____", "_XXX_", "____X", "XXXX_"),
    "t": ("_X___", "_X___", "XXXX_", "_X___", "_X___", "_X__X", "__XX_"),
    "u": ("_____", "_____", "X___X", "X___X", "X___X", "X___X", "_XXXX"),
    "v": ("_____", "_____", "X___X", "X___X", "X___X", "_X_X_", "__X__"),
    "w": ("_____", "_____", "X___X", "X___X", "X_X_X", "X_X_X", "_X_X_"),
    "x": ("_____", "_____", "X___X", "_X_X_", "__X__", "_X_X_", "X___X"),
    "y": ("_____", "X___X", "X___X", "X___X", "_XXXX", "____X", "_XXX_"),
    "z": ("_____", "_____", "XXXXX", "___X_", "__X__", "_X___", "XXXXX"),
}


def glyph_bitmap(char):
    """7x5 float bitmap for one character."""
    try:
        rows = _GLYPH_ROWS[char]
    except KeyError:
        raise DataError(f"no glyph for character {char!r}") from None
    return np.array([[1.0 if c == "X" else 0.0 for c in row] for row in rows])


@dataclass
class GenConfig:
    n: int = 100
    min_len: int = 1
    max_len: int = 10
    glyph_h_min: int = 24
    glyph_h_max: int = 40
    curvature: float = 0.2
    tilt: float = 0.15
    noise: float = 0.04
    seed: int = 0
    canvas_h: int = 48
    out_h: int = 48
    out_w: int = 160

    def validate(self):
        if self.n < 1:
            raise DataError("need at least one sample")
        if not 1 <= self.min_len <= self.max_len <= MAX_LABEL_LEN:
            raise DataError(
                f"label lengths must satisfy 1 <= min <= max <= {MAX_LABEL_LEN}"
            )
        if self.glyph_h_min < 8 or self.glyph_h_max > self.canvas_h:
            raise DataError("glyph height range outside the canvas")
        if self.curvature < 0 or self.tilt < 0 or self.noise < 0:
            raise DataError("distortion amounts must be nonnegative")
        return self


def _scale_nearest(bitmap, out_h, out_w):
    ys = (np.arange(out_h) * bitmap.shape[0] // out_h).clip(0, bitmap.shape[0] - 1)
    xs = (np.arange(out_w) * bitmap.shape[1] // out_w).clip(0, bitmap.shape[1] - 1)
    return bitmap[np.ix_(ys, xs)]


def render_word(text, rng, cfg=None):
    """Draw one word onto a fresh canvas; returns float [canvas_h, W]."""
    cfg = (cfg or GenConfig()).validate()
    if not 1 <= len(text) <= MAX_LABEL_LEN:
        raise DataError(f"label length {len(text)} outside 1..{MAX_LABEL_LEN}")
    charset.encode(text)  # reject unsupported characters early
    h = cfg.canvas_h
    tiles = []
    for ch in text:
        gh = int(rng.integers(cfg.glyph_h_min, cfg.glyph_h_max + 1))
        gw = max(3, round(gh * 5 / 7))
        tiles.append(_scale_nearest(glyph_bitmap(ch), gh, gw))
    spacing = int(rng.integers(2, 5))
    margin = 6
    width = margin * 2 + sum(t.shape[1] for t in tiles) + spacing * (len(tiles) - 1)
    canvas = np.zeros((h, width))
    x = margin
    for tile in tiles:
        gh, gw = tile.shape
        top = (h - gh) // 2 + int(rng.integers(-2, 3))
        top = int(np.clip(top, 0, h - gh))
        canvas[top:top + gh, x:x + gw] = np.maximum(canvas[top:top + gh, x:x + gw], tile)
        x += gw + spacing
    # sine baseline: shift each column vertically by an integer amount
    if cfg.curvature > 0:
        amp = cfg.curvature * h
        phase = rng.uniform(0, 2 * np.pi)
        cols = np.arange(width)
        shifts = np.round(amp * np.sin(np.pi * cols / width + phase)).astype(int)
        curved = np.zeros_like(canvas)
        for col in range(width):
            s = shifts[col]
            src = canvas[:, col]
            if s >= 0:
                curved[s:, col] = src[:h - s] if s else src
            else:
                curved[:h + s, col] = src[-s:]
        canvas = curved
    # shear: shift each row horizontally by an integer amount
    if cfg.tilt > 0:
        slope = rng.uniform(-cfg.tilt, cfg.tilt)
        sheared = np.zeros_like(canvas)
        for row in range(h):
            s = int(round(slope * (row - h / 2)))
            src = canvas[row]
            if s >= 0:
                sheared[row, s:] = src[:width - s] if s else src
            else:
                sheared[row, :width + s] = src[-s:]
        canvas = sheared
    fg = rng.uniform(0.65, 1.0)
    bg = rng.uniform(0.0, 0.2)
    img = bg + (fg - bg) * canvas
    if cfg.noise > 0:
        img = img + rng.normal(0.0, cfg.noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def fit_to_input(img, out_h=48, out_w=160):
    """Scale height to out_h keeping aspect, then right-pad with zeros to
    out_w, or squeeze the width down to out_w when the image is wider.
    """
    h, w = img.shape
    if h != out_h:
        scale = out_h / h
        img = ndimage.zoom(img, (scale, scale), order=1)
        h, w = img.shape
    if w == out_w:
        return img.astype(np.float64)
    if w < out_w:
        out = np.zeros((out_h, out_w))
        out[:, :w] = img
        return out
    return ndimage.zoom(img, (1.0, out_w / w), order=1)


def random_label(rng, cfg):
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    return "".join(charset.CHARS[i] for i in rng.integers(0, len(charset.CHARS), length))


def generate_dataset(cfg=None):
    """Deterministic synthetic set: [N, out_h, out_w, 1] float32 in [0, 1]
    plus the labels."""
    cfg = (cfg or GenConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    images = np.empty((cfg.n, cfg.out_h, cfg.out_w, 1), dtype=np.float32)
    labels = []
    for i in range(cfg.n):
        label = random_label(rng, cfg)
        img = fit_to_input(render_word(label, rng, cfg), cfg.out_h, cfg.out_w)
        images[i, :, :, 0] = img.astype(np.float32)
        labels.append(label)
    return images, labels


# ------------------------------------------------------------------ disk


def write_pgm(path, img):
    """img: float [H, W] in [0, 1] or uint8 [H, W]."""
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_pgm(path):
    """Binary PGM, maxval 255, '#' header comments allowed. uint8 [H, W]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (bad magic)")
    # header: magic, width, height, maxval as whitespace-separated tokens
    pos = 2
    fields = []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n?)*([0-9]+)", blob[pos:])
        if not m:
            raise DataError(f"{path}: truncated PGM header")
        fields.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = blob[pos:pos + width * height]
    if len(pixels) != width * height:
        raise DataError(f"{path}: expected {width * height} pixels, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def save_dataset(out_dir, images, labels):
    """Write NNNNN.pgm files and labels.tsv (filename TAB label, LF)."""
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images vs {len(labels)} labels")
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, (img, label) in enumerate(zip(images, labels)):
        if len(label) > MAX_LABEL_LEN:
            raise DataError(f"label {label!r} longer than {MAX_LABEL_LEN}")
        charset.encode(label)
        name = f"{i:05d}.pgm"
        plane = img[:, :, 0] if img.ndim == 3 else img
        write_pgm(os.path.join(out_dir, name), plane)
        lines.append(f"{name}\t{label}\n")
    with open(os.path.join(out_dir, "labels.tsv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.writelines(lines)


def load_dataset(in_dir):
    """Read a dataset directory back to ([N, H, W, 1] float32, labels)."""
    index = os.path.join(in_dir, "labels.tsv")
    if not os.path.exists(index):
        raise DataError(f"{in_dir}: labels.tsv not found")
    names, labels = [], []
    with open(index, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{index}:{lineno}: expected filename<TAB>label")
            name, label = line.split("\t", 1)
            names.append(name)
            labels.append(label)
    if not names:
        raise DataError(f"{index}: empty dataset")
    planes = []
    for name in names:
        img = read_pgm(os.path.join(in_dir, name))
        planes.append(img.astype(np.float32) / 255.0)
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise DataError(f"{in_dir}: images disagree on shape: {sorted(shapes)}")
    return np.stack(planes)[:, :, :, None], labels
