"""Checkpoint container.

Layout, all integers little-endian u32:

    magic b"RCED"
    body:
        version
        tensor count
        per tensor: name length, name (utf-8), rank, extents..., float32 data
    crc32(body)

The model configuration rides along as one reserved tensor holding its
flattened field vector, so a checkpoint is self-describing. Errors are
split by cause: BadMagic (not this format), BadVersion (format changed),
BadChecksum (bit rot), CheckpointError (structural damage).
"""

import struct
import zlib

import numpy as np

from .config import ModelConfig
from .errors import BadChecksum, BadMagic, BadVersion, CheckpointError

MAGIC = b"RCED"
VERSION = 1
CONFIG_KEY = "__config__"


def _pack_tensor(name, arr):
    raw = name.encode("utf-8")
    # note asarray keeps 0-d rank where ascontiguousarray would promote to 1-d
    arr = np.asarray(arr, dtype="<f4", order="C")
    head = struct.pack("<I", len(raw)) + raw
    head += struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes()


def write_tensors(path, tensors, version=VERSION):
    """tensors: mapping name -> array-like, saved as float32."""
    body = struct.pack("<II", version, len(tensors))
    for name, arr in tensors.items():
        body += _pack_tensor(name, np.asarray(arr))
    with open(path, "wb") as fh:
        fh.write(MAGIC + body + struct.pack("<I", zlib.crc32(body)))


def read_tensors(path):
    """Inverse of write_tensors: mapping name -> float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (magic mismatch)")
    body, tail = blob[4:-4], blob[-4:]
    if struct.unpack("<I", tail)[0] != zlib.crc32(body):
        raise BadChecksum(f"{path}: checksum mismatch, file is damaged")
    version, count = struct.unpack_from("<II", body, 0)
    if version != VERSION:
        raise BadVersion(f"{path}: version {version}, this reader handles {VERSION}")
    pos = 8
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", body, pos) if rank else ()
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            out[name] = arr.reshape(shape).copy()
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated tensor table: {e}") from e
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes in body")
    return out


def save_model(path, model):
    tensors = {CONFIG_KEY: np.asarray(model.cfg.to_vector(), dtype=np.float32)}
    for name, t in model.param_dict().items():
        tensors[name] = t.data
    write_tensors(path, tensors)


def load_config(path):
    tensors = read_tensors(path)
    if CONFIG_KEY not in tensors:
        raise CheckpointError(f"{path}: no configuration record")
    return ModelConfig.from_vector(tensors[CONFIG_KEY].tolist()), tensors


def restore_model(path, dtype=np.float32):
    """Rebuild the model a checkpoint describes and load its weights."""
    from .model import Model

    cfg, tensors = load_config(path)
    model = Model(cfg, seed=0, dtype=dtype)
    params = model.param_dict()
    stored = {k for k in tensors if k != CONFIG_KEY}
    missing = sorted(set(params) - stored)
    extra = sorted(stored - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names disagree with the configuration "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, t in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(t.shape):
            raise CheckpointError(
                f"{path}: {name} has shape {arr.shape}, expected {t.shape}"
            )
        t.data[...] = arr.astype(t.data.dtype)
    return model
