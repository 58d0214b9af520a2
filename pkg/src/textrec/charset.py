"""Token alphabet: 62 characters plus the two control tokens.

Indices 0-9 are digits, 10-35 uppercase, 36-61 lowercase. EOS (62) is a
real output class appended to every target; SOS (63) exists only on the
input side as the first-step embedding and is never predicted.
"""

import string

from .errors import DataError

CHARS = string.digits + string.ascii_uppercase + string.ascii_lowercase
EOS = len(CHARS)          # 62, predictable
SOS = len(CHARS) + 1      # 63, embedding-only
N_CLASSES = len(CHARS) + 1   # outputs: 62 chars + EOS
N_TOKENS = len(CHARS) + 2    # embeddings: chars + EOS + SOS

_CHAR_TO_INDEX = {c: i for i, c in enumerate(CHARS)}


def encode(text):
    """Character indices for a string, without EOS."""
    try:
        return [_CHAR_TO_INDEX[c] for c in text]
    except KeyError as e:
        raise DataError(f"character {e.args[0]!r} is outside the alphabet") from e


def encode_target(text):
    """Indices with EOS appended: what the decoder is trained to emit."""
    return encode(text) + [EOS]


def decode(indices):
    """String form of a prediction, cut at the first EOS."""
    out = []
    for i in indices:
        if i == EOS:
            break
        if not 0 <= i < len(CHARS):
            raise DataError(f"index {i} is outside the alphabet")
        out.append(CHARS[i])
    return "".join(out)
