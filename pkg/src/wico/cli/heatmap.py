"""8-bit grayscale rendering of channel-mean feature maps as binary PGM (P5)."""
from __future__ import annotations

import re

import numpy as np

from ..errors import InputError


def to_gray(mean_map: np.ndarray) -> np.ndarray:
    """Per-image min-max normalization to 0..255; a constant map renders as 128."""
    m = np.asarray(mean_map, dtype=np.float64)
    if m.size == 0:
        raise InputError("cannot render an empty map")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255).astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def decode_pgm(buf: bytes) -> np.ndarray:
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", buf)
    if m is None:
        raise InputError("not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
