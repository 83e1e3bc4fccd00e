"""Binary parameter serialization.

Layout, all little-endian:

    magic   5 bytes  b"ZPRL1"
    count   uint32   number of linear layers L
    widths  uint32 * (L + 1)
    payload float64 * n_params(widths)   flat parameter array
    check   8 bytes  first 8 bytes of SHA-256 over everything above

Activations and semantic names are not part of this format; bundles carry
them in a JSON sidecar next to the parameter files.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ChecksumError
from .nets import n_params

MAGIC = b"ZPRL1"


def save_params(path: str | Path, widths: Sequence[int], params: np.ndarray) -> None:
    widths = tuple(int(w) for w in widths)
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (n_params(widths),):
        raise ValueError(f"{params.size} params do not match widths {widths}")
    body = (
        MAGIC
        + struct.pack("<I", len(widths) - 1)
        + struct.pack(f"<{len(widths)}I", *widths)
        + params.astype("<f8").tobytes()
    )
    digest = hashlib.sha256(body).digest()[:8]
    Path(path).write_bytes(body + digest)


def load_params(path: str | Path) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 8:
        raise ValueError(f"{path}: file too short to be a parameter checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    body, digest = raw[:-8], raw[-8:]
    if hashlib.sha256(body).digest()[:8] != digest:
        raise ChecksumError(f"{path}: content checksum mismatch")
    off = len(MAGIC)
    (n_layers,) = struct.unpack_from("<I", body, off)
    off += 4
    widths = struct.unpack_from(f"<{n_layers + 1}I", body, off)
    off += 4 * (n_layers + 1)
    expected = n_params(widths)
    payload = body[off:]
    if len(payload) != 8 * expected:
        raise ValueError(f"{path}: payload holds {len(payload) // 8} floats, expected {expected}")
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return tuple(widths), params
