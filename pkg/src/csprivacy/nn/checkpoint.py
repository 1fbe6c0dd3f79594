"""CKP1 checkpoint files.

Layout (little-endian): ``b"CKP1"``, u32 header length, JSON header, u32
tensor count, then per tensor u16 name length, name, u8 rank, u32 extents,
f64 values; finally CRC32 of everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..core import ChecksumError, FormatError
from .network import NetworkConfig, reinit_head

CKP_MAGIC = b"CKP1"


def checkpoint_to_bytes(params: dict, config: NetworkConfig, seed: int = 0, meta: dict | None = None) -> bytes:
    header = {"network": config.to_dict(), "seed": int(seed),
              "num_classes": config.num_classes, "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [CKP_MAGIC, struct.pack("<I", len(hb)), hb, struct.pack("<I", len(params))]
    for name, arr in params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(buf: bytes, name: str = "<bytes>"):
    """Returns ``(params, config, header)``."""
    if len(buf) < 16 or buf[:4] != CKP_MAGIC:
        raise FormatError(f"{name}: not a CKP1 checkpoint")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ChecksumError(f"{name}: CRC32 mismatch")
    try:
        (hlen,) = struct.unpack_from("<I", buf, 4)
        header = json.loads(buf[8:8 + hlen].decode())
        pos = 8 + hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            key = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape))
            params[key] = np.frombuffer(buf, "<f8", size, pos).astype(np.float64).reshape(shape)
            pos += 8 * size
        config = NetworkConfig.from_dict(header["network"])
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{name}: malformed checkpoint ({exc})") from exc
    if pos != len(buf) - 4:
        raise FormatError(f"{name}: trailing bytes in checkpoint")
    expected = config.param_shapes()
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise FormatError(f"{name}: tensors do not match the stored network config")
    return params, config, header


def save_checkpoint(path, params: dict, config: NetworkConfig, seed: int = 0, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(params, config, seed, meta))


def load_checkpoint(path, num_classes: int | None = None, head_seed: int = 0,
                    expect: NetworkConfig | None = None):
    """Load ``(params, config, header)``.

    With ``num_classes`` different from the stored class count, every layer
    but the head is kept and the head is re-initialised from ``head_seed``
    (transfer to a new task). ``expect`` must then agree with the stored
    config in everything but the class count.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    params, config, header = checkpoint_from_bytes(buf, str(path))
    if expect is not None and replace(expect, num_classes=config.num_classes) != config:
        raise ValueError(f"{path}: checkpoint network {config} does not match {expect}")
    if num_classes is not None and num_classes != config.num_classes:
        config = replace(config, num_classes=num_classes)
        params = reinit_head(params, config, head_seed)
    return params, config, header
