"""Channel-stacked measurement tensors and the raw clip / tensor file formats.

For a clip ``T x H x W x 3`` and an ``M x N`` matrix the packed tensor is
``T x H/B x W/B x 3M`` with channel ``c*M + m`` holding measurement ``m`` of
colour ``c`` (colour-major). One matrix is shared by the three colours.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ChecksumError, FormatError
from .sensing import SensingMatrix, blocks_to_frame, frame_to_blocks


@dataclass(eq=False)
class VideoClip:
    frames: np.ndarray  # T x H x W x 3, uint8
    fps: float | None = None

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[-1] != 3 or f.shape[0] < 1:
            raise ValueError(f"clip frames must be T x H x W x 3, got {f.shape}")
        if f.dtype != np.uint8:
            raise ValueError(f"clip frames must be uint8, got {f.dtype}")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape

    def scaled(self) -> np.ndarray:
        return self.frames.astype(np.float64) / 255.0


@dataclass(eq=False)
class MeasurementTensor:
    data: np.ndarray  # T x Hb x Wb x 3M
    block_size: int
    measurements: int

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != 3 * self.measurements:
            raise ValueError(
                f"tensor {self.data.shape} inconsistent with 3*M = {3 * self.measurements}")

    @property
    def shape(self):
        return self.data.shape


def pad_frame(frame: np.ndarray, B: int) -> np.ndarray:
    """Edge-replicate H x W (x C) up to the next multiples of B."""
    H, W = frame.shape[:2]
    ph, pw = -H % B, -W % B
    if ph == 0 and pw == 0:
        return frame
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (frame.ndim - 2)
    return np.pad(frame, pad, mode="edge")


def pad_clip(clip: VideoClip, B: int) -> VideoClip:
    T, H, W, _ = clip.shape
    ph, pw = -H % B, -W % B
    if ph == 0 and pw == 0:
        return clip
    frames = np.pad(clip.frames, [(0, 0), (0, ph), (0, pw), (0, 0)], mode="edge")
    return VideoClip(frames, clip.fps)


def pack_array(frames: np.ndarray, phi: SensingMatrix) -> np.ndarray:
    """Packs scaled frames (T x H x W x 3, floats in [0, 1]) to T x Hb x Wb x 3M."""
    B = phi.config.block_size
    T, H, W, C = frames.shape
    if H % B or W % B:
        raise ValueError(f"frames {H}x{W} not divisible by block size {B}; pad first")
    planes = np.moveaxis(frames, -1, 1)                   # T, 3, H, W
    blocks = frame_to_blocks(planes, B)                   # T, 3, Hb, Wb, N
    if blocks.shape[-1] != phi.cols:
        raise ValueError(f"block length {blocks.shape[-1]} != matrix columns {phi.cols}")
    y = blocks @ phi.entries.T                            # T, 3, Hb, Wb, M
    y = np.moveaxis(y, 1, 3)                              # T, Hb, Wb, 3, M
    return y.reshape(T, H // B, W // B, C * phi.rows)


def pack_clip(clip: VideoClip, phi: SensingMatrix) -> MeasurementTensor:
    data = pack_array(clip.scaled(), phi)
    return MeasurementTensor(data, phi.config.block_size, phi.rows)


def unpack_measurements(data: np.ndarray, M: int) -> np.ndarray:
    """T x Hb x Wb x 3M -> T x 3 x Hb x Wb x M, undoing the colour-major layout."""
    T, hb, wb, C = data.shape
    return np.moveaxis(data.reshape(T, hb, wb, C // M, M), 3, 1)


def unpack_clip(mt: MeasurementTensor, phi: SensingMatrix) -> VideoClip:
    """Exact inverse of :func:`pack_clip`, defined only for the identity matrix.

    A general matrix mixes pixels irreversibly when M < N and needs a
    reconstruction solver instead (see :mod:`csprivacy.recon`).
    """
    if phi.rows != phi.cols:
        raise ValueError(f"cannot unpack: matrix is {phi.rows}x{phi.cols}, not square")
    if not phi.is_identity():
        raise ValueError("cannot unpack: only the identity matrix is invertible by rearrangement")
    B = phi.config.block_size
    y = unpack_measurements(mt.data, phi.rows)            # T, 3, Hb, Wb, N
    planes = blocks_to_frame(y, B)                        # T, 3, H, W
    frames = np.moveaxis(planes, 1, -1)
    return VideoClip(np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------- file formats

VID_MAGIC = b"VID1"
MST_MAGIC = b"MST1"
_VID_HEADER = struct.Struct("<4sIII")
_MST_HEADER = struct.Struct("<4sIIIIHI")


def clip_to_bytes(clip: VideoClip) -> bytes:
    T, H, W, _ = clip.shape
    return _VID_HEADER.pack(VID_MAGIC, T, H, W) + np.ascontiguousarray(clip.frames).tobytes()


def clip_from_bytes(buf: bytes, name: str = "<bytes>") -> VideoClip:
    if len(buf) < _VID_HEADER.size:
        raise FormatError(f"{name}: truncated clip file")
    magic, T, H, W = _VID_HEADER.unpack_from(buf)
    if magic != VID_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    expected = _VID_HEADER.size + T * H * W * 3
    if len(buf) != expected or T < 1:
        raise FormatError(f"{name}: expected {expected} bytes, found {len(buf)}")
    frames = np.frombuffer(buf, dtype=np.uint8, offset=_VID_HEADER.size)
    return VideoClip(frames.reshape(T, H, W, 3).copy())


def save_clip(clip: VideoClip, path) -> None:
    Path(path).write_bytes(clip_to_bytes(clip))


def load_clip(path) -> VideoClip:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return clip_from_bytes(buf, str(path))


def tensor_to_bytes(mt: MeasurementTensor) -> bytes:
    T, hb, wb, C = mt.shape
    head = _MST_HEADER.pack(MST_MAGIC, T, hb, wb, C, mt.block_size, mt.measurements)
    body = head + np.ascontiguousarray(mt.data, dtype="<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def tensor_from_bytes(buf: bytes, name: str = "<bytes>") -> MeasurementTensor:
    if len(buf) < _MST_HEADER.size + 4:
        raise FormatError(f"{name}: truncated tensor file")
    magic, T, hb, wb, C, B, M = _MST_HEADER.unpack_from(buf)
    if magic != MST_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    expected = _MST_HEADER.size + 4 * T * hb * wb * C + 4
    if len(buf) != expected:
        raise FormatError(f"{name}: expected {expected} bytes, found {len(buf)}")
    (crc,) = struct.unpack_from("<I", buf, expected - 4)
    if zlib.crc32(buf[:expected - 4]) != crc:
        raise ChecksumError(f"{name}: CRC32 mismatch")
    if C != 3 * M:
        raise FormatError(f"{name}: C={C} is not 3*M={3 * M}")
    data = np.frombuffer(buf, dtype="<f4", count=T * hb * wb * C, offset=_MST_HEADER.size)
    return MeasurementTensor(data.astype(np.float64).reshape(T, hb, wb, C), B, M)


def save_tensor(mt: MeasurementTensor, path) -> None:
    Path(path).write_bytes(tensor_to_bytes(mt))


def load_tensor(path) -> MeasurementTensor:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return tensor_from_bytes(buf, str(path))
