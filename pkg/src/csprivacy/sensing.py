"""Key-seeded measurement matrices and block compressive encoding.

A matrix is fully determined by its :class:`SensingConfig`; the seed plays
the role of a symmetric key. Blocks are rasterised row-major into vectors of
length ``N = B*B`` and encoded as ``y = phi @ x``.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ChecksumError, FormatError, Rng


class Family(enum.IntEnum):
    GAUSSIAN = 0
    BERNOULLI = 1
    SMM = 2
    LSMM = 3
    CONVCS = 4
    IDENTITY = 5

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, Family):
            return name
        try:
            return cls[str(name).upper().replace("-", "").replace("_", "")]
        except KeyError:
            raise ValueError(f"unknown sensing family {name!r}") from None


@dataclass(frozen=True)
class SensingConfig:
    family: Family
    block_size: int
    measurements: int
    seed: int = 0
    sub_block: int = 0
    window: int = 0
    kernel: int = 0
    stride: int = 0

    @property
    def n(self) -> int:
        return self.block_size * self.block_size

    @property
    def ratio(self) -> float:
        return self.n / self.measurements


@dataclass(frozen=True, eq=False)
class SensingMatrix:
    entries: np.ndarray
    config: SensingConfig

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def ratio(self) -> float:
        return self.cols / self.rows

    def __eq__(self, other):
        if not isinstance(other, SensingMatrix):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.entries, other.entries)

    def is_identity(self) -> bool:
        return self.rows == self.cols and np.array_equal(self.entries, np.eye(self.rows))


def _isqrt_exact(n: int) -> int:
    b = int(round(n ** 0.5))
    if b * b != n:
        raise ValueError(f"block length {n} is not a perfect square")
    return b


def _check_mn(m: int, n: int) -> None:
    if m < 1 or n < 1 or m > n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")


def build_gaussian(m: int, n: int, seed: int) -> SensingMatrix:
    """I.i.d. N(0, 1/m) entries."""
    _check_mn(m, n)
    rng = Rng(seed)
    phi = rng.gaussian(m * n).reshape(m, n) / np.sqrt(m)
    cfg = SensingConfig(Family.GAUSSIAN, _isqrt_exact(n), m, seed)
    return SensingMatrix(phi, cfg)


def build_bernoulli(m: int, n: int, seed: int) -> SensingMatrix:
    """I.i.d. entries uniform over {+1/sqrt(m), -1/sqrt(m)}."""
    _check_mn(m, n)
    rng = Rng(seed)
    phi = rng.signs(m * n).reshape(m, n) / np.sqrt(m)
    cfg = SensingConfig(Family.BERNOULLI, _isqrt_exact(n), m, seed)
    return SensingMatrix(phi, cfg)


def smm_column_order(B: int, s: int) -> np.ndarray:
    """Block-raster column indices regrouped sub-block by sub-block.

    ``phi[:, smm_column_order(B, s)]`` is exactly block diagonal for an SMM
    matrix.
    """
    q = B // s
    idx = np.arange(B * B).reshape(q, s, q, s)
    return idx.transpose(0, 2, 1, 3).reshape(-1)


def build_smm(m: int, B: int, s: int, seed: int) -> SensingMatrix:
    """Structural matrix: one shared Gaussian applied to every s x s sub-block.

    Sub-blocks are visited in raster order and each contributes a contiguous
    group of ``m / (B/s)**2`` rows.
    """
    if s < 1 or B % s:
        raise ValueError(f"sub-block {s} must divide block size {B}")
    q2 = (B // s) ** 2
    if m < 1 or m % q2:
        raise ValueError(f"m={m} must be a positive multiple of {q2} sub-blocks")
    n = B * B
    _check_mn(m, n)
    m_sub = m // q2
    shared = Rng(seed).gaussian(m_sub * s * s).reshape(m_sub, s * s) / np.sqrt(m_sub)
    grouped = np.kron(np.eye(q2), shared)
    phi = np.zeros((m, n))
    phi[:, smm_column_order(B, s)] = grouped
    cfg = SensingConfig(Family.SMM, B, m, seed, sub_block=s)
    return SensingMatrix(phi, cfg)


def lsmm_window_starts(m: int, n: int, w: int) -> np.ndarray:
    step = (n - w) / max(m - 1, 1)
    # round half up; Python's round() is banker's rounding
    return np.floor(np.arange(m) * step + 0.5).astype(np.int64)


def build_lsmm(m: int, n: int, w: int, seed: int) -> SensingMatrix:
    """Local structural matrix: row i is a +-1/sqrt(w) window of w contiguous pixels."""
    if w < 1 or w > n:
        raise ValueError(f"window w={w} must satisfy 1 <= w <= n={n}")
    _check_mn(m, n)
    signs = Rng(seed).signs(m * w).reshape(m, w) / np.sqrt(w)
    phi = np.zeros((m, n))
    for i, start in enumerate(lsmm_window_starts(m, n, w)):
        phi[i, start:start + w] = signs[i]
    cfg = SensingConfig(Family.LSMM, _isqrt_exact(n), m, seed, window=w)
    return SensingMatrix(phi, cfg)


def conv_positions(B: int, k: int, t: int) -> int:
    if k < 1 or t < 1 or k > B or (B - k) % t:
        raise ValueError(f"kernel {k} / stride {t} do not tile block size {B}")
    return (B - k) // t + 1


def build_conv_cs(m: int, B: int, k: int, t: int, seed: int) -> SensingMatrix:
    """Matrix form of a valid, strided 2D convolution with random kernels.

    Rows are kernel-major: row ``j * P*P + pi * P + pj`` holds kernel ``j``
    placed at output position ``(pi, pj)`` of the ``P x P`` output grid.
    """
    P = conv_positions(B, k, t)
    if m < 1 or m % (P * P):
        raise ValueError(f"m={m} must be a positive multiple of {P * P} positions")
    _check_mn(m, B * B)
    n_kernels = m // (P * P)
    kernels = Rng(seed).gaussian(n_kernels * k * k).reshape(n_kernels, k, k) / k
    phi = np.zeros((n_kernels, P, P, B, B))
    for pi in range(P):
        for pj in range(P):
            phi[:, pi, pj, pi * t:pi * t + k, pj * t:pj * t + k] = kernels
    cfg = SensingConfig(Family.CONVCS, B, m, seed, kernel=k, stride=t)
    return SensingMatrix(phi.reshape(m, B * B), cfg)


def conv_cs_kernels(cfg: SensingConfig) -> np.ndarray:
    """Regenerate the kernels behind a ConvCS config, shape (kernels, k, k)."""
    P = conv_positions(cfg.block_size, cfg.kernel, cfg.stride)
    n_kernels = cfg.measurements // (P * P)
    k = cfg.kernel
    return Rng(cfg.seed).gaussian(n_kernels * k * k).reshape(n_kernels, k, k) / k


def build_identity(B: int) -> SensingMatrix:
    return SensingMatrix(np.eye(B * B), SensingConfig(Family.IDENTITY, B, B * B, 0))


def build_matrix(cfg: SensingConfig) -> SensingMatrix:
    """Regenerate a matrix from its config (the key)."""
    fam = Family.parse(cfg.family)
    B, m, n = cfg.block_size, cfg.measurements, cfg.n
    if fam is Family.GAUSSIAN:
        return build_gaussian(m, n, cfg.seed)
    if fam is Family.BERNOULLI:
        return build_bernoulli(m, n, cfg.seed)
    if fam is Family.SMM:
        return build_smm(m, B, cfg.sub_block, cfg.seed)
    if fam is Family.LSMM:
        return build_lsmm(m, n, cfg.window, cfg.seed)
    if fam is Family.CONVCS:
        return build_conv_cs(m, B, cfg.kernel, cfg.stride, cfg.seed)
    if m != n:
        raise ValueError("identity matrix requires r = 1")
    return build_identity(B)


def default_family_params(family, B: int, m: int) -> dict:
    """Sub-block, window, or kernel geometry used when none is given.

    SMM uses s = B/2 (s = B when M is not a multiple of 4); LSMM a window of N/4; ConvCS non-overlapping B/2
    kernels (2 x 2 positions), falling back to a single full-block position.
    """
    fam = Family.parse(family)
    n = B * B
    if fam is Family.SMM:
        half = B % 2 == 0 and m % 4 == 0
        return {"sub_block": B // 2 if half else B}
    if fam is Family.LSMM:
        return {"window": max(1, n // 4)}
    if fam is Family.CONVCS:
        candidates = [B // 2, B] if B % 2 == 0 else [B]
        for k in candidates:
            P = B // k
            if m % (P * P) == 0 and m // (P * P) <= k * k:
                return {"kernel": k, "stride": k}
        raise ValueError(f"no ConvCS geometry for B={B}, m={m}")
    return {}


def make_config(family, B: int, ratio: int, seed: int, **params) -> SensingConfig:
    """Config for block size ``B`` at compression ratio ``r = N/M``."""
    fam = Family.parse(family)
    n = B * B
    if ratio < 1 or n % ratio:
        raise ValueError(f"ratio {ratio} does not divide N={n}")
    m = n // ratio
    if fam is Family.IDENTITY and ratio != 1:
        raise ValueError("identity matrix requires r = 1")
    merged = default_family_params(fam, B, m)
    merged.update({k: v for k, v in params.items() if v})
    if fam is Family.IDENTITY:
        seed = 0
    return SensingConfig(fam, B, m, seed, **merged)


def encode_block(phi: SensingMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != phi.cols:
        raise ValueError(f"block length {x.shape[0]} != matrix columns {phi.cols}")
    return phi.entries @ x


def frame_to_blocks(frame: np.ndarray, B: int) -> np.ndarray:
    """(..., H, W) -> (..., H/B, W/B, B*B), each block rasterised row-major."""
    *lead, H, W = frame.shape
    if H % B or W % B:
        raise ValueError(f"frame {H}x{W} not divisible by block size {B}")
    hb, wb = H // B, W // B
    x = frame.reshape(*lead, hb, B, wb, B)
    nl = len(lead)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3)
    return x.reshape(*lead, hb, wb, B * B)


def blocks_to_frame(blocks: np.ndarray, B: int) -> np.ndarray:
    """Inverse of :func:`frame_to_blocks`."""
    *lead, hb, wb, n = blocks.shape
    if n != B * B:
        raise ValueError(f"block length {n} != {B}*{B}")
    nl = len(lead)
    x = blocks.reshape(*lead, hb, wb, B, B)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3)
    return x.reshape(*lead, hb * B, wb * B)


def encode_frame(phi: SensingMatrix, frame) -> np.ndarray:
    """Encode every B x B block of a single-channel frame -> (H/B, W/B, M)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError("encode_frame expects a single-channel H x W frame")
    B = phi.config.block_size
    return frame_to_blocks(frame, B) @ phi.entries.T


# ---------------------------------------------------------------- file format

_CSM_HEADER = struct.Struct("<4sBHIIQHHHH")
CSM_MAGIC = b"CSM1"


def matrix_to_bytes(phi: SensingMatrix) -> bytes:
    c = phi.config
    head = _CSM_HEADER.pack(CSM_MAGIC, int(c.family), c.block_size, phi.rows, phi.cols,
                            c.seed, c.sub_block, c.window, c.kernel, c.stride)
    body = head + np.ascontiguousarray(phi.entries, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def matrix_from_bytes(buf: bytes, name: str = "<bytes>") -> SensingMatrix:
    if len(buf) < _CSM_HEADER.size + 4:
        raise FormatError(f"{name}: truncated matrix file")
    magic, fam, B, M, N, seed, s, w, k, t = _CSM_HEADER.unpack_from(buf)
    if magic != CSM_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    expected = _CSM_HEADER.size + 8 * M * N + 4
    if len(buf) != expected:
        raise FormatError(f"{name}: expected {expected} bytes, found {len(buf)}")
    (crc,) = struct.unpack_from("<I", buf, expected - 4)
    if zlib.crc32(buf[:expected - 4]) != crc:
        raise ChecksumError(f"{name}: CRC32 mismatch")
    try:
        family = Family(fam)
    except ValueError:
        raise FormatError(f"{name}: unknown family tag {fam}") from None
    if N != B * B:
        raise FormatError(f"{name}: N={N} inconsistent with B={B}")
    entries = np.frombuffer(buf, dtype="<f8", count=M * N, offset=_CSM_HEADER.size)
    cfg = SensingConfig(family, B, M, seed, sub_block=s, window=w, kernel=k, stride=t)
    return SensingMatrix(entries.astype(np.float64).reshape(M, N), cfg)


def save_matrix(phi: SensingMatrix, path) -> None:
    Path(path).write_bytes(matrix_to_bytes(phi))


def load_matrix(path) -> SensingMatrix:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return matrix_from_bytes(buf, str(path))
