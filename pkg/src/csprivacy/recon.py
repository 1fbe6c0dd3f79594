"""Block reconstruction by ISTA in a DCT basis, and the key-privacy gap.

The privacy argument is empirical: measurements taken with a secret matrix
reconstruct well only with that matrix. :func:`privacy_gap` measures the
PSNR difference between decoding with the true key and with a wrong one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import NumericalError, Rng, psnr
from .packing import VideoClip, pack_array, pad_clip, unpack_measurements
from .sensing import SensingMatrix, blocks_to_frame


@dataclass(frozen=True)
class ReconConfig:
    iterations: int = 1000
    step: float | None = None  # None: 0.95 / (power-iteration estimate of ||A||^2)
    lam: float = 0.01
    sparsity: int | None = None  # set to run iterative hard thresholding instead (pair with step=1.0)
    power_iterations: int = 20
    safety: float = 0.95

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


def dct_matrix(B: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, rows are basis functions."""
    if B < 1:
        raise ValueError("B must be >= 1")
    k = np.arange(B)[:, None]
    n = np.arange(B)[None, :]
    D = np.cos(np.pi * (2 * n + 1) * k / (2 * B)) * np.sqrt(2.0 / B)
    D[0] /= np.sqrt(2.0)
    return D


def dct2_forward(block) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    D = dct_matrix(block.shape[0])
    return D @ block @ D.T


def dct2_inverse(coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    D = dct_matrix(coeffs.shape[0])
    return D.T @ coeffs @ D


def synthesis_matrix(B: int) -> np.ndarray:
    """N x N matrix mapping row-major DCT coefficients to row-major pixels."""
    D = dct_matrix(B)
    return np.kron(D, D).T


def power_iteration(A: np.ndarray, iters: int = 20, seed: int = 0) -> float:
    """Estimate of the largest eigenvalue of A^T A (squared spectral norm)."""
    v = Rng(seed).gaussian(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return float(v @ (A.T @ (A @ v)))


def soft_threshold(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _hard_threshold(x, k):
    if k >= x.shape[0]:
        return x
    keep = np.argpartition(-np.abs(x), k - 1, axis=0)[:k]
    out = np.zeros_like(x)
    np.put_along_axis(out, keep, np.take_along_axis(x, keep, axis=0), axis=0)
    return out


def lasso_objective(A, y, theta, lam):
    """Per-column 0.5 * ||y - A theta||^2 + lam * ||theta||_1."""
    r = y - A @ theta
    return 0.5 * (r * r).sum(axis=0) + lam * np.abs(theta).sum(axis=0)


def step_size(A: np.ndarray, cfg: ReconConfig) -> float:
    if cfg.step is not None:
        return cfg.step
    L = power_iteration(A, cfg.power_iterations)
    if L <= 0:
        return 1.0
    return cfg.safety / L


def ista_solve(A, y, cfg: ReconConfig, track: bool = False):
    """Sparse coefficients for ``y ~ A theta``; columns of ``y`` solved jointly.

    With ``track`` also returns the objective after every iteration
    (``iterations + 1`` rows, first row at theta = 0).
    """
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if y.shape[0] != A.shape[0]:
        raise ValueError(f"{y.shape[0]} measurements for a {A.shape[0]}-row operator")
    step = step_size(A, cfg)
    theta = np.zeros((A.shape[1], y.shape[1]))
    At = A.T
    objs = [lasso_objective(A, y, theta, cfg.lam)] if track else None
    for _ in range(cfg.iterations):
        z = theta + step * (At @ (y - A @ theta))
        if cfg.sparsity is not None:
            theta = _hard_threshold(z, cfg.sparsity)
        else:
            theta = soft_threshold(z, step * cfg.lam)
        if track:
            objs.append(lasso_objective(A, y, theta, cfg.lam))
    if not np.isfinite(theta).all():
        raise NumericalError("ISTA produced non-finite coefficients")
    if squeeze:
        theta = theta[:, 0]
    if track:
        objs = np.array(objs)
        return theta, (objs[:, 0] if squeeze else objs)
    return theta


def ista_reconstruct(y, phi: SensingMatrix, cfg: ReconConfig = ReconConfig(), track: bool = False):
    """Reconstruct a B x B block (or a stack of blocks for 2-D ``y``, one per column)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != phi.rows:
        raise ValueError(f"got {y.shape[0]} measurements, matrix has {phi.rows} rows")
    B = phi.config.block_size
    Psi = synthesis_matrix(B)
    out = ista_solve(phi.entries @ Psi, y, cfg, track)
    theta, objs = out if track else (out, None)
    x = Psi @ theta
    blocks = x.reshape(B, B) if x.ndim == 1 else x.T.reshape(-1, B, B)
    return (blocks, objs) if track else blocks


def reconstruct_blocks(Y, phi: SensingMatrix, cfg: ReconConfig) -> np.ndarray:
    """Columns of measurements -> columns of pixel vectors.

    A square matrix is inverted directly; the system is then determined and
    needs no sparsity prior.
    """
    if phi.rows == phi.cols:
        return np.linalg.solve(phi.entries, Y)
    Psi = synthesis_matrix(phi.config.block_size)
    return Psi @ ista_solve(phi.entries @ Psi, Y, cfg)


def reconstruct_array(data: np.ndarray, phi: SensingMatrix, cfg: ReconConfig) -> np.ndarray:
    """Packed T x Hb x Wb x 3M measurements -> scaled frames T x H x W x 3."""
    y = unpack_measurements(data, phi.rows)               # T, 3, Hb, Wb, M
    lead = y.shape[:-1]
    X = reconstruct_blocks(y.reshape(-1, phi.rows).T, phi, cfg)
    planes = blocks_to_frame(X.T.reshape(*lead, phi.cols), phi.config.block_size)
    return np.moveaxis(planes, 1, -1)


def privacy_gap(clip: VideoClip, true_phi: SensingMatrix, wrong_phi: SensingMatrix,
                cfg: ReconConfig = ReconConfig()):
    """``(psnr_true, psnr_wrong, gap)`` in dB for one clip, peak 1 on [0, 1] pixels.

    The clip is encoded with ``true_phi`` and decoded once with each matrix;
    reconstructions are clipped to [0, 1] and cropped to the clip size.
    """
    if (true_phi.rows, true_phi.cols) != (wrong_phi.rows, wrong_phi.cols):
        raise ValueError("true and wrong matrices must have the same shape")
    if true_phi.config.block_size != wrong_phi.config.block_size:
        raise ValueError("true and wrong matrices must use the same block size")
    T, H, W, _ = clip.shape
    padded = pad_clip(clip, true_phi.config.block_size)
    y = pack_array(padded.scaled(), true_phi)
    ref = clip.scaled()
    scores = []
    for phi in (true_phi, wrong_phi):
        rec = np.clip(reconstruct_array(y, phi, cfg), 0.0, 1.0)[:, :H, :W]
        scores.append(psnr(rec, ref, 1.0))
    p_true, p_wrong = scores
    gap = 0.0 if p_true == p_wrong else p_true - p_wrong
    if math.isnan(gap):
        raise NumericalError("privacy gap is undefined")
    return p_true, p_wrong, gap
