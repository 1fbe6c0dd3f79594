"""Desk-scale experiments: matrix invariance, fall fine-tuning, key privacy.

Each function runs fully in memory on synthetic clips and returns plain
dicts, so the scripts in ``scripts/`` and the acceptance tests share them.
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from .core import Rng
from .data import render_clip, synth_arrays
from .nn.network import NetworkConfig, reinit_head
from .nn.optim import TrainSchedule
from .nn.training import evaluate, train
from .packing import VideoClip, pack_array, pad_clip
from .recon import ReconConfig, privacy_gap
from .sensing import build_matrix, make_config

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "bernoulli", "smm", "lsmm", "convcs")
RATIOS = (4, 16, 32, 64)


def encode_arrays(frames: np.ndarray, phi) -> np.ndarray:
    """uint8 clips N x T x H x W x 3 -> packed measurements N x T x Hb x Wb x 3M."""
    B = phi.config.block_size
    return np.stack([pack_array(pad_clip(VideoClip(f), B).scaled(), phi) for f in frames])


def encode_splits(splits: dict, phi) -> dict:
    return {name: (encode_arrays(x, phi), y) for name, (x, y) in splits.items()}


def _fit(splits, config, schedule, seed, init=None):
    t0 = time.perf_counter()
    params, history = train(splits["train"], splits["val"], config, schedule, seed, init=init)
    acc, confusion = evaluate(params, config, *splits["test"])
    return params, {"accuracy": acc, "confusion": confusion.tolist(), "epochs": len(history),
                    "best_val_loss": min(h["val_loss"] for h in history),
                    "seconds": time.perf_counter() - t0, "history": history}


def table2_analogue(families=FAMILIES, ratio: int = 4, B: int = 16, clips_per_class: int = 100,
                    T: int = 8, H: int = 64, W: int = 64, data_seed: int = 0, matrix_seed: int = 1,
                    train_seed: int = 0, schedule: TrainSchedule = TrainSchedule(max_epochs=30),
                    stem_channels: int = 16, table=None):
    """Train the 10-class net once per sensing family at one ratio.

    Returns ``{family: result}`` with test accuracy, confusion and history.
    """
    raw = synth_arrays(10, clips_per_class, T, H, W, data_seed)
    results = {}
    for fam in families:
        phi = build_matrix(make_config(fam, B, ratio, matrix_seed))
        splits = encode_splits(raw, phi)
        kw = {} if table is None else {"table": table}
        cfg = NetworkConfig(splits["train"][0].shape[1:], 10, stem_channels, **kw)
        _, res = _fit(splits, cfg, schedule, train_seed)
        log.info("%s r=%d: accuracy %.3f after %d epochs (%.0f s)", fam, ratio, res["accuracy"],
                 res["epochs"], res["seconds"])
        results[fam] = res
    return results


def fall_analogue(ratios=RATIOS, family: str = "smm", B: int = 16, pretrain_clips: int = 100,
                  fall_clips: int = 300, T: int = 8, H: int = 64, W: int = 64, data_seed: int = 0,
                  fall_seed: int = 1, matrix_seed: int = 1, train_seed: int = 0,
                  pretrain: TrainSchedule = TrainSchedule(max_epochs=15),
                  finetune: TrainSchedule = TrainSchedule(max_epochs=10), stem_channels: int = 16):
    """Pretrain on the 10-class set, then fine-tune to fall / non-fall, per ratio.

    The measurement geometry (channel count 3M) changes with the ratio, so
    every ratio gets its own 10-class checkpoint before the head swap.
    """
    raw10 = synth_arrays(10, pretrain_clips, T, H, W, data_seed)
    raw2 = synth_arrays(2, fall_clips, T, H, W, fall_seed)
    results = {}
    for r in ratios:
        phi = build_matrix(make_config(family, B, r, matrix_seed))
        s10, s2 = encode_splits(raw10, phi), encode_splits(raw2, phi)
        cfg10 = NetworkConfig(s10["train"][0].shape[1:], 10, stem_channels)
        params, pre = _fit(s10, cfg10, pretrain, train_seed)
        cfg2 = replace(cfg10, num_classes=2)
        init = reinit_head(params, cfg2, train_seed + 1)
        _, fine = _fit(s2, cfg2, finetune, train_seed, init=init)
        log.info("%s r=%d: pretrain %.3f, fall %.3f", family, r, pre["accuracy"], fine["accuracy"])
        results[r] = {"pretrain": pre, "finetune": fine, "accuracy": fine["accuracy"]}
    return results


def scratch_fall_accuracy(ratio: int, family: str = "smm", B: int = 16, fall_clips: int = 300,
                          T: int = 8, H: int = 64, W: int = 64, fall_seed: int = 1, matrix_seed: int = 1,
                          train_seed: int = 0, schedule: TrainSchedule = TrainSchedule(max_epochs=10)):
    """Binary fall accuracy without pretraining, for comparison with :func:`fall_analogue`."""
    phi = build_matrix(make_config(family, B, ratio, matrix_seed))
    s2 = encode_splits(synth_arrays(2, fall_clips, T, H, W, fall_seed), phi)
    cfg = NetworkConfig(s2["train"][0].shape[1:], 2)
    return _fit(s2, cfg, schedule, train_seed)[1]


def privacy_experiment(wrong_seeds=range(2, 22), family: str = "gaussian", ratio: int = 4, B: int = 16,
                       true_seed: int = 1, motions=("walk", "fall", "crossing"), T: int = 2,
                       H: int = 64, W: int = 64, clip_seed: int = 0, noise_sigma: float = 0.0,
                       recon: ReconConfig = ReconConfig()):
    """PSNR with the true key against each wrong key on a few clips.

    ``min_gap`` is over every (wrong key, clip) pair; ``mean_gap`` averages them.

    ``noise_sigma=0`` renders clean piecewise-smooth clips, the compressible
    regime the DCT prior is meant for.
    """
    rng = Rng(clip_seed)
    clips = [render_clip(m, T, H, W, rng.spawn(), noise_sigma=noise_sigma) for m in motions]
    true_phi = build_matrix(make_config(family, B, ratio, true_seed))
    rows = []
    for ws in wrong_seeds:
        if ws == true_seed:
            raise ValueError("wrong-key seeds must differ from the true seed")
        wrong_phi = build_matrix(make_config(family, B, ratio, ws))
        per = [privacy_gap(c, true_phi, wrong_phi, recon) for c in clips]
        pt, pw, gap = (float(np.mean(v)) for v in zip(*per))
        rows.append({"wrong_seed": ws, "psnr_true": pt, "psnr_wrong": pw, "gap": gap,
                     "clip_gaps": [g for _, _, g in per]})
    gaps = [g for r in rows for g in r["clip_gaps"]]
    return {"rows": rows, "mean_gap": float(np.mean(gaps)), "min_gap": float(np.min(gaps))}

