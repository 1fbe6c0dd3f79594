"""Epoch loop, evaluation and the training history record."""

from __future__ import annotations

import copy
import logging
import math

import numpy as np

from ..core import NumericalError, Rng
from .network import (ConvNet3D, NetworkConfig, init_params, network_backward_from_logits,
                      network_forward, softmax_cross_entropy)
from .optim import AdamState, PlateauSchedule, TrainSchedule, adam_step

log = logging.getLogger(__name__)


def batched_logits(params, config, x, batch_size=64):
    parts = [network_forward(params, config, x[i:i + batch_size])
             for i in range(0, len(x), batch_size)]
    return np.concatenate(parts, axis=0)


def dataset_loss(params, config, x, y, batch_size=64):
    logits = batched_logits(params, config, x, batch_size)
    loss, _ = softmax_cross_entropy(logits, y)
    return loss, float((logits.argmax(axis=1) == y).mean())


def train(train_set, val_set, config: NetworkConfig, schedule: TrainSchedule, seed: int,
          init=None, callback=None):
    """Train with ADAM, plateau lr drops and early stopping on validation loss.

    ``train_set`` and ``val_set`` are ``(x, y)`` pairs with ``x`` shaped
    ``N x T x Hb x Wb x C``. ``init`` optionally supplies starting parameters
    (fine-tuning). Returns ``(best_params, history)``; the history has one
    dict per epoch plus a ``status`` entry on the last one.
    """
    xtr, ytr = np.asarray(train_set[0], dtype=np.float64), np.asarray(train_set[1], dtype=np.int64)
    xva, yva = np.asarray(val_set[0], dtype=np.float64), np.asarray(val_set[1], dtype=np.int64)
    if len(xtr) == 0 or len(xva) == 0:
        raise ValueError("training and validation splits must be non-empty")
    if xtr.shape[1:] != config.input_shape or xva.shape[1:] != config.input_shape:
        raise ValueError(f"data geometry {xtr.shape[1:]} / {xva.shape[1:]} != {config.input_shape}")

    rng = Rng(seed)
    params = copy.deepcopy(init) if init is not None else init_params(config, rng.next_u64())
    shuffle_rng = rng.spawn()
    state = AdamState()
    plateau = PlateauSchedule(schedule)
    best = copy.deepcopy(params)
    history = []
    bs = schedule.batch_size

    for epoch in range(1, schedule.max_epochs + 1):
        lr = plateau.lr
        order = shuffle_rng.permutation(len(xtr))
        total, correct = 0.0, 0
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            logits, caches = network_forward(params, config, xtr[idx], keep_cache=True)
            loss, dlogits = softmax_cross_entropy(logits, ytr[idx])
            if not math.isfinite(loss):
                history.append({"epoch": epoch, "lr": lr, "status": "diverged"})
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            grads = network_backward_from_logits(params, caches, dlogits)
            adam_step(params, grads, state, lr)
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == ytr[idx]).sum())
        val_loss, val_acc = dataset_loss(params, config, xva, yva)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        improved = plateau.observe(val_loss)
        if improved:
            best = copy.deepcopy(params)
        record = {"epoch": epoch, "lr": lr, "train_loss": total / len(xtr),
                  "train_acc": correct / len(xtr), "val_loss": val_loss, "val_acc": val_acc,
                  "improved": improved}
        history.append(record)
        log.info("epoch %3d lr %.1e train %.4f (%.3f) val %.4f (%.3f)%s", epoch, lr,
                 record["train_loss"], record["train_acc"], val_loss, val_acc,
                 " *" if improved else "")
        if callback is not None:
            callback(record)
        if plateau.stopped:
            break
    history[-1]["status"] = "early_stop" if plateau.stopped else "max_epochs"
    return best, history


def evaluate(params, config: NetworkConfig, x, y, batch_size: int = 64):
    """Accuracy and K x K confusion matrix (rows: true class, cols: predicted).

    Ties between logits go to the lowest class index (``argmax`` order).
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    pred = batched_logits(params, config, np.asarray(x, dtype=np.float64), batch_size).argmax(axis=1)
    k = config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return float((pred == y).mean()), confusion


def evaluate_net(net: ConvNet3D, x, y):
    return evaluate(net.params, net.config, x, y)
