"""Minibatch training loop with early stopping on validation accuracy."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .model import ResidualClassifier
from .optim import make_optimizer

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    loss: str = "categorical_crossentropy"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")

    def to_dict(self):
        return asdict(self)


def accuracy(model: ResidualClassifier, x, y, batch_size=512) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(model.predict(x, batch_size).argmax(axis=1) == y))


def train(model: ResidualClassifier, x_train, y_train, x_val, y_val, cfg: TrainConfig,
          on_epoch=None):
    """Train ``model`` in place; returns ``(model, history, optimizer)``.

    The model ends up holding the parameters (and BN statistics) of the epoch
    with the best validation accuracy.  ``history`` has one dict per epoch with
    deterministic fields only, so two runs with the same seeds log identically.
    """
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    n = len(x_train)
    history = []
    best_acc, best_state, best_epoch = -1.0, model.state(), -1
    stale = 0
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss, grads = model.loss_and_grads(x_train[idx], y_train[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            opt.step(params, grads)
            total += loss * len(idx)
        val_acc = accuracy(model, x_val, y_val)
        rec = {"epoch": epoch, "train_loss": round(total / n, 8), "val_acc": round(val_acc, 8)}
        history.append(rec)
        log.info("epoch %d loss %.4f val_acc %.4f (%.1fs)", epoch, rec["train_loss"], val_acc,
                 time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(rec)
        if val_acc > best_acc:
            best_acc, best_state, best_epoch = val_acc, model.state(), epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state(*best_state)
    model.trained = True
    history.append({"best_epoch": best_epoch, "best_val_acc": round(best_acc, 8)})
    return model, history, opt
