"""Full-batch Adam training with validation-based early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Tape, Tensor

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainingLog:
    best_score: float
    best_epoch: int
    epochs_run: int
    losses: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)


def fit_early_stopping(
    params: Sequence[Tensor],
    loss_fn: Callable[[], Tensor],
    score_fn: Callable[[], tuple[float, float]],
    lr: float,
    max_epochs: int,
    patience: int,
    min_epochs: int = 0,
) -> TrainingLog:
    """Minimise ``loss_fn`` with Adam and restore the parameters of the best validation epoch.

    ``score_fn`` returns ``(validation macro F1, validation loss)``; an epoch
    improves when its F1 is higher, or equal with a lower loss.  Training stops
    once ``patience`` epochs pass without improvement, but never before
    ``min_epochs`` epochs have run.
    """
    opt = Adam(params, lr=lr)
    best, best_loss, best_epoch, wait = -np.inf, np.inf, -1, 0
    snapshot = [p.values.copy() for p in params]
    log = TrainingLog(best, best_epoch, 0)
    for epoch in range(max_epochs):
        with Tape() as tape:
            loss = loss_fn()
        value = float(loss.values)
        if not np.isfinite(value):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        tape.backward(loss)
        opt.step()
        score, val_loss = score_fn()
        log.losses.append(value)
        log.scores.append(score)
        if score > best or (score == best and val_loss < best_loss):
            best, best_loss, best_epoch, wait = score, val_loss, epoch, 0
            snapshot = [p.values.copy() for p in params]
        else:
            wait += 1
        if epoch + 1 >= min_epochs and wait >= patience:
            break
    for p, saved in zip(params, snapshot):
        p.values = saved
        p.grad = None
    log.best_score, log.best_epoch, log.epochs_run = best, best_epoch, len(log.losses)
    logger.debug("stopped after %d epochs, best %.4f at %d", log.epochs_run, best, best_epoch)
    return log
