"""Mini-batch training loop with early stopping on validation loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset
from .models import Model
from .optim import adam_step, cosine_lr, init_adam


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"          # adam | adamw
    lr0: float = 5e-4
    weight_decay: float = 1e-5
    batch_size: int = 4096
    max_epochs: int = 500
    patience: int = 30
    schedule: str = "cosine"         # cosine | constant
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


def train(
    model: Model,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig = TrainConfig(),
) -> TrainHistory:
    """Train in place; the model ends at its best-validation-epoch weights.

    Shuffling is driven by the config seed, so identical seeds give
    bit-identical histories.  Stops after ``patience`` consecutive epochs
    without validation improvement (patience=0 stops after one epoch).
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptyDataset("train and validation sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    state = init_adam(model.n_params)
    params = model.get_params()
    history = TrainHistory()
    best_val = np.inf
    best_params = params.copy()
    bad_epochs = 0

    n = len(x_train)
    for epoch in range(config.max_epochs):
        lr = (
            cosine_lr(config.lr0, epoch, config.max_epochs)
            if config.schedule == "cosine"
            else config.lr0
        )
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = model.loss_and_grad(x_train[idx], y_train[idx])
            total += loss * len(idx)
            params = adam_step(
                state, params, grads, lr,
                weight_decay=config.weight_decay,
                decoupled=config.optimizer == "adamw",
            )
            model.set_params(params)
        val = model.loss(x_val, y_val)
        history.train_loss.append(total / n)
        history.val_loss.append(val)
        history.lr.append(lr)

        if val < best_val:
            best_val = val
            best_params = params.copy()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
        if bad_epochs >= config.patience:
            history.stopped_early = epoch + 1 < config.max_epochs
            break

    model.set_params(best_params)
    return history
