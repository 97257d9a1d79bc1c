"""Epoch loop: online augmentation, Dice+BCE objective, Adam, validation-driven checkpoints."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from irisnet.augment import augment as augment_sample
from irisnet.autodiff import Tape, backward_pass, record
from irisnet.config import TrainConfig
from irisnet.losses import bce_loss, dice_loss
from irisnet.model import Model, forward, save_checkpoint
from irisnet.optim import OptimizerState, adam_step
from irisnet.phantom import SegmentationSample
from irisnet.tensor import Tensor

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_dice", "train_bce", "val_dice", "val_bce", "seconds", "saved")


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_dice: float
    train_bce: float
    val_dice: float
    val_bce: float
    seconds: float
    saved: bool


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_epoch(self) -> int:
        """Epoch number (1-based) with the lowest validation Dice loss; first one wins ties."""
        if not self.records:
            raise ValueError("empty history")
        return min(self.records, key=lambda r: (r.val_dice, r.epoch)).epoch

    def to_csv(self, include_seconds: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            secs = r.seconds if include_seconds else 0.0
            w.writerow(
                [r.epoch, repr(r.train_dice), repr(r.train_bce), repr(r.val_dice), repr(r.val_bce), f"{secs:.6f}", int(r.saved)]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path, include_seconds: bool = True) -> None:
        Path(path).write_text(self.to_csv(include_seconds))


def stack_batch(samples: Sequence[SegmentationSample]) -> tuple[Tensor, Tensor]:
    x = np.stack([s.image for s in samples])[:, None]
    t = np.stack([s.mask for s in samples])
    return Tensor._wrap(x), Tensor._wrap(t)


def predict(model: Model, images: np.ndarray, batch_size: int = 20) -> np.ndarray:
    """Eval-mode probabilities for an (N, H, W) image stack, shape (N, 2, H, W)."""
    out = []
    for i in range(0, len(images), batch_size):
        x = Tensor._wrap(np.asarray(images[i : i + batch_size], dtype=np.float64)[:, None])
        out.append(forward(model, x, "eval").data)
    return np.concatenate(out)


def evaluate_losses(model: Model, samples: Sequence[SegmentationSample], config: TrainConfig) -> tuple[float, float]:
    """Validation Dice and BCE losses over the whole set, eval mode."""
    probs = predict(model, np.stack([s.image for s in samples]), config.batch_size)
    pred = Tensor._wrap(probs)
    target = Tensor._wrap(np.stack([s.mask for s in samples]))
    return float(dice_loss(pred, target)), float(bce_loss(pred, target))


def _objective(pred: Tensor, target: Tensor, config: TrainConfig) -> tuple[Tensor, float, float]:
    d = dice_loss(pred, target)
    b = bce_loss(pred, target)
    if config.loss == "dice":
        total = d
    elif config.loss == "bce":
        total = b
    else:
        total = _weighted_pair(d, b, config.dice_weight, config.bce_weight)
    return total, float(d), float(b)


def _weighted_pair(a: Tensor, b: Tensor, wa: float, wb: float) -> Tensor:
    out = Tensor._wrap(np.array([wa * a.data[0] + wb * b.data[0]]))
    record("weighted_pair", (a, b), out, lambda g: (wa * g, wb * g))
    return out


def train(
    model: Model,
    train_set: Sequence[SegmentationSample],
    val_set: Sequence[SegmentationSample],
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Model, TrainHistory]:
    """Train in place and return (best model snapshot, history).

    The snapshot (and ``checkpoint_path``, when given) is refreshed whenever
    validation Dice loss improves.  ``model`` itself ends in its final state.
    """
    if not train_set:
        raise TrainingError("training set is empty")
    if not val_set:
        raise TrainingError("validation set is empty")
    if {id(s) for s in train_set} & {id(s) for s in val_set}:
        raise TrainingError("training and validation sets share samples")

    state = OptimizerState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.eps_adam)
    history = TrainHistory()
    best_val = np.inf
    best = model.copy()
    n = len(train_set)
    names = list(model.params)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sum_d = sum_b = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = []
            for i in idx:
                s = train_set[i]
                if config.augment:
                    s = augment_sample(s, np.random.default_rng([config.seed, epoch, int(i)]), config.augmentation)
                batch.append(s)
            x, t = stack_batch(batch)
            try:
                with Tape() as tape:
                    pred = forward(model, x, "train")
                    total, d, b = _objective(pred, t, config)
                grads = backward_pass(tape, wrt=[model.params[k] for k in names])
                model.params, state = adam_step(
                    model.params, {k: grads[model.params[k]] for k in names}, state
                )
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {bi}: {exc}") from exc
            sum_d += d * len(idx)
            sum_b += b * len(idx)

        val_d, val_b = evaluate_losses(model, val_set, config)
        if not (np.isfinite(val_d) and np.isfinite(val_b)):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        saved = val_d < best_val
        if saved:
            best_val = val_d
            best = model.copy()
            if checkpoint_path is not None:
                save_checkpoint(best, checkpoint_path)
        rec = EpochRecord(epoch, sum_d / n, sum_b / n, val_d, val_b, time.perf_counter() - t0, saved)
        history.records.append(rec)
        log.info(
            "epoch %d train dice %.4f bce %.4f | val dice %.4f bce %.4f%s",
            epoch, rec.train_dice, rec.train_bce, val_d, val_b, " *" if saved else "",
        )
        if on_epoch is not None:
            on_epoch(rec)
    return best, history
