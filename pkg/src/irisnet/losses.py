"""Dice and binary cross-entropy losses on two-channel probability maps.

Both return single-element tensors and record themselves on the active tape.
"""

from __future__ import annotations

import numpy as np

from irisnet.autodiff import record
from irisnet.tensor import ShapeError, Tensor

DICE_SMOOTH = 1e-6
BCE_CLAMP = 1e-7


def _validate(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.ndim != 4 or pred.shape[1] != 2:
        raise ShapeError(f"expected B x 2 x H x W maps, got {pred.shape}")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("target must be binary (values in {0, 1})")
    if not np.all(t[:, 0] + t[:, 1] == 1):
        raise ValueError("target channels must be one-hot per pixel")
    p = pred.data
    if p.min() < 0 or p.max() > 1:
        raise ValueError(f"pred must hold probabilities in [0, 1], got range [{p.min()}, {p.max()}]")


def dice_loss(pred: Tensor, target: Tensor, smooth: float = DICE_SMOOTH) -> Tensor:
    """``1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)`` on the foreground channel, pooled over the batch."""
    _validate(pred, target)
    p, t = pred.data[:, 1], target.data[:, 1]
    inter = float((p * t).sum())
    denom = float(p.sum() + t.sum()) + smooth
    coef = (2.0 * inter + smooth) / denom
    out = Tensor._wrap(np.array([1.0 - coef]))

    def backward(g):
        gp = np.zeros(pred.shape)
        gp[:, 1] = -g[0] * (2.0 * t * denom - (2.0 * inter + smooth)) / denom**2
        return (gp, None)

    record("dice_loss", (pred, target), out, backward)
    return out


def bce_loss(pred: Tensor, target: Tensor, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean over every pixel and channel of ``-[t ln(p+c) + (1-t) ln(1-p+c)]``.

    Each log argument is divided by ``1+c`` so a perfect prediction scores
    exactly 0 rather than ``-ln(1+c)``; the gradient is unaffected.
    """
    _validate(pred, target)
    p, t = pred.data, target.data
    n = p.size
    top = 1.0 + clamp
    val = -(t * np.log((p + clamp) / top) + (1.0 - t) * np.log((1.0 - p + clamp) / top)).sum() / n
    out = Tensor._wrap(np.array([val]))

    def backward(g):
        return (-g[0] * (t / (p + clamp) - (1.0 - t) / (1.0 - p + clamp)) / n, None)

    record("bce_loss", (pred, target), out, backward)
    return out
