"""Thresholding, overlap scores, contour distances and dataset diversity."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from irisnet.tensor import Tensor


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def binarize(prob, tau: float = 0.1) -> np.ndarray:
    """``1`` where ``prob >= tau``; returns uint8."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold tau must lie in (0, 1), got {tau}")
    return (_arr(prob) >= tau).astype(np.uint8)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def iou(a, b) -> float:
    """|a and b| / |a or b| for binary masks; 1.0 when both are empty."""
    a, b = _pair(a, b)
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def soft_iou(p, t) -> float:
    """sum(min(p, t)) / sum(max(p, t)); reduces to :func:`iou` on hard maps."""
    p, t = _pair(p, t)
    den = np.maximum(p, t).sum()
    if den == 0:
        return 1.0
    return float(np.minimum(p, t).sum() / den)


def miou(pairs: Iterable[tuple]) -> float:
    scores = [iou(a, b) for a, b in pairs]
    if not scores:
        raise ValueError("miou needs at least one (pred, gt) pair")
    return float(np.mean(scores))


def msd(a, b) -> float:
    """Mean Sum of Distances between two point sets, in pixels.

    Each point contributes its distance to the nearest point of the other
    contour; the total is divided by ``len(a) + len(b)``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("msd needs two nonempty contours")
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return float((d.min(axis=1).sum() + d.min(axis=0).sum()) / (len(a) + len(b)))


def px_to_mm(px: float, scale: float = 0.15) -> float:
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return px * scale


def dataset_diversity(images: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """RMS distance of each image from the pixelwise mean image, and the mean of those distances."""
    if len(images) < 2:
        raise ValueError("dataset_diversity needs at least 2 images")
    shape = np.shape(images[0])
    for i, im in enumerate(images):
        if np.shape(im) != shape:
            raise ValueError(f"image {i} has shape {np.shape(im)}, expected {shape}")
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    mean = stack.mean(axis=0)
    dist = np.sqrt(((stack - mean) ** 2).reshape(len(stack), -1).mean(axis=1))
    return dist, float(dist.mean())
