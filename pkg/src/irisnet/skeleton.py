"""Zhang-Suen thinning and column-scan contour extraction.

Each sub-iteration marks candidates in parallel with the Zhang-Suen
conditions.  Marked pixels are then deleted one at a time, and a deletion
is skipped if, on the current image, it would disconnect the pixel's
neighbours or strip an endpoint.  Plain parallel deletion can erase 2x2
blocks and two-pixel diagonals outright; this guard keeps every 8-connected
component.  A final pass thins leftover 2x2 blocks the same way.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

# Neighbour offsets P2..P9, clockwise from north.
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _ring_components(code: int) -> int:
    """8-connected components among the set neighbours of an 8-bit ring code."""
    on = [k for k in range(8) if code >> k & 1]
    parent = {k: k for k in on}

    def find(k):
        while parent[k] != k:
            k = parent[k]
        return k

    for a in on:
        for b in on:
            ra, rb = _RING[a], _RING[b]
            if a < b and max(abs(ra[0] - rb[0]), abs(ra[1] - rb[1])) == 1:
                parent[find(a)] = find(b)
    return len({find(k) for k in on})


_COMPONENTS = np.array([_ring_components(c) for c in range(256)])


def _ring(img: np.ndarray, r: int, c: int) -> list[int]:
    return [int(img[r + dr, c + dc]) for dr, dc in _RING]


def _ring_code(p: list[int]) -> int:
    return sum(v << k for k, v in enumerate(p))


def _removable(img: np.ndarray, r: int, c: int) -> bool:
    """Not an endpoint, and the remaining neighbours stay 8-connected."""
    p = _ring(img, r, c)
    return sum(p) >= 2 and _COMPONENTS[_ring_code(p)] == 1


def _candidates(img: np.ndarray, step: int) -> np.ndarray:
    """Vectorized parallel Zhang-Suen marking on a zero-bordered image."""
    core = img[1:-1, 1:-1]
    h, w = core.shape
    p = [img[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _RING]
    b = sum(x.astype(np.int32) for x in p)
    a = sum(((p[k] == 0) & (p[(k + 1) % 8] == 1)).astype(np.int32) for k in range(8))
    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
    if step == 0:
        cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return np.argwhere((core == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond) + 1


def _thin_pass(img: np.ndarray) -> bool:
    changed = False
    for step in (0, 1):
        for r, c in _candidates(img, step):
            if _removable(img, r, c):
                img[r, c] = 0
                changed = True
    return changed


def _block_pass(img: np.ndarray) -> bool:
    """Delete one removable pixel from each remaining 2x2 foreground block."""
    changed = False
    blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
    for r, c in np.argwhere(blocks):
        if not (img[r, c] and img[r + 1, c] and img[r, c + 1] and img[r + 1, c + 1]):
            continue
        for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
            if _removable(img, r + dr, c + dc):
                img[r + dr, c + dc] = 0
                changed = True
                break
    return changed


def skeletonize(mask) -> np.ndarray:
    """One-pixel-wide skeleton (uint8) of a binary mask."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"skeletonize needs a 2-D mask, got shape {m.shape}")
    img = np.pad((m != 0).astype(np.uint8), 1)
    while True:
        changed = False
        while _thin_pass(img):
            changed = True
        if _block_pass(img):
            changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].copy()


def largest_component(mask) -> np.ndarray:
    """The largest 8-connected component; ties go to the first in raster order."""
    labels, n = ndimage.label(np.asarray(mask) != 0, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(labels, dtype=np.uint8)
    sizes = np.bincount(labels.ravel())[1:]
    return (labels == int(np.argmax(sizes)) + 1).astype(np.uint8)


def mask_to_contour(skeleton) -> np.ndarray:
    """Ordered (row, col) points: mean skeleton row of each occupied column, left to right."""
    comp = largest_component(skeleton)
    if not comp.any():
        raise ValueError("no contour found: skeleton is empty")
    rows, cols = np.nonzero(comp)
    occupied = np.unique(cols)
    sums = np.bincount(cols, weights=rows)[occupied]
    counts = np.bincount(cols)[occupied]
    return np.column_stack([sums / counts, occupied.astype(np.float64)])


def validate_contour(points) -> np.ndarray:
    """Check the contour invariants: n x 2, at least 2 points, no duplicates, non-decreasing columns."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"contour must be n x 2, got shape {pts.shape}")
    if len(pts) < 2:
        raise ValueError(f"contour needs at least 2 points, got {len(pts)}")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise ValueError("contour has duplicate points")
    if np.any(np.diff(pts[:, 1]) < 0):
        raise ValueError("contour columns must be non-decreasing")
    return pts
