"""Ultrasound-like tongue phantoms with exact ground truth.

A bright, thick, speckled arc (the tongue surface) sits in a band of rows
over a dark speckled background, optionally with dim curved distractors
above it.  Everything is drawn from a single seed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PhantomParams:
    height: int = 128
    width: int = 128
    control_points: int = 5
    band_top: float = 0.45  # fraction of height
    band_bottom: float = 0.80
    thickness: tuple[float, float] = (4.0, 8.0)  # px, full band width
    brightness: tuple[float, float] = (0.7, 1.0)
    background: float = 0.12
    speckle_grain: float = 1.0  # gaussian sigma (px) of the speckle field
    speckle_var: float = 0.2  # log-variance of the multiplicative speckle
    max_shadows: int = 3
    shadow_intensity: tuple[float, float] = (0.2, 0.45)  # relative to band brightness
    seed: int = 0

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ValueError(f"phantom must be at least 8x8, got {self.height}x{self.width}")
        if not 0.0 < self.band_top < self.band_bottom < 1.0:
            raise ValueError(f"band region [{self.band_top}, {self.band_bottom}] must lie strictly inside (0, 1)")
        if (self.band_bottom - self.band_top) * self.height < 2:
            raise ValueError("band region is degenerate (less than 2 rows)")
        lo, hi = self.thickness
        if not 2.0 <= lo <= hi:
            raise ValueError(f"thickness range {self.thickness} must satisfy 2 <= lo <= hi")
        blo, bhi = self.brightness
        if not 0.0 < blo <= bhi <= 1.0:
            raise ValueError(f"brightness range {self.brightness} must lie in (0, 1]")
        if not 0.0 <= self.background < blo:
            raise ValueError(f"background {self.background} must be below the band brightness")
        if self.control_points < 2:
            raise ValueError("need at least 2 control points")
        if self.speckle_var < 0 or self.speckle_grain < 0 or self.max_shadows < 0:
            raise ValueError("speckle and shadow settings must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("thickness", "brightness", "shadow_intensity"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomParams":
        d = dict(d)
        for k in ("thickness", "brightness", "shadow_intensity"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SegmentationSample:
    """Grayscale image in [0, 1], one-hot mask (channel 0 background, 1 foreground), centerline points."""

    image: np.ndarray  # H x W
    mask: np.ndarray  # 2 x H x W, {0, 1}
    centerline: np.ndarray  # n x 2 (row, col)
    meta: dict = field(default_factory=dict)

    @property
    def foreground(self) -> np.ndarray:
        return self.mask[1]


def _arc(rng: np.random.Generator, p: PhantomParams, top: float, bottom: float, margin: float):
    """Random single-valued arc row = f(col) with rows kept within [top+margin, bottom-margin]."""
    h, w = p.height, p.width
    x0 = rng.uniform(0.05, 0.2) * (w - 1)
    x1 = rng.uniform(0.8, 0.95) * (w - 1)
    lo, hi = top + margin, bottom - margin
    span = max(hi - lo, 0.0)
    amp = rng.uniform(0.3, 0.8) * span
    base = rng.uniform(lo + amp, hi) if hi > lo + amp else hi
    u = np.linspace(0.0, 1.0, p.control_points)
    ys = base - amp * np.sin(np.pi * u) + rng.uniform(-0.08, 0.08, size=u.size) * span
    ys = np.clip(ys, lo, hi)
    xs = x0 + u * (x1 - x0)
    return PchipInterpolator(xs, ys), x0, x1


def _tube(f, x0: float, x1: float, radius: float, shape: tuple[int, int]) -> np.ndarray:
    """Pixels within ``radius`` of the curve row = f(col), col in [x0, x1]."""
    cols = np.arange(x0, x1 + 1e-9, 0.2)
    samples = np.column_stack([f(cols), cols])
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]]
    dist, _ = cKDTree(samples).query(np.column_stack([rr.ravel(), cc.ravel()]))
    return (dist <= radius).reshape(shape)


def generate_phantom(params: PhantomParams) -> SegmentationSample:
    params.validate()
    rng = np.random.default_rng(params.seed)
    h, w = params.height, params.width
    top, bottom = params.band_top * (h - 1), params.band_bottom * (h - 1)

    thickness = float(rng.uniform(*params.thickness))
    brightness = float(rng.uniform(*params.brightness))
    curve, x0, x1 = _arc(rng, params, top, bottom, margin=0.0)
    fg = _tube(curve, x0, x1, thickness / 2.0, (h, w))

    image = np.full((h, w), params.background)
    n_shadows = int(rng.integers(0, params.max_shadows + 1))
    shadow_rows = (0.05 * (h - 1), top - thickness)
    drawn = 0
    for _ in range(n_shadows):
        if shadow_rows[1] - shadow_rows[0] < 2:
            break
        sc, sx0, sx1 = _arc(rng, params, shadow_rows[0], shadow_rows[1], margin=0.0)
        level = float(rng.uniform(*params.shadow_intensity)) * brightness
        tube = _tube(sc, sx0, sx1, float(rng.uniform(0.8, 1.6)), (h, w)) & ~fg
        image[tube] = np.maximum(image[tube], level)
        drawn += 1
    image[fg] = brightness

    if params.speckle_var > 0:
        field_ = rng.normal(size=(h, w))
        if params.speckle_grain > 0:
            field_ = gaussian_filter(field_, params.speckle_grain)
        field_ = (field_ - field_.mean()) / (field_.std() + 1e-12)
        s2 = params.speckle_var
        image = image * np.exp(np.sqrt(s2) * field_ - s2 / 2.0)
    image = np.clip(image, 0.0, 1.0)

    cols = np.arange(int(np.ceil(x0)), int(np.floor(x1)) + 1)
    rows = np.rint(curve(cols)).astype(int)
    centerline = np.column_stack([rows, cols]).astype(np.float64)

    fg = fg.astype(np.float64)
    mask = np.stack([1.0 - fg, fg])
    meta = {
        "params": params.to_dict(),
        "thickness": thickness,
        "brightness": brightness,
        "shadows": drawn,
        "x_range": [float(x0), float(x1)],
    }
    return SegmentationSample(image, mask, centerline, meta)
