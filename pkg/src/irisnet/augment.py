"""Online geometric augmentation shared by image, mask and centerline."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import affine_transform

from irisnet.phantom import SegmentationSample

MAX_ROTATION_DEG = 25.0
MAX_SHIFT_PX = 40.0
ZOOM_BOUNDS = (0.5, 1.5)


@dataclass(frozen=True)
class AugmentRanges:
    flip_prob: float = 0.5
    max_rotation_deg: float = 25.0
    max_shift_px: float = 40.0  # per axis
    zoom_min: float = 0.5
    zoom_max: float = 1.5

    def validate(self) -> None:
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob {self.flip_prob} outside [0, 1]")
        if not 0.0 <= self.max_rotation_deg <= MAX_ROTATION_DEG:
            raise ValueError(f"max_rotation_deg {self.max_rotation_deg} outside [0, {MAX_ROTATION_DEG}]")
        if not 0.0 <= self.max_shift_px <= MAX_SHIFT_PX:
            raise ValueError(f"max_shift_px {self.max_shift_px} outside [0, {MAX_SHIFT_PX}]")
        if not ZOOM_BOUNDS[0] <= self.zoom_min <= 1.0 <= self.zoom_max <= ZOOM_BOUNDS[1]:
            raise ValueError(f"zoom range [{self.zoom_min}, {self.zoom_max}] must contain 1 and lie in {ZOOM_BOUNDS}")

    def to_dict(self) -> dict:
        return asdict(self)


IDENTITY_RANGES = AugmentRanges(flip_prob=0.0, max_rotation_deg=0.0, max_shift_px=0.0, zoom_min=1.0, zoom_max=1.0)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    angle_deg: float = 0.0
    shift: tuple[float, float] = (0.0, 0.0)  # (rows, cols)
    zoom: float = 1.0

    @property
    def is_affine_identity(self) -> bool:
        return self.angle_deg == 0.0 and self.shift == (0.0, 0.0) and self.zoom == 1.0


def sample_params(rng: np.random.Generator, ranges: AugmentRanges) -> AugmentParams:
    ranges.validate()
    # Fixed draw order keeps streams reproducible whatever the ranges are.
    u = rng.uniform(size=5)
    flip = bool(u[0] < ranges.flip_prob)
    angle = (2 * u[1] - 1) * ranges.max_rotation_deg
    shift = ((2 * u[2] - 1) * ranges.max_shift_px, (2 * u[3] - 1) * ranges.max_shift_px)
    zoom = ranges.zoom_min + u[4] * (ranges.zoom_max - ranges.zoom_min)
    return AugmentParams(flip, float(angle), (float(shift[0]), float(shift[1])), float(zoom))


def _forward_matrix(p: AugmentParams) -> np.ndarray:
    a = np.deg2rad(p.angle_deg)
    rot = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    return p.zoom * rot


def apply_augmentation(sample: SegmentationSample, p: AugmentParams) -> SegmentationSample:
    """Flip, then rotate/zoom about the image centre and shift.

    Bilinear resampling with zero fill; the foreground is re-binarized at 0.5
    and the background recomputed as its complement.
    """
    image, fg, pts = sample.image, sample.mask[1], sample.centerline.copy()
    h, w = image.shape
    if p.flip:
        image, fg = image[:, ::-1], fg[:, ::-1]
        if len(pts):
            pts[:, 1] = (w - 1) - pts[:, 1]
    if not p.is_affine_identity:
        centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        fwd = _forward_matrix(p)
        inv = np.linalg.inv(fwd)
        offset = centre - inv @ (centre + np.asarray(p.shift))
        image = affine_transform(image, inv, offset=offset, order=1, mode="constant", cval=0.0)
        fg = affine_transform(fg, inv, offset=offset, order=1, mode="constant", cval=0.0)
        fg = (fg >= 0.5).astype(np.float64)
        if len(pts):
            pts = (pts - centre) @ fwd.T + centre + np.asarray(p.shift)
            inside = (pts[:, 0] >= 0) & (pts[:, 0] <= h - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= w - 1)
            pts = pts[inside]
    image = np.clip(np.ascontiguousarray(image), 0.0, 1.0)
    fg = np.ascontiguousarray(fg)
    return SegmentationSample(image, np.stack([1.0 - fg, fg]), pts, dict(sample.meta))


def augment(sample: SegmentationSample, rng: np.random.Generator, ranges: AugmentRanges) -> SegmentationSample:
    return apply_augmentation(sample, sample_params(rng, ranges))
