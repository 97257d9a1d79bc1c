"""Dataset splitting and on-disk sample format (PGM P5 rasters + JSON sidecars)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from irisnet.phantom import SegmentationSample

T = TypeVar("T")


def split_dataset(samples: Sequence[T], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list[T], list[T], list[T]]:
    """Seeded shuffle then contiguous train/validation/test partition.

    Validation and test get ``floor(n * ratio)``; the remainder goes to train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(samples)
    if n < 10:
        raise ValueError(f"dataset too small to split: {n} samples (need at least 10)")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    pick = [samples[i] for i in order]
    return pick[:n_train], pick[n_train : n_train + n_val], pick[n_train + n_val :]


def split_indices(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list[int], list[int], list[int]]:
    return split_dataset(list(range(n)), ratios, seed)


# --- PGM ----------------------------------------------------------------------

def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit binary PGM; ``img`` holds integers in [0, 255]."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("PGM values must lie in [0, 255]")
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        tokens.append(raw[i:j])
        i = j
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    data = raw[i + 1 : i + 1 + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def to_u8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_sample(directory: str | Path, sample_id: str, sample: SegmentationSample) -> dict[str, str]:
    """Write ``<id>_image.pgm``, ``<id>_mask.pgm`` (foreground only) and ``<id>.json``."""
    d = Path(directory)
    files = {"image": f"{sample_id}_image.pgm", "mask": f"{sample_id}_mask.pgm", "meta": f"{sample_id}.json"}
    write_pgm(d / files["image"], to_u8(sample.image))
    write_pgm(d / files["mask"], to_u8(sample.mask[1]))
    side = {"id": sample_id, "centerline": sample.centerline.tolist(), **sample.meta}
    (d / files["meta"]).write_text(json.dumps(side, sort_keys=True))
    return files


def load_sample(directory: str | Path, entry: dict) -> SegmentationSample:
    d = Path(directory)
    image = read_pgm(d / entry["image"]).astype(np.float64) / 255.0
    fg = (read_pgm(d / entry["mask"]) >= 128).astype(np.float64)
    meta = json.loads((d / entry["meta"]).read_text())
    centerline = np.asarray(meta.pop("centerline"), dtype=np.float64).reshape(-1, 2)
    return SegmentationSample(image, np.stack([1.0 - fg, fg]), centerline, meta)
