"""Command-line entry point: gen-data, train, infer, eval, bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from irisnet.config import TrainConfig
from irisnet.data import load_sample, read_pgm, save_sample, split_indices, to_u8, write_pgm
from irisnet.metrics import binarize, iou, msd, px_to_mm, soft_iou
from irisnet.model import CheckpointError, ConfigError, build_irisnet, count_parameters, forward, load_checkpoint
from irisnet.phantom import generate_phantom
from irisnet.skeleton import mask_to_contour, skeletonize, validate_contour
from irisnet.tensor import Tensor
from irisnet.training import TrainingError, predict, train

log = logging.getLogger("irisnet")

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"
EVAL_COLUMNS = ("sample_id", "soft_iou", "iou_at_tau", "msd_px", "msd_mm", "status")


class CommandError(Exception):
    """A failure reported to the user as a message and nonzero exit."""


def sample_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def _with_seed(config: TrainConfig, seed: int | None) -> TrainConfig:
    return config if seed is None else replace(config, seed=seed)


# --- gen-data ------------------------------------------------------------------

def cmd_gen_data(config: TrainConfig, count: int, out: str | Path) -> int:
    out = Path(out)
    if count < 10:
        raise CommandError(f"count must be at least 10 to form train/val/test splits, got {count}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from exc
    parts = split_indices(count, config.split, config.seed)
    assignment = {i: name for name, idx in zip(SPLITS, parts) for i in idx}
    entries = []
    for i in range(count):
        params = replace(config.phantom, seed=sample_seed(config.seed, i))
        sid = f"s{i:05d}"
        try:
            files = save_sample(out, sid, generate_phantom(params))
        except OSError as exc:
            raise CommandError(f"cannot write sample {sid} to {out}: {exc}") from exc
        entries.append({"id": sid, **files, "split": assignment[i]})
    manifest = {
        "count": count,
        "seed": config.seed,
        "split_ratios": list(config.split),
        "split_sizes": {name: len(idx) for name, idx in zip(SPLITS, parts)},
        "image_size": [config.phantom.height, config.phantom.width],
        "samples": entries,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d samples to %s (%s)", count, out, manifest["split_sizes"])
    return 0


def load_manifest(data: str | Path) -> dict:
    path = Path(data) / MANIFEST
    if not path.is_file():
        raise CommandError(f"missing data: no {MANIFEST} in {data} (run gen-data first)")
    return json.loads(path.read_text())


def load_split(data: str | Path, split: str) -> tuple[list[str], list]:
    manifest = load_manifest(data)
    entries = [e for e in manifest["samples"] if e["split"] == split]
    if not entries:
        raise CommandError(f"split '{split}' in {data} is empty")
    try:
        return [e["id"] for e in entries], [load_sample(data, e) for e in entries]
    except (OSError, ValueError) as exc:
        raise CommandError(f"missing data: cannot read a '{split}' sample from {data}: {exc}") from exc


# --- train ---------------------------------------------------------------------

def cmd_train(config: TrainConfig, data: str | Path, out: str | Path) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _, train_set = load_split(data, "train")
    _, val_set = load_split(data, "val")
    size = train_set[0].image.shape
    if size != (config.arch.input_size,) * 2:
        raise CommandError(f"data images are {size[0]}x{size[1]} but arch.input_size is {config.arch.input_size}")
    model = build_irisnet(config.arch, seed=config.seed)
    ckpt = out / "best.ckpt"
    t0 = time.perf_counter()
    try:
        best, history = train(model, train_set, val_set, config, checkpoint_path=ckpt)
    except TrainingError as exc:
        raise CommandError(f"training failed: {exc}") from exc
    wall = time.perf_counter() - t0
    history.write_csv(out / "history.csv", include_seconds=config.log_wall_time)
    first, last = history.records[0], history.records[-1]
    best_rec = history.records[history.best_epoch - 1]
    summary = {
        "params": count_parameters(best),
        "epochs": len(history),
        "best_epoch": history.best_epoch,
        "best_val_dice": best_rec.val_dice,
        "best_val_bce": best_rec.val_bce,
        "first_val_dice": first.val_dice,
        "final": {"train_dice": last.train_dice, "train_bce": last.train_bce, "val_dice": last.val_dice, "val_bce": last.val_bce},
        "checkpoint": ckpt.name,
        "config": config.to_dict(),
    }
    if config.log_wall_time:
        summary["wall_seconds"] = wall
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("trained %d epochs in %.1fs; best val dice %.4f at epoch %d", len(history), wall, best_rec.val_dice, history.best_epoch)
    return 0


# --- infer ---------------------------------------------------------------------

def _load_model(path: str | Path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CommandError(f"checkpoint not found: {path}") from exc
    except CheckpointError as exc:
        raise CommandError(f"cannot load checkpoint {path}: {exc}") from exc


def write_contour_csv(path: Path, points: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col"])
        for r, c in points:
            w.writerow([repr(float(r)), repr(float(c))])


def read_contour_csv(path: str | Path) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["row"]), float(r["col"])] for r in rows]).reshape(-1, 2)


def cmd_infer(checkpoint: str | Path, inputs: str | Path, out: str | Path, tau: float = 0.1) -> int:
    model = _load_model(checkpoint)
    src = Path(inputs)
    paths = sorted(src.glob("*.pgm")) if src.is_dir() else [src]
    if not paths or not all(p.is_file() for p in paths):
        raise CommandError(f"no input images found at {src}")
    s = model.config.input_size
    images = []
    for p in paths:
        img = read_pgm(p)
        if img.shape != (s, s):
            raise CommandError(f"{p} is {img.shape[0]}x{img.shape[1]}; this model requires {s}x{s} images")
        images.append(img.astype(np.float64) / 255.0)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    probs = predict(model, np.stack(images))
    failures = 0
    for p, prob in zip(paths, probs):
        fg = prob[1]
        mask = binarize(fg, tau)
        skel = skeletonize(mask)
        write_pgm(out / f"{p.stem}_prob.pgm", to_u8(fg))
        write_pgm(out / f"{p.stem}_mask.pgm", mask * 255)
        write_pgm(out / f"{p.stem}_skeleton.pgm", skel * 255)
        try:
            pts = validate_contour(mask_to_contour(skel))
        except ValueError as exc:
            log.warning("%s: %s", p.name, exc)
            pts = np.zeros((0, 2))
            failures += 1
        write_contour_csv(out / f"{p.stem}_contour.csv", pts)
    log.info("inferred %d images into %s (%d without a valid contour)", len(paths), out, failures)
    return 1 if failures else 0


# --- eval ----------------------------------------------------------------------

def evaluate_sample(prob_fg: np.ndarray, sample, tau: float, mm_per_px: float) -> dict:
    gt = sample.mask[1]
    row = {"soft_iou": soft_iou(prob_fg, gt), "iou_at_tau": iou(binarize(prob_fg, tau), gt)}
    try:
        contour = validate_contour(mask_to_contour(skeletonize(binarize(prob_fg, tau))))
        d = msd(sample.centerline, contour)
        row.update(msd_px=d, msd_mm=px_to_mm(d, mm_per_px), status="ok")
    except ValueError as exc:
        row.update(msd_px=None, msd_mm=None, status=f"failed: {exc}")
    return row


def _aggregate(rows: list[dict]) -> tuple[dict, dict]:
    ok = [r for r in rows if r["status"] == "ok"]
    mean, std = {}, {}
    for key in EVAL_COLUMNS[1:5]:
        vals = np.array([r[key] for r in ok], dtype=np.float64)
        mean[key] = float(vals.mean()) if len(vals) else None
        std[key] = float(vals.std()) if len(vals) else None
    return mean, std


def cmd_eval(
    checkpoint: str | Path | None,
    data: str | Path,
    out: str | Path,
    split: str = "test",
    tau: float = 0.1,
    mm_per_px: float = 0.15,
    oracle: bool = False,
) -> int:
    if split not in SPLITS:
        raise CommandError(f"split must be one of {SPLITS}, got {split!r}")
    ids, samples = load_split(data, split)
    if oracle:
        probs = np.stack([s.mask[1] for s in samples])
    else:
        if checkpoint is None:
            raise CommandError("eval needs --checkpoint unless --oracle is given")
        model = _load_model(checkpoint)
        if samples[0].image.shape != (model.config.input_size,) * 2:
            raise CommandError(f"data images are {samples[0].image.shape} but the model requires {model.config.input_size}")
        probs = predict(model, np.stack([s.image for s in samples]))[:, 1]
    rows = [{"sample_id": sid, **evaluate_sample(p, s, tau, mm_per_px)} for sid, p, s in zip(ids, probs, samples)]
    mean, std = _aggregate(rows)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def fmt(v):
        return "" if v is None else repr(float(v))

    with (out / f"eval_{split}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([r["sample_id"], *(fmt(r[k]) for k in EVAL_COLUMNS[1:5]), r["status"]])
        n_ok = sum(r["status"] == "ok" for r in rows)
        w.writerow(["mean", *(fmt(mean[k]) for k in EVAL_COLUMNS[1:5]), f"aggregate over {n_ok} samples"])
        w.writerow(["std", *(fmt(std[k]) for k in EVAL_COLUMNS[1:5]), f"aggregate over {n_ok} samples"])
    failed = [r["sample_id"] for r in rows if r["status"] != "ok"]
    summary = {"split": split, "tau": tau, "mm_per_pixel": mm_per_px, "oracle": oracle, "samples": len(rows),
               "failed": failed, "mean": mean, "std": std}
    (out / f"eval_{split}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if failed:
        log.warning("contour extraction failed on %d samples: %s", len(failed), ", ".join(failed))
    log.info("mean msd %.3f px, iou@tau %.3f over %d samples", mean["msd_px"] or float("nan"), mean["iou_at_tau"] or float("nan"), len(rows))
    return 0


# --- bench ---------------------------------------------------------------------

def cmd_bench(config: TrainConfig, out: str | Path, runs: int = 10, frames: int = 5, checkpoint: str | Path | None = None) -> int:
    if runs < 1 or frames < 1:
        raise CommandError("runs and frames must be positive")
    model = _load_model(checkpoint) if checkpoint else build_irisnet(config.arch, seed=config.seed)
    s = model.config.input_size
    rng = np.random.default_rng(config.seed)
    x = Tensor(rng.random((1, 1, s, s)))
    if not all(st.initialized for st in model.bn.values()):
        # eval mode needs running statistics; one train-mode pass provides them
        forward(model, Tensor(rng.random((2, 1, s, s))), "train")
    samples = {}
    for path in ("fused", "reference"):
        forward(model, x, "eval", path)  # warm-up
        fps = []
        for _ in range(runs):
            t0 = time.perf_counter()
            for _ in range(frames):
                forward(model, x, "eval", path)
            fps.append(frames / (time.perf_counter() - t0))
        samples[path] = fps
    report = {
        "params": count_parameters(model),
        "runs": runs,
        "frames_per_run": frames,
        "input_size": s,
        "fps_fused_mean": float(np.mean(samples["fused"])),
        "fps_fused_std": float(np.std(samples["fused"])),
        "fps_reference_mean": float(np.mean(samples["reference"])),
        "fps_reference_std": float(np.std(samples["reference"])),
        "samples_fused": samples["fused"],
        "samples_reference": samples["reference"],
        "arch": model.config.to_dict(),
    }
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log.info(
        "fused %.2f +- %.2f fps, two-pass %.2f +- %.2f fps (%d params)",
        report["fps_fused_mean"], report["fps_fused_std"], report["fps_reference_mean"], report["fps_reference_std"], report["params"],
    )
    return 0


# --- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TrainConfig JSON file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="irisnet", description="RetinaConv segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate synthetic phantoms")
    g.add_argument("--count", type=int, default=200)

    t = sub.add_parser("train", parents=[common], help="train on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, help="overrides the config")

    i = sub.add_parser("infer", parents=[common], help="segment PGM images")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True, help="a PGM file or a directory of them")
    i.add_argument("--tau", type=float, help="threshold, overrides the config")

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on a data split")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    e.add_argument("--tau", type=float, help="threshold, overrides the config")
    e.add_argument("--oracle", action="store_true", help="score the ground truth itself instead of a model")

    b = sub.add_parser("bench", parents=[common], help="fused vs two-pass throughput")
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--frames", type=int, default=5, help="forward passes per timed run")
    b.add_argument("--checkpoint", help="bench a trained model instead of a fresh one")
    return p


def load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        return TrainConfig.load(path)
    except FileNotFoundError as exc:
        raise CommandError(f"config file not found: {path}") from exc
    except (ValueError, TypeError) as exc:
        raise CommandError(f"invalid config {path}: {exc}") from exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _with_seed(load_config(args.config), args.seed)
        if args.command == "gen-data":
            return cmd_gen_data(config, args.count, args.out)
        if args.command == "train":
            if args.epochs is not None:
                config = replace(config, epochs=args.epochs)
            return cmd_train(config, args.data, args.out)
        tau = config.threshold if getattr(args, "tau", None) is None else args.tau
        if args.command == "infer":
            return cmd_infer(args.checkpoint, args.input, args.out, tau)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.out, args.split, tau, config.mm_per_pixel, args.oracle)
        return cmd_bench(config, args.out, args.runs, args.frames, args.checkpoint)
    except (CommandError, ConfigError) as exc:
        print(f"irisnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
