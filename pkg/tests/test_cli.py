import csv
import json

import numpy as np
import pytest

from irisnet.cli import main, read_contour_csv
from irisnet.config import sized_config
from irisnet.data import read_pgm
from irisnet.model import ArchConfig, count_parameters, load_checkpoint
from irisnet.phantom import PhantomParams
from irisnet.skeleton import validate_contour


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = sized_config(
        16,
        arch=ArchConfig(depth=1, base_filters=2, input_size=16),
        phantom=PhantomParams(height=16, width=16, thickness=(3.0, 4.0)),
        epochs=1,
        batch_size=4,
    )
    cfg.save(root / "cfg.json")
    assert main(["gen-data", "--config", str(root / "cfg.json"), "--count", "10", "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


def test_gen_data_files(workspace):
    names = sorted(p.name for p in (workspace / "data").iterdir())
    assert sum(n.endswith("_image.pgm") for n in names) == 10
    assert sum(n.endswith("_mask.pgm") for n in names) == 10
    assert sum(n.endswith(".json") and n != "manifest.json" for n in names) == 10
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["split_sizes"] == {"train": 8, "val": 1, "test": 1}
    assert sorted(e["split"] for e in manifest["samples"]).count("train") == 8


def test_gen_data_deterministic(workspace, tmp_path):
    assert main(["gen-data", "--config", str(workspace / "cfg.json"), "--count", "10", "--out", str(tmp_path / "again")]) == 0
    for p in (workspace / "data").iterdir():
        assert (tmp_path / "again" / p.name).read_bytes() == p.read_bytes()


def test_gen_data_paper_split(tmp_path):
    assert main(["gen-data", "--count", "20", "--out", str(tmp_path), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["split_sizes"] == {"train": 16, "val": 2, "test": 2}


def test_gen_data_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--count", "10", "--out", str(blocker / "sub")]) != 0
    assert "error" in capsys.readouterr().err


def test_train_outputs(workspace):
    run = workspace / "run"
    rows = list(csv.reader((run / "history.csv").open()))
    assert rows[0][:5] == ["epoch", "train_dice", "train_bce", "val_dice", "val_bce"] and len(rows) == 2
    summary = json.loads((run / "summary.json").read_text())
    assert summary["params"] == count_parameters(load_checkpoint(run / "best.ckpt"))
    assert summary["config"]["arch"]["input_size"] == 16


def test_train_deterministic(workspace, tmp_path):
    args = ["train", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"), "--out", str(tmp_path)]
    assert main(args) == 0
    for name in ("history.csv", "best.ckpt", "summary.json"):
        assert (tmp_path / name).read_bytes() == (workspace / "run" / name).read_bytes()


def test_train_missing_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert "missing data" in capsys.readouterr().err


def test_train_size_mismatch(workspace, tmp_path, capsys):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 1
    assert "input_size" in capsys.readouterr().err


def test_infer_contract(workspace, tmp_path):
    img = workspace / "data" / "s00000_image.pgm"
    assert main(["infer", "--checkpoint", str(workspace / "run" / "best.ckpt"), "--input", str(img), "--out", str(tmp_path)]) in (0, 1)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["s00000_image_contour.csv", "s00000_image_mask.pgm", "s00000_image_prob.pgm", "s00000_image_skeleton.pgm"]
    prob = read_pgm(tmp_path / "s00000_image_prob.pgm")
    assert prob.min() >= 0 and prob.max() <= 255
    assert set(np.unique(read_pgm(tmp_path / "s00000_image_mask.pgm"))) <= {0, 255}
    pts = read_contour_csv(tmp_path / "s00000_image_contour.csv")
    if len(pts):
        validate_contour(pts)


def test_infer_size_mismatch(workspace, tmp_path, capsys):
    from irisnet.data import write_pgm

    write_pgm(tmp_path / "big.pgm", np.zeros((32, 32), dtype=np.uint8))
    assert main(["infer", "--checkpoint", str(workspace / "run" / "best.ckpt"), "--input", str(tmp_path / "big.pgm"), "--out", str(tmp_path / "o")]) == 1
    assert "16x16" in capsys.readouterr().err


def test_eval_oracle(workspace, tmp_path):
    assert main(["eval", "--oracle", "--data", str(workspace / "data"), "--split", "train", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "eval_train.csv").open()))
    per = [r for r in rows if r["sample_id"] not in ("mean", "std")]
    manifest = {e["id"]: e for e in json.loads((workspace / "data" / "manifest.json").read_text())["samples"]}
    for r in per:
        meta = json.loads((workspace / "data" / manifest[r["sample_id"]]["meta"]).read_text())
        assert r["status"] == "ok"
        assert float(r["msd_px"]) <= meta["thickness"] / 2 + 1
        assert float(r["msd_mm"]) == pytest.approx(float(r["msd_px"]) * 0.15, rel=1e-15)
    mean = next(r for r in rows if r["sample_id"] == "mean")
    std = next(r for r in rows if r["sample_id"] == "std")
    vals = np.array([float(r["msd_px"]) for r in per])
    assert float(mean["msd_px"]) == pytest.approx(vals.mean(), rel=1e-14)
    assert float(std["msd_px"]) == pytest.approx(vals.std(), rel=1e-12)


def test_eval_checkpoint(workspace, tmp_path):
    assert main(["eval", "--checkpoint", str(workspace / "run" / "best.ckpt"), "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "eval_test.json").read_text())
    assert summary["samples"] == 1


def test_eval_failed_sample_excluded(workspace, tmp_path, monkeypatch):
    from irisnet import cli

    real = cli.evaluate_sample
    calls = {"n": 0}

    def flaky(*a):
        calls["n"] += 1
        row = real(*a)
        if calls["n"] == 1:
            row.update(msd_px=None, msd_mm=None, status="failed: no contour found")
        return row

    monkeypatch.setattr(cli, "evaluate_sample", flaky)
    assert main(["eval", "--oracle", "--data", str(workspace / "data"), "--split", "train", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "eval_train.csv").open()))
    assert rows[0]["status"].startswith("failed") and rows[0]["msd_px"] == ""
    assert rows[-2]["status"] == "aggregate over 7 samples"
    assert json.loads((tmp_path / "eval_train.json").read_text())["failed"] == [rows[0]["sample_id"]]


def test_eval_needs_checkpoint(workspace, tmp_path):
    assert main(["eval", "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 1


def test_bench_schema(workspace, tmp_path):
    assert main(["bench", "--config", str(workspace / "cfg.json"), "--runs", "10", "--frames", "1", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "bench.json").read_text())
    for key in ("fps_fused_mean", "fps_fused_std", "fps_reference_mean", "fps_reference_std"):
        assert isinstance(report[key], float) and report[key] >= 0
    assert len(report["samples_fused"]) == len(report["samples_reference"]) == 10
    assert report["params"] == 842


def test_bad_config(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 0}))
    assert main(["bench", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1
    assert "epochs" in capsys.readouterr().err
