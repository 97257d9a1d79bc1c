import numpy as np
import pytest

from irisnet import training
from irisnet.augment import AugmentRanges
from irisnet.config import TrainConfig, sized_config
from irisnet.model import ArchConfig, ConfigError, build_irisnet, load_checkpoint
from irisnet.phantom import PhantomParams, generate_phantom
from irisnet.training import HISTORY_COLUMNS, TrainingError, train

TINY = ArchConfig(depth=1, base_filters=2, input_size=16)


def _samples(n, offset=0):
    return [generate_phantom(PhantomParams(height=16, width=16, thickness=(3.0, 4.0), seed=offset + i)) for i in range(n)]


def _cfg(**kw):
    base = dict(arch=TINY, epochs=2, batch_size=3, augmentation=AugmentRanges(0.5, 10.0, 2.0, 0.9, 1.1))
    base.update(kw)
    return sized_config(16, **base)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.epochs, c.batch_size, c.learning_rate, c.beta1, c.beta2, c.eps_adam) == (50, 20, 1e-3, 0.9, 0.99, 1e-8)
        assert (c.loss, c.split, c.threshold, c.mm_per_pixel) == ("dice+bce", (0.8, 0.1, 0.1), 0.1, 0.15)
        assert (c.dice_weight, c.bce_weight) == (1.0, 1.0)

    def test_json_round_trip(self, tmp_path):
        c = _cfg(loss="dice", seed=17, augment=False, split=(0.7, 0.2, 0.1))
        assert TrainConfig.from_json(c.to_json()) == c
        c.save(tmp_path / "c.json")
        assert TrainConfig.load(tmp_path / "c.json") == c
        assert TrainConfig.from_json(TrainConfig().to_json()) == TrainConfig()

    def test_every_field_explicit(self):
        import json

        d = json.loads(TrainConfig().to_json())
        assert "dilation_schedule" in d["arch"] and d["arch"]["dilation_schedule"] is not None
        assert set(d["augmentation"]) == {"flip_prob", "max_rotation_deg", "max_shift_px", "zoom_min", "zoom_max"}

    @pytest.mark.parametrize(
        "kw",
        [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0}, {"beta2": 1.0}, {"loss": "focal"},
         {"split": (0.5, 0.5, 0.5)}, {"threshold": 1.0}, {"mm_per_pixel": 0.0}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            _cfg(**kw)

    def test_size_mismatch(self):
        with pytest.raises(ConfigError, match="input_size"):
            TrainConfig(arch=TINY, phantom=PhantomParams(height=32, width=32))

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})


class TestTrain:
    def test_frozen_run(self):
        m = build_irisnet(TINY, 0)
        before = {k: v.data.copy() for k, v in m.params.items()}
        best, hist = train(m, _samples(1), _samples(1, 50), _cfg(epochs=1, learning_rate=0.0))
        assert len(hist) == 1
        for k, v in m.params.items():
            assert v.data.tobytes() == before[k].tobytes()
        assert all(st.initialized for st in m.bn.values())

    def test_history_and_best(self, tmp_path):
        m = build_irisnet(TINY, 0)
        ckpt = tmp_path / "best.ckpt"
        best, hist = train(m, _samples(7), _samples(3, 50), _cfg(epochs=3), checkpoint_path=ckpt)
        assert len(hist) == 3 and [r.epoch for r in hist.records] == [1, 2, 3]
        vals = [r.val_dice for r in hist.records]
        assert hist.best_epoch == int(np.argmin(vals)) + 1
        assert hist.records[0].saved
        saved_best = [r.val_dice for r in hist.records if r.saved][-1]
        assert saved_best == min(vals)
        loaded = load_checkpoint(ckpt, expected=TINY)
        for k in best.params:
            assert loaded.params[k].equals(best.params[k])

    def test_csv(self):
        m = build_irisnet(TINY, 0)
        _, hist = train(m, _samples(4), _samples(2, 50), _cfg(epochs=2))
        lines = hist.to_csv(include_seconds=False).splitlines()
        assert lines[0] == ",".join(HISTORY_COLUMNS)
        assert len(lines) == 3
        assert all(row.split(",")[5] == "0.000000" for row in lines[1:])
        assert float(lines[1].split(",")[3]) == hist.records[0].val_dice

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            m = build_irisnet(TINY, 3)
            best, hist = train(m, _samples(5), _samples(2, 50), _cfg(epochs=2, seed=9))
            runs.append((hist.to_csv(include_seconds=False), [best.params[k].data.tobytes() for k in best.params]))
        assert runs[0] == runs[1]

    def test_loss_modes_run(self):
        for mode in ("dice", "bce"):
            m = build_irisnet(TINY, 0)
            _, hist = train(m, _samples(3), _samples(2, 50), _cfg(epochs=1, loss=mode))
            assert len(hist) == 1

    def test_empty_sets(self):
        m = build_irisnet(TINY, 0)
        with pytest.raises(TrainingError, match="empty"):
            train(m, [], _samples(1), _cfg())
        with pytest.raises(TrainingError, match="empty"):
            train(m, _samples(1), [], _cfg())

    def test_overlapping_sets(self):
        s = _samples(2)
        with pytest.raises(TrainingError, match="share"):
            train(build_irisnet(TINY, 0), s, s[:1], _cfg())

    def test_non_finite_reports_coordinates(self, monkeypatch):
        real = training._objective
        calls = {"n": 0}

        def flaky(pred, target, config):
            calls["n"] += 1
            if calls["n"] == 2:
                raise FloatingPointError("loss is nan")
            return real(pred, target, config)

        monkeypatch.setattr(training, "_objective", flaky)
        with pytest.raises(TrainingError, match="epoch 1, batch 1"):
            train(build_irisnet(TINY, 0), _samples(6), _samples(2, 50), _cfg(batch_size=3))
