import numpy as np
import pytest

from irisnet.augment import (
    IDENTITY_RANGES,
    AugmentParams,
    AugmentRanges,
    apply_augmentation,
    augment,
    sample_params,
)
from irisnet.data import load_sample, read_pgm, save_sample, split_dataset, split_indices, write_pgm
from irisnet.metrics import msd
from irisnet.phantom import PhantomParams, generate_phantom
from irisnet.skeleton import mask_to_contour, skeletonize


def _complementary(mask):
    return set(np.unique(mask)) <= {0.0, 1.0} and np.all(mask[0] + mask[1] == 1)


class TestPhantom:
    def test_deterministic(self):
        a = generate_phantom(PhantomParams(seed=3))
        b = generate_phantom(PhantomParams(seed=3))
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
        assert a.centerline.tobytes() == b.centerline.tobytes()
        assert a.meta == b.meta

    def test_seed_changes_sample(self):
        assert not np.array_equal(generate_phantom(PhantomParams(seed=1)).image, generate_phantom(PhantomParams(seed=2)).image)

    def test_clean_band(self):
        p = PhantomParams(height=64, width=64, speckle_var=0.0, max_shadows=0, seed=4)
        s = generate_phantom(p)
        np.testing.assert_array_equal(s.mask[1], (s.image > p.background).astype(float))
        assert set(np.unique(s.image)) == {p.background, s.meta["brightness"]}

    @pytest.mark.parametrize("seed", range(100))
    def test_self_consistency(self, seed):
        s = generate_phantom(PhantomParams(seed=seed))
        assert _complementary(s.mask)
        assert s.image.min() >= 0 and s.image.max() <= 1
        r, c = s.centerline.astype(int).T
        assert s.mask[1][r, c].all()
        assert np.all(np.diff(s.centerline[:, 1]) == 1)
        err = msd(s.centerline, mask_to_contour(skeletonize(s.mask[1])))
        assert err <= s.meta["thickness"] / 2 + 1

    def test_band_region(self):
        for seed in range(20):
            p = PhantomParams(seed=seed)
            s = generate_phantom(p)
            rows = np.nonzero(s.mask[1])[0]
            t = s.meta["thickness"] / 2
            assert rows.min() >= p.band_top * (p.height - 1) - t - 1
            assert rows.max() <= p.band_bottom * (p.height - 1) + t + 1

    def test_shadows_stay_off_mask(self):
        p = PhantomParams(speckle_var=0.0, max_shadows=3, seed=0)
        for seed in range(20):
            s = generate_phantom(PhantomParams(**{**p.to_dict(), "seed": seed, "thickness": tuple(p.thickness),
                                                  "brightness": tuple(p.brightness), "shadow_intensity": tuple(p.shadow_intensity)}))
            bg = s.image[s.mask[1] == 0]
            assert bg.max() < s.meta["brightness"]
            assert 0 <= s.meta["shadows"] <= 3

    @pytest.mark.parametrize(
        "kw",
        [
            {"band_top": 0.0},
            {"band_top": 0.8, "band_bottom": 0.5},
            {"band_bottom": 1.0},
            {"thickness": (1.0, 3.0)},
            {"brightness": (0.5, 1.2)},
            {"control_points": 1},
            {"height": 4},
        ],
    )
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            generate_phantom(PhantomParams(**kw))

    def test_params_round_trip(self):
        p = PhantomParams(height=32, width=48, thickness=(3.0, 5.0), seed=9)
        assert PhantomParams.from_dict(p.to_dict()) == p


class TestAugment:
    def test_identity_is_exact(self, rng):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=1))
        out = augment(s, rng, IDENTITY_RANGES)
        assert out.image.tobytes() == s.image.tobytes()
        assert out.mask.tobytes() == s.mask.tobytes()
        assert out.centerline.tobytes() == s.centerline.tobytes()

    def test_flip_involution(self):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=2))
        twice = apply_augmentation(apply_augmentation(s, AugmentParams(flip=True)), AugmentParams(flip=True))
        assert twice.image.tobytes() == s.image.tobytes()
        assert twice.mask.tobytes() == s.mask.tobytes()
        np.testing.assert_array_equal(twice.centerline, s.centerline)

    def test_flip_mirrors(self):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=2))
        f = apply_augmentation(s, AugmentParams(flip=True))
        np.testing.assert_array_equal(f.image, s.image[:, ::-1])
        np.testing.assert_array_equal(f.centerline[:, 1], 31 - s.centerline[:, 1])

    def test_integer_shift(self):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=5))
        out = apply_augmentation(s, AugmentParams(shift=(2.0, -3.0)))
        np.testing.assert_allclose(out.image[2:, :-3], s.image[:-2, 3:], atol=1e-12)
        assert (out.image[:2] == 0).all()
        np.testing.assert_array_equal(out.mask[1][2:, :-3], s.mask[1][:-2, 3:])

    def test_500_draws_keep_binary_complementary_masks(self):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=6))
        rng = np.random.default_rng(0)
        for _ in range(500):
            out = augment(s, rng, AugmentRanges())
            assert _complementary(out.mask)
            assert out.image.min() >= 0 and out.image.max() <= 1
            if len(out.centerline):
                assert out.centerline.min() >= 0 and out.centerline.max() <= 31

    def test_centerline_follows_mask(self):
        s = generate_phantom(PhantomParams(height=64, width=64, seed=7))
        out = apply_augmentation(s, AugmentParams(angle_deg=10.0, shift=(1.5, -2.0), zoom=1.2))
        r, c = np.rint(out.centerline).astype(int).T
        assert out.mask[1][r, c].mean() > 0.95

    @pytest.mark.parametrize(
        "kw",
        [{"flip_prob": 1.5}, {"max_rotation_deg": 30.0}, {"max_shift_px": 41.0}, {"zoom_min": 0.4}, {"zoom_max": 1.6}, {"zoom_min": 1.1}],
    )
    def test_out_of_range(self, rng, kw):
        with pytest.raises(ValueError):
            sample_params(rng, AugmentRanges(**kw))

    def test_sampled_within_ranges(self):
        r = AugmentRanges()
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = sample_params(rng, r)
            assert abs(p.angle_deg) <= 25 and max(map(abs, p.shift)) <= 40 and 0.5 <= p.zoom <= 1.5


class TestSplit:
    def test_paper_ratios(self):
        assert tuple(map(len, split_dataset(list(range(100)), (0.8, 0.1, 0.1), 0))) == (80, 10, 10)

    def test_floor_allocation(self):
        assert tuple(map(len, split_dataset(list(range(10)), (0.8, 0.1, 0.1), 0))) == (8, 1, 1)
        assert tuple(map(len, split_dataset(list(range(19)), (0.8, 0.1, 0.1), 0))) == (17, 1, 1)

    def test_partition_over_seeds(self):
        for seed in range(50):
            parts = split_indices(57, (0.8, 0.1, 0.1), seed)
            sets = [set(p) for p in parts]
            assert sorted(sum(parts, [])) == list(range(57))
            assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])

    def test_deterministic(self):
        assert split_indices(30, seed=4) == split_indices(30, seed=4)
        assert split_indices(30, seed=4) != split_indices(30, seed=5)

    def test_errors(self):
        with pytest.raises(ValueError, match="too small"):
            split_dataset(list(range(9)))
        with pytest.raises(ValueError):
            split_dataset(list(range(20)), (0.8, 0.1, 0.2))
        with pytest.raises(ValueError):
            split_dataset(list(range(20)), (1.0, 0.0, 0.0))


class TestPersistence:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 11)).astype(np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n11 7\n255\n")

    def test_pgm_with_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n2 1\n255\n\x01\x02")
        assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]

    def test_pgm_errors(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(ValueError, match="truncated"):
            read_pgm(tmp_path / "t.pgm")
        (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError, match="binary PGM"):
            read_pgm(tmp_path / "p2.pgm")

    def test_sample_round_trip(self, tmp_path):
        s = generate_phantom(PhantomParams(height=32, width=32, seed=8))
        files = save_sample(tmp_path, "s0", s)
        assert sorted(p.name for p in tmp_path.iterdir()) == sorted(files.values())
        back = load_sample(tmp_path, files)
        np.testing.assert_array_equal(back.mask, s.mask)
        np.testing.assert_array_equal(back.centerline, s.centerline)
        assert np.abs(back.image - s.image).max() <= 0.5 / 255 + 1e-12
        assert back.meta["params"] == s.meta["params"]
        assert PhantomParams.from_dict(back.meta["params"]) == PhantomParams(height=32, width=32, seed=8)
