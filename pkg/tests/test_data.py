import logging

import numpy as np
import pytest
from PIL import Image

from drgaze.data import (
    Pair,
    PairSampler,
    Sample,
    dataset_fingerprint,
    group_by_subject,
    inject_noise,
    load_dataset,
    save_dataset,
    split_samples,
    validate_image,
    validate_sample,
    with_noisy_fraction,
)
from drgaze.errors import DataError
from drgaze.geometry import pitch_yaw_to_vector
from drgaze.synth import synth_generate
from helpers import TINY_RESOLUTION


def _write_png(path, shape=(36, 60), value=128):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full(shape, value, dtype=np.uint8), mode="L").save(path)


def _write_labels(root, rows):
    root.mkdir(parents=True, exist_ok=True)
    (root / "labels.csv").write_text("image,side,pitch,yaw\n" + "".join(r + "\n" for r in rows))


class TestLoadDataset:
    def test_convention_identity_row(self, tmp_path):
        _write_png(tmp_path / "p00" / "img_0001.png")
        _write_labels(tmp_path, ["p00/img_0001.png,left,0.0,0.0"])
        samples = load_dataset(tmp_path)
        assert len(samples) == 1
        np.testing.assert_allclose(samples[0].gaze, [0.0, 0.0, -1.0], atol=1e-15)
        assert samples[0].subject == "p00" and samples[0].side == "left"

    def test_three_subject_fixture_counts(self, tmp_path):
        rows = []
        for subject in ("p00", "p01", "p02"):
            for i in range(4):
                name = f"{subject}/img_{i:04d}.png"
                _write_png(tmp_path / name)
                rows.append(f"{name},{'left' if i % 2 else 'right'},0.1,0.{i}")
        _write_labels(tmp_path, rows)
        samples = load_dataset(tmp_path)
        assert len(samples) == 12
        assert sorted(group_by_subject(samples)) == ["p00", "p01", "p02"]

    def test_empty_labels_warns(self, tmp_path, caplog):
        _write_labels(tmp_path, [])
        with caplog.at_level(logging.WARNING):
            assert load_dataset(tmp_path) == []
        assert any("empty" in rec.message for rec in caplog.records)

    def test_missing_labels_file(self, tmp_path):
        with pytest.raises(DataError, match="missing label file"):
            load_dataset(tmp_path)

    def test_bad_header(self, tmp_path):
        (tmp_path / "labels.csv").write_text("a,b,c,d\n")
        with pytest.raises(DataError, match="labels.csv:1"):
            load_dataset(tmp_path)

    def test_row_errors_carry_file_and_line(self, tmp_path):
        _write_png(tmp_path / "p00" / "a.png")
        _write_labels(tmp_path, ["p00/a.png,left,0.0,0.0", "p00/a.png,left,zzz,0.0"])
        with pytest.raises(DataError, match="labels.csv:3"):
            load_dataset(tmp_path)

    def test_missing_image(self, tmp_path):
        _write_labels(tmp_path, ["p00/gone.png,left,0.0,0.0"])
        with pytest.raises(DataError, match="image not found"):
            load_dataset(tmp_path)

    def test_out_of_range_label(self, tmp_path):
        _write_png(tmp_path / "p00" / "a.png")
        _write_labels(tmp_path, ["p00/a.png,left,3.0,0.0"])
        with pytest.raises(DataError, match="outside valid ranges"):
            load_dataset(tmp_path)

    def test_bad_side(self, tmp_path):
        _write_png(tmp_path / "p00" / "a.png")
        _write_labels(tmp_path, ["p00/a.png,middle,0.0,0.0"])
        with pytest.raises(DataError, match="side must be"):
            load_dataset(tmp_path)

    def test_side_filter(self, tmp_path):
        for i, side in enumerate(["left", "right", "left"]):
            _write_png(tmp_path / "p00" / f"{i}.png")
        _write_labels(
            tmp_path,
            [f"p00/{i}.png,{side},0.0,0.0" for i, side in enumerate(["left", "right", "left"])],
        )
        assert len(load_dataset(tmp_path, side="left")) == 2
        assert len(load_dataset(tmp_path, side="right")) == 1
        assert len(load_dataset(tmp_path, side="all")) == 3

    def test_unknown_convention_or_side(self, tmp_path):
        _write_labels(tmp_path, [])
        with pytest.raises(DataError, match="convention"):
            load_dataset(tmp_path, convention="martian")
        with pytest.raises(DataError, match="side filter"):
            load_dataset(tmp_path, side="upper")


class TestSaveRoundTrip:
    def test_save_load_is_lossless(self, tmp_path):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=13)
        save_dataset(samples, tmp_path)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == len(samples)
        by_name = {s.name: s for s in loaded}
        for original in samples:
            got = by_name[original.name]
            np.testing.assert_array_equal(got.image, original.image)
            np.testing.assert_array_equal(got.gaze, original.gaze)
            assert got.side == original.side and got.subject == original.subject

    def test_fingerprint_tracks_content_and_ignores_manifest(self, tmp_path):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=13)
        save_dataset(samples, tmp_path)
        fp1 = dataset_fingerprint(tmp_path)
        (tmp_path / "manifest.json").write_text("{}")
        assert dataset_fingerprint(tmp_path) == fp1
        (tmp_path / "labels.csv").write_text("image,side,pitch,yaw\n")
        assert dataset_fingerprint(tmp_path) != fp1


class TestPairSampler:
    @pytest.fixture()
    def samples(self):
        return synth_generate(3, 6, resolution=TINY_RESOLUTION, seed=2)

    def test_pairs_stay_within_subject_and_never_self(self, samples):
        sampler = PairSampler(samples, "train", seed=1)
        for epoch in range(3):
            for pair in sampler.epoch_pairs(epoch):
                assert pair.test.subject == pair.guidance.subject
                assert pair.test is not pair.guidance
        for pair in PairSampler(samples, "eval", seed=1).eval_pairs():
            assert pair.test.subject == pair.guidance.subject
            assert pair.test is not pair.guidance

    def test_two_sample_subject_forced_choice(self):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=3)
        two = [s for s in samples if s.subject == "s00"][:2] + [
            s for s in samples if s.subject == "s01"
        ][:2]
        for pair in PairSampler(two, "train", seed=5).epoch_pairs(0):
            peers = [s for s in two if s.subject == pair.test.subject and s is not pair.test]
            assert pair.guidance is peers[0]

    def test_same_seed_identical_sequences(self, samples):
        a = PairSampler(samples, "train", seed=7)
        b = PairSampler(samples, "train", seed=7)
        def ids(pairs):
            return [(id(p.test), id(p.guidance)) for p in pairs]

        for epoch in range(2):
            assert ids(a.epoch_pairs(epoch)) == ids(b.epoch_pairs(epoch))
        assert ids(a.epoch_pairs(0)) != ids(a.epoch_pairs(1))

    def test_eval_choice_fixed_by_seed(self, samples):
        a = [id(p.guidance) for p in PairSampler(samples, "eval", seed=9).eval_pairs()]
        b = [id(p.guidance) for p in PairSampler(samples, "eval", seed=9).eval_pairs()]
        c = [id(p.guidance) for p in PairSampler(samples, "eval", seed=10).eval_pairs()]
        assert a == b
        assert a != c

    def test_guidance_uniformity_within_3_sigma(self):
        samples = synth_generate(2, 6, resolution=TINY_RESOLUTION, seed=6)
        subject = [s for s in samples if s.subject == "s00"]
        target = subject[0]
        sampler = PairSampler(samples, "train", seed=8)
        counts = {id(s): 0 for s in subject[1:]}
        draws = 0
        for epoch in range(10000 // len(sampler.samples) + 1):
            for pair in sampler.epoch_pairs(epoch):
                if pair.test is target:
                    counts[id(pair.guidance)] += 1
                    draws += 1
        expected = draws / 5
        sigma = np.sqrt(draws * 0.2 * 0.8)
        for count in counts.values():
            assert abs(count - expected) <= 3 * sigma

    def test_singleton_subject_skipped_with_warning(self, caplog):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=3)
        lonely = Sample(
            image=samples[0].image.copy(),
            gaze=samples[0].gaze.copy(),
            subject="s99",
            name="s99/img.png",
        )
        with caplog.at_level(logging.WARNING):
            sampler = PairSampler(samples + [lonely], "train", seed=1)
        assert any("s99" in rec.message for rec in caplog.records)
        assert all(p.test.subject != "s99" for p in sampler.epoch_pairs(0))

    def test_no_eligible_subject_raises(self):
        sample = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=3)[0]
        with pytest.raises(DataError):
            PairSampler([sample], "train", seed=1)

    def test_cross_subject_pair_rejected(self, samples):
        a = [s for s in samples if s.subject == "s00"][0]
        b = [s for s in samples if s.subject == "s01"][0]
        with pytest.raises(DataError):
            Pair(test=a, guidance=b)
        with pytest.raises(DataError):
            Pair(test=a, guidance=a)


class TestInjectNoise:
    @pytest.fixture()
    def sample(self):
        return synth_generate(2, 4, seed=4)[0]

    def test_blank_zeroes_image_and_flags_noisy(self, sample):
        noisy = inject_noise(sample, "blank", seed=0)
        assert noisy.flag == "noisy"
        np.testing.assert_array_equal(noisy.image, np.zeros_like(sample.image))

    def test_label_subject_side_untouched(self, sample):
        for mode in ("blank", "occlude_half", "blink"):
            noisy = inject_noise(sample, mode, seed=1)
            np.testing.assert_array_equal(noisy.gaze, sample.gaze)
            assert noisy.subject == sample.subject and noisy.side == sample.side
            # the source sample is never mutated
            assert sample.flag == "normal"

    def test_deterministic_for_same_seed(self, sample):
        a = inject_noise(sample, "occlude_half", seed=5)
        b = inject_noise(sample, "occlude_half", seed=5)
        np.testing.assert_array_equal(a.image, b.image)

    def test_occlude_half_zeroes_exactly_one_half(self, sample):
        w = sample.image.shape[1]
        noisy = inject_noise(sample, "occlude_half", seed=2)
        left_zero = not noisy.image[:, : w // 2].any()
        right_zero = not noisy.image[:, w // 2 :].any()
        assert left_zero != right_zero

    def test_unknown_mode(self, sample):
        with pytest.raises(ValueError):
            inject_noise(sample, "fog", seed=0)

    def test_blink_removes_iris_pixels(self):
        # measured against the renderer's own iris mask
        from drgaze.synth import iris_mask, render_eye, sample_appearance

        rng = np.random.default_rng(11)
        appearance = sample_appearance(rng)
        for pitch, yaw in [(0.0, 0.0), (0.3, -0.4), (-0.35, 0.55)]:
            image = render_eye(appearance, pitch, yaw)
            mask = iris_mask(appearance, pitch, yaw)
            sample = Sample(image=image, gaze=pitch_yaw_to_vector(pitch, yaw), subject="s00")
            blinked = inject_noise(sample, "blink", seed=3)
            still_dark = (blinked.image < 0.4) & mask
            assert still_dark.sum() <= 0.1 * mask.sum()


class TestNoisyFraction:
    def test_fraction_flags_subset_and_keeps_labels(self):
        samples = synth_generate(3, 20, resolution=TINY_RESOLUTION, seed=8)
        noisy = with_noisy_fraction(samples, 0.3, seed=1)
        flagged = [s for s in noisy if s.flag == "noisy"]
        assert 0 < len(flagged) < len(samples)
        for before, after in zip(samples, noisy):
            np.testing.assert_array_equal(before.gaze, after.gaze)
        np.testing.assert_array_equal(
            [s.flag for s in with_noisy_fraction(samples, 0.3, seed=1)],
            [s.flag for s in noisy],
        )

    def test_fraction_bounds(self):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=8)
        with pytest.raises(ValueError):
            with_noisy_fraction(samples, 1.5, seed=0)


class TestSplitSamples:
    def test_split_keeps_two_per_subject_on_both_sides(self):
        samples = synth_generate(3, 9, resolution=TINY_RESOLUTION, seed=9)
        train, held = split_samples(samples, 0.25, seed=3)
        assert len(train) + len(held) == len(samples)
        for part in (train, held):
            for members in group_by_subject(part).values():
                assert len(members) >= 2

    def test_split_needs_four_samples(self):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=9)
        with pytest.raises(DataError):
            split_samples(samples[:3] + samples[4:], 0.25, seed=0)

    def test_fraction_validation(self):
        samples = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=9)
        with pytest.raises(ValueError):
            split_samples(samples, 0.0, seed=0)


class TestValidation:
    def test_validate_image_errors(self):
        with pytest.raises(DataError, match="2-D"):
            validate_image(np.zeros((2, 3, 4)))
        with pytest.raises(DataError, match=r"\[0, 1\]"):
            validate_image(np.full((4, 4), 2.0))
        with pytest.raises(DataError, match="non-finite"):
            validate_image(np.full((4, 4), np.nan))
        with pytest.raises(DataError, match="resolution"):
            validate_image(np.zeros((4, 4)), resolution=(5, 5))

    def test_validate_sample_errors(self):
        good = synth_generate(2, 4, resolution=TINY_RESOLUTION, seed=1)[0]
        validate_sample(good)
        bad = Sample(image=good.image, gaze=np.array([0.0, 0.0, -2.0]), subject="x")
        with pytest.raises(DataError, match="non-unit"):
            validate_sample(bad)
        with pytest.raises(DataError, match="non-empty"):
            validate_sample(Sample(image=good.image, gaze=good.gaze, subject=""))
