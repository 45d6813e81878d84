import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from illumdiff.data import (
    CorruptionSpec,
    PairedSample,
    SynthRanges,
    apply_exposure_shift,
    apply_lowlight,
    generate_dataset,
    load_paired_dataset,
    make_source_images,
    read_image,
    read_manifest,
    split_rows,
    write_image,
)


class TestExposure:
    def test_zero_ev_identity(self):
        img = np.random.default_rng(0).random((3, 5, 5))
        np.testing.assert_allclose(apply_exposure_shift(img, 0.0), img, atol=1e-12)

    def test_one_stop_on_point_four(self):
        # 0.4 ** 2.2 * 2 re-encoded; equals 0.4 * 2 ** (1 / 2.2)
        out = apply_exposure_shift(np.array([0.4]), 1.0)[0]
        assert out == pytest.approx(0.4 * 2 ** (1 / 2.2), abs=1e-12)
        assert out == pytest.approx(0.548140, abs=5e-7)

    def test_saturation(self):
        assert apply_exposure_shift(np.array([0.6]), 4.0)[0] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.1, 4.0), st.sampled_from([-1, 1]), st.integers(0, 10_000))
    def test_round_trip_with_headroom(self, magnitude, sign, seed):
        ev = sign * magnitude
        rng = np.random.default_rng(seed)
        linear = rng.random((3, 6, 6)) * 2.0 ** (-abs(ev))
        img = linear ** (1 / 2.2)
        back = apply_exposure_shift(apply_exposure_shift(img, ev), -ev)
        np.testing.assert_allclose(back, img, atol=1e-4)

    def test_monotone_in_ev(self):
        img = np.linspace(0.05, 0.95, 20)
        evs = np.linspace(-3, 3, 13)
        outs = np.stack([apply_exposure_shift(img, ev) for ev in evs])
        assert np.all(np.diff(outs, axis=0) >= 0)

    @given(st.floats(-6, 6))
    def test_range(self, ev):
        out = apply_exposure_shift(np.linspace(0, 1, 11), ev)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestLowlight:
    def test_identity(self):
        img = np.random.default_rng(1).random((3, 4, 4))
        np.testing.assert_allclose(apply_lowlight(img, 1.0, 1.0), img)

    def test_square(self):
        assert apply_lowlight(np.array([0.5]), 2.0, 1.0)[0] == pytest.approx(0.25)

    def test_composition(self):
        assert apply_lowlight(np.array([0.5]), 2.0, 0.5)[0] == pytest.approx(0.125)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.2, 5.0), st.floats(0.01, 1.0), st.integers(0, 10_000))
    def test_monotone_and_in_range(self, gamma, illum, seed):
        x = np.sort(np.random.default_rng(seed).random(50))
        out = apply_lowlight(x, gamma, illum)
        assert np.all(np.diff(out) >= 0)
        assert out.min() >= 0 and out.max() <= 1

    @pytest.mark.parametrize("gamma,illum", [(0.0, 0.5), (-1.0, 0.5), (2.0, 0.0), (2.0, 1.5)])
    def test_invalid(self, gamma, illum):
        with pytest.raises(ValueError):
            apply_lowlight(np.array([0.5]), gamma, illum)

    def test_spec_consults_mode_fields_only(self):
        img = np.array([0.5])
        assert CorruptionSpec("lowlight", ev=3.0, gamma=2.0, illum=1.0).apply(img)[0] == pytest.approx(0.25)
        assert CorruptionSpec("ev_shift", ev=0.0, gamma=3.0, illum=0.1).apply(img)[0] == pytest.approx(0.5)
        with pytest.raises(ValueError):
            CorruptionSpec("blur").apply(img)


class TestImageIO:
    def test_png_round_trip_quantized(self, tmp_path):
        img = np.random.default_rng(2).random((3, 7, 5))
        write_image(tmp_path / "a.png", img)
        back = read_image(tmp_path / "a.png")
        assert back.shape == (3, 7, 5) and back.dtype == np.float32
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"junk")
        with pytest.raises(OSError, match="bad.png"):
            read_image(tmp_path / "bad.png")

    def test_sample_shape_check(self):
        with pytest.raises(ValueError):
            PairedSample(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), "overexposed", "x")
        with pytest.raises(ValueError):
            PairedSample(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), "blurry", "x")


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestGenerate:
    def test_balanced_and_labelled(self, tmp_path):
        rows = generate_dataset(tmp_path, 20, seed=4, size=16)
        labels = [r["label"] for r in rows]
        assert labels.count("overexposed") == labels.count("underexposed") == 10
        for r in rows:
            ev = float(r["ev"])
            assert 1.5 <= abs(ev) <= 3.5
            assert (ev > 0) == (r["label"] == "overexposed")
        assert read_manifest(tmp_path / "manifest.csv") == rows

    def test_tail_split_balanced(self, tmp_path):
        rows = generate_dataset(tmp_path, 30, seed=0, size=8)
        tail = split_rows(rows, "test", 10)
        assert [r["id"] for r in tail] == [f"{i:05d}" for i in range(20, 30)]
        assert sum(r["label"] == "overexposed" for r in tail) == 5
        assert len(split_rows(rows, "train", 10)) == 20

    def test_lowlight_mode(self, tmp_path):
        rows = generate_dataset(tmp_path, 6, seed=1, size=8, mode="lowlight")
        assert {r["label"] for r in rows} == {"lowlight"}
        for r in rows:
            assert 2.0 <= float(r["gamma"]) <= 4.0 and 0.1 <= float(r["illum"]) <= 0.5

    def test_byte_determinism(self, tmp_path):
        generate_dataset(tmp_path / "a", 6, seed=9, size=16)
        generate_dataset(tmp_path / "b", 6, seed=9, size=16)
        generate_dataset(tmp_path / "c", 6, seed=10, size=16)
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
        assert _digest(tmp_path / "a") != _digest(tmp_path / "c")

    def test_pairs_differ_and_in_range(self, tmp_path):
        generate_dataset(tmp_path, 8, seed=5, size=16)
        for s in load_paired_dataset(tmp_path):
            assert not np.array_equal(s.corrupted, s.ground_truth)
            assert s.corrupted.min() >= 0 and s.corrupted.max() <= 1

    def test_stored_pair_matches_spec(self, tmp_path):
        rows = generate_dataset(tmp_path, 4, seed=6, size=16)
        for row, s in zip(rows, load_paired_dataset(tmp_path)):
            expected = CorruptionSpec(row["mode"], float(row["ev"])).apply(s.ground_truth.astype(np.float64))
            # manifest ev is rounded to 1e-6; stored PNG is 8-bit
            assert np.abs(s.corrupted - expected).max() <= 0.5 / 255 + 1e-4

    def test_from_source_folder(self, tmp_path):
        make_source_images(tmp_path / "src", 3, size=24, seed=0)
        rows = generate_dataset(tmp_path / "out", 5, seed=0, source_dir=tmp_path / "src", size=16)
        assert len(rows) == 5
        assert read_image(tmp_path / "out" / "gt" / "00004.png").shape == (3, 16, 16)

    def test_errors(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, 0)
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError):
            generate_dataset(tmp_path / "o", 2, source_dir=tmp_path / "empty")
        with pytest.raises(ValueError):
            generate_dataset(tmp_path / "o", 2, ranges=SynthRanges(ev_min=0.0))
        with pytest.raises(ValueError):
            split_rows([{}] * 3, "test", 4)
        with pytest.raises(FileNotFoundError):
            load_paired_dataset(tmp_path / "empty")
