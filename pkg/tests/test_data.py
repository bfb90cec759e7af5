import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from graycl.data import (
    DataError,
    GrayImage,
    LabeledSample,
    image_files,
    load_labeled,
    load_unlabeled,
    read_image,
    split,
    synth_generate,
    write_image,
)


class TestGrayImage:
    def test_from_array_sets_dims(self):
        img = GrayImage.from_array(np.zeros((3, 5)))
        assert (img.height, img.width) == (3, 5)
        assert img.pixels.dtype == np.float32

    def test_from_array_rejects_wrong_rank(self):
        with pytest.raises(DataError, match="2-D"):
            GrayImage.from_array(np.zeros((3, 5, 1)))


class TestIo:
    def test_pgm_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        levels = rng.integers(0, 256, size=(9, 7)).astype(np.float32)
        img = GrayImage.from_array(levels / 255.0)
        path = str(tmp_path / "x.pgm")
        write_image(img, path)
        back = read_image(path)
        np.testing.assert_array_equal(back.pixels, img.pixels)
        assert (back.height, back.width) == (9, 7)

    def test_png_round_trip_exact(self, tmp_path):
        img = GrayImage.from_array(np.linspace(0, 1, 64).reshape(8, 8))
        path = str(tmp_path / "x.png")
        write_image(img, path)
        back = read_image(path)
        assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255.0

    def test_rejects_color_image(self, tmp_path):
        path = str(tmp_path / "rgb.png")
        Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
        with pytest.raises(DataError, match="grayscale"):
            read_image(path)

    def test_rejects_garbage_file(self, tmp_path):
        path = str(tmp_path / "junk.png")
        with open(path, "wb") as f:
            f.write(b"not an image")
        with pytest.raises(DataError, match="cannot decode"):
            read_image(path)

    def test_image_files_sorted_and_filtered(self, tmp_path):
        for name in ("b.png", "a.pgm", "notes.txt", "c.PNG"):
            (tmp_path / name).write_bytes(b"")
        names = [os.path.basename(p) for p in image_files(str(tmp_path))]
        assert names == ["a.pgm", "b.png", "c.PNG"]

    def test_load_unlabeled_empty_dir(self, tmp_path):
        with pytest.raises(DataError, match="no supported images"):
            load_unlabeled(str(tmp_path))

    def test_load_labeled_layout(self, tmp_path):
        for sub, n in (("benign", 2), ("malignant", 3)):
            os.makedirs(tmp_path / sub)
            for i in range(n):
                write_image(
                    GrayImage.from_array(np.full((4, 4), 0.5, np.float32)),
                    str(tmp_path / sub / f"{i}.pgm"),
                )
        samples = load_labeled(str(tmp_path))
        assert [s.label for s in samples] == [0, 0, 1, 1, 1]

    def test_load_labeled_missing_class(self, tmp_path):
        with pytest.raises(DataError, match="missing class directory"):
            load_labeled(str(tmp_path))


class TestSynth:
    def test_rejects_odd_count(self):
        with pytest.raises(DataError, match="even"):
            synth_generate(5)

    def test_balanced_labels_and_range(self):
        samples = synth_generate(8, image_size=32, seed=1)
        assert [s.label for s in samples] == [0, 1] * 4
        for s in samples:
            assert s.image.pixels.shape == (32, 32)
            assert s.image.pixels.min() >= 0.0
            assert s.image.pixels.max() <= 1.0

    def test_deterministic_in_seed(self):
        a = synth_generate(6, image_size=24, seed=3)
        b = synth_generate(6, image_size=24, seed=3)
        c = synth_generate(6, image_size=24, seed=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image.pixels, y.image.pixels)
        assert any(
            not np.array_equal(x.image.pixels, y.image.pixels)
            for x, y in zip(a, c)
        )

    def test_classes_separate_in_mean_intensity(self):
        # the malignant blob lifts the image mean well beyond the spread
        # of benign image means
        samples = synth_generate(400, image_size=32, seed=11)
        means = np.array([s.image.pixels.mean() for s in samples])
        labels = np.array([s.label for s in samples])
        lift = means[labels == 1].mean() - means[labels == 0].mean()
        spread = means[labels == 0].std()
        assert lift > 5 * spread

    def test_benign_has_no_blob_signal(self):
        # without the blob both halves of the dataset share the same
        # background model, so benign means should straddle 0.35 closely
        samples = synth_generate(200, image_size=32, seed=2)
        benign = np.array(
            [s.image.pixels.mean() for s in samples if s.label == 0]
        )
        assert abs(benign.mean() - 0.35) < 0.02


class TestSplit:
    @staticmethod
    def tiny_samples(n):
        return [
            LabeledSample(GrayImage.from_array(np.full((2, 2), i / n)), i % 2)
            for i in range(n)
        ]

    def test_stratified_counts(self):
        train, evals = split(self.tiny_samples(30), (2 / 3, 1 / 3), seed=0)
        assert len(train) == 20 and len(evals) == 10
        for part, n in ((train, 20), (evals, 10)):
            labels = [s.label for s in part]
            assert labels.count(0) == n // 2
            assert labels.count(1) == n // 2

    def test_disjoint_and_exhaustive(self):
        samples = self.tiny_samples(20)
        train, evals = split(samples, (0.5, 0.5), seed=9)
        key = lambda s: s.image.pixels[0, 0]
        seen = sorted(key(s) for s in train + evals)
        assert seen == sorted(key(s) for s in samples)

    def test_deterministic_in_seed(self):
        samples = self.tiny_samples(20)
        a = split(samples, (0.5, 0.5), seed=5)
        b = split(samples, (0.5, 0.5), seed=5)
        c = split(samples, (0.5, 0.5), seed=6)
        assert [s.image.pixels[0, 0] for s in a[0]] == [
            s.image.pixels[0, 0] for s in b[0]
        ]
        assert [s.image.pixels[0, 0] for s in a[0]] != [
            s.image.pixels[0, 0] for s in c[0]
        ]

    def test_rejects_bad_fractions(self):
        samples = self.tiny_samples(10)
        with pytest.raises(DataError, match="sum to 1"):
            split(samples, (0.5, 0.4), seed=0)
        with pytest.raises(DataError, match="positive"):
            split(samples, (1.0, 0.0), seed=0)

    def test_rejects_empty_side(self):
        samples = self.tiny_samples(4)
        with pytest.raises(DataError, match="empty"):
            split(samples, (0.9, 0.1), seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(6, 40).map(lambda k: 2 * k),
        frac=st.floats(0.3, 0.7),
        seed=st.integers(0, 1000),
    )
    def test_split_partition_property(self, n, frac, seed):
        samples = self.tiny_samples(n)
        train, evals = split(samples, (frac, 1.0 - frac), seed=seed)
        assert len(train) + len(evals) == n
        ids = sorted(id(s) for s in train + evals)
        assert ids == sorted(id(s) for s in samples)
