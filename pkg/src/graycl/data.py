"""Dataset ingestion, synthetic data generation, and deterministic splits.

Images are single-channel with pixel values in [0, 1]. Supported on-disk
formats are 8-bit grayscale PGM (binary P5) and 8-bit grayscale PNG; color
files are rejected so provenance stays explicit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

_EXTENSIONS = (".pgm", ".png")


class DataError(ValueError):
    pass


@dataclass
class GrayImage:
    """Single-channel image; ``pixels`` is a row-major [H, W] float array."""

    width: int
    height: int
    pixels: np.ndarray

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 2:
            raise DataError(f"expected 2-D pixel array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)


@dataclass
class LabeledSample:
    image: GrayImage
    label: int  # 0 = benign, 1 = malignant


@dataclass
class DatasetManifest:
    source: str
    counts: dict = field(default_factory=dict)
    seed: int | None = None
    fractions: list | None = None

    def write(self, path):
        with open(path, "w") as f:
            json.dump(
                {
                    "source": self.source,
                    "counts": self.counts,
                    "seed": self.seed,
                    "fractions": self.fractions,
                },
                f,
                indent=2,
            )


def read_image(path):
    """Decode one grayscale file to a GrayImage with pixels in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(
                    f"{path}: mode {im.mode} is not 8-bit grayscale; "
                    "convert explicitly before loading"
                )
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    return GrayImage.from_array(arr)


def write_image(img, path):
    """Write a GrayImage as 8-bit grayscale (PGM or PNG by extension)."""
    arr = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def image_files(directory):
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise DataError(f"cannot list {directory}: {exc}") from exc
    return [
        os.path.join(directory, n)
        for n in names
        if n.lower().endswith(_EXTENSIONS)
    ]


def load_unlabeled(directory):
    """Load every supported image in a flat directory, filename order."""
    files = image_files(directory)
    if not files:
        raise DataError(f"no supported images in {directory}")
    return [read_image(p) for p in files]


def load_labeled(root):
    """Load ``root/benign`` and ``root/malignant`` as labeled samples."""
    samples = []
    for label, sub in ((0, "benign"), (1, "malignant")):
        d = os.path.join(root, sub)
        if not os.path.isdir(d):
            raise DataError(f"missing class directory {d}")
        files = image_files(d)
        if not files:
            raise DataError(f"class directory {d} contains no images")
        samples.extend(LabeledSample(read_image(p), label) for p in files)
    return samples


def synth_image(rng, image_size, blob_contrast, noise_sigma, with_blob):
    """One synthetic image: low-frequency background, noise, optional blob."""
    s = image_size
    yy, xx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    # one oriented low-frequency wave per image: orientation survives crop
    # and resize, so each image stays identifiable across augmented views;
    # mean-normalized so class means differ only through the blob
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    pattern = np.cos(
        2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) / s + phase
    )
    pattern -= pattern.mean()
    pattern /= pattern.std() + 1e-9
    img = 0.35 + 0.1 * pattern
    img = img + rng.normal(0.0, noise_sigma, size=(s, s))
    if with_blob:
        sigma = s / 8.0
        cy = rng.uniform(0.25 * s, 0.75 * s)
        cx = rng.uniform(0.25 * s, 0.75 * s)
        img = img + blob_contrast * np.exp(
            -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2)
        )
    return GrayImage.from_array(np.clip(img, 0.0, 1.0))


def synth_generate(n, image_size=64, blob_contrast=0.5, noise_sigma=0.05, seed=0):
    """Generate a balanced synthetic benign/malignant dataset.

    Class 0 is background plus noise; class 1 additionally carries one bright
    Gaussian blob at a random interior location. Fully determined by ``seed``.
    """
    if n % 2 != 0:
        raise DataError("synth_generate needs an even sample count")
    if image_size < 16:
        raise DataError("image_size must be >= 16")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    samples = []
    for i in range(n):
        label = i % 2
        img = synth_image(rng, image_size, blob_contrast, noise_sigma, label == 1)
        samples.append(LabeledSample(img, label))
    return samples


def split(samples, fractions, seed):
    """Stratified deterministic split into (train, eval).

    ``fractions`` is (train_frac, eval_frac), positive and summing to 1.
    """
    if len(fractions) != 2 or any(f <= 0 for f in fractions):
        raise DataError("fractions must be two positive values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train, evals = [], []
    for label in sorted({s.label for s in samples}):
        idx = [i for i, s in enumerate(samples) if s.label == label]
        perm = rng.permutation(len(idx))
        n_train = int(round(fractions[0] * len(idx)))
        if n_train == 0 or n_train == len(idx):
            raise DataError(f"split leaves class {label} empty on one side")
        for j, p in enumerate(perm):
            (train if j < n_train else evals).append(samples[idx[p]])
    return train, evals
