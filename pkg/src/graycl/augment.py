"""Stochastic view-pair augmentation: flip, crop+resize, jitter, normalize.

Each view draws its randomness from an RNG substream derived from (root
seed, epoch, source index, view index), so results are identical whether
images are augmented serially or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataError, GrayImage
from .tensor import Tensor


@dataclass
class AugmentConfig:
    crop_scale_min: float = 0.5
    crop_scale_max: float = 0.8
    target_size: int = 32
    flip_prob: float = 0.5
    brightness_range: tuple = (0.8, 1.2)
    contrast_range: tuple = (0.8, 1.2)
    contrast_prob: float = 0.2
    norm_mean: float = 0.5
    norm_std: float = 0.5

    def validate(self):
        if not (0 < self.crop_scale_min <= self.crop_scale_max <= 1):
            raise DataError("crop scale range must satisfy 0 < min <= max <= 1")
        if not (0 <= self.flip_prob <= 1 and 0 <= self.contrast_prob <= 1):
            raise DataError("probabilities must lie in [0, 1]")
        if self.target_size < 8:
            raise DataError("target_size must be >= 8")
        if self.norm_std <= 0:
            raise DataError("norm_std must be positive")


@dataclass
class ViewPairBatch:
    views: Tensor  # [2N, 1, S, S]
    provenance: list = field(default_factory=list)  # source index per view


def random_flip(img, rng, flip_prob=0.5):
    """Mirror along a uniformly chosen axis with probability ``flip_prob``."""
    if rng.uniform() >= flip_prob:
        return img
    axis = int(rng.integers(0, 2))  # 0 = vertical mirror, 1 = horizontal
    return GrayImage.from_array(np.flip(img.pixels, axis=axis).copy())


def bilinear_resize(pixels, target_size):
    """Resize a 2-D array to a square (int) or (H, W) target, half-pixel centers."""
    h, w = pixels.shape
    if isinstance(target_size, int):
        target_size = (target_size, target_size)
    th, tw = target_size

    def coords(n_src, s):
        c = (np.arange(s) + 0.5) * n_src / s - 0.5
        c = np.clip(c, 0, n_src - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = c - lo
        return lo, hi, frac

    ylo, yhi, fy = coords(h, th)
    xlo, xhi, fx = coords(w, tw)
    top = pixels[ylo][:, xlo] * (1 - fx) + pixels[ylo][:, xhi] * fx
    bot = pixels[yhi][:, xlo] * (1 - fx) + pixels[yhi][:, xhi] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def random_crop_resize(img, rng, cfg):
    """Crop a random square (side scale in [min,max] of min(W,H)), resize."""
    h, w = img.pixels.shape
    if min(h, w) < 2:
        raise DataError("image too small to crop")
    s = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
    side = max(1, int(round(s * min(h, w))))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = img.pixels[top : top + side, left : left + side]
    return GrayImage.from_array(
        bilinear_resize(crop.astype(np.float64), cfg.target_size).astype(np.float32)
    )


def color_jitter(img, rng, cfg):
    """Brightness always; contrast with probability ``contrast_prob``."""
    b = rng.uniform(*cfg.brightness_range)
    out = np.clip(img.pixels * b, 0.0, 1.0)
    if rng.uniform() < cfg.contrast_prob:
        c = rng.uniform(*cfg.contrast_range)
        m = out.mean()
        out = np.clip(m + c * (out - m), 0.0, 1.0)
    return GrayImage.from_array(out)


def normalize(img, cfg):
    """(x - mean) / std, returned as a [1, S, S] tensor."""
    if cfg.norm_std <= 0:
        raise DataError("norm_std must be positive")
    arr = (img.pixels - cfg.norm_mean) / cfg.norm_std
    return Tensor(arr[None, :, :])


def augment_view(img, rng, cfg):
    """Full pipeline for one view: flip, crop/resize, jitter, normalize."""
    v = random_flip(img, rng, cfg.flip_prob)
    v = random_crop_resize(v, rng, cfg)
    v = color_jitter(v, rng, cfg)
    return normalize(v, cfg)


def view_rng(root_seed, epoch, source_index, view_index):
    """Independent substream for one (image, view) draw."""
    return np.random.default_rng(
        np.random.SeedSequence(root_seed, spawn_key=(2, epoch, source_index, view_index))
    )


def make_view_pair_batch(images, cfg, root_seed, epoch=0, source_indices=None):
    """Augment each image twice; views 2k and 2k+1 share source k."""
    if not images:
        raise DataError("make_view_pair_batch needs at least one image")
    cfg.validate()
    if source_indices is None:
        source_indices = list(range(len(images)))
    views = []
    provenance = []
    for img, src in zip(images, source_indices):
        for view_index in (0, 1):
            rng = view_rng(root_seed, epoch, src, view_index)
            views.append(augment_view(img, rng, cfg).data)
            provenance.append(src)
    return ViewPairBatch(views=Tensor(np.stack(views)), provenance=provenance)


def eval_transform(img, cfg):
    """Deterministic evaluation pipeline: resize to target, normalize."""
    resized = bilinear_resize(
        img.pixels.astype(np.float64), cfg.target_size
    ).astype(np.float32)
    return normalize(GrayImage.from_array(np.clip(resized, 0.0, 1.0)), cfg)
