"""Class-specific heatmaps from the last convolutional stage (Grad-CAM).

The gradient of the target logit with respect to the stage-4 activations is
spatially averaged into per-channel weights; the ReLU of the weighted
activation sum is min-max normalized and upsampled to the input size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .augment import AugmentConfig, bilinear_resize, eval_transform
from .data import GrayImage, write_image
from .tensor import Tape, Tensor


class ExplainError(ValueError):
    pass


@dataclass
class Heatmap:
    values: np.ndarray  # [H, W] in [0, 1]
    target_class: int
    logits: np.ndarray


def gradcam(model, image, target_class, aug_cfg=None):
    """Heatmap over ``image`` for ``target_class`` (or "predicted")."""
    aug_cfg = aug_cfg or AugmentConfig()
    x = eval_transform(image, aug_cfg)
    inp = Tensor(x.data[None], requires_grad=True)  # force tape recording
    with Tape() as tape:
        logits, acts = model.forward_with_capture(inp, train=False)
        if target_class == "predicted":
            target_class = int(logits.data[0].argmax())
        if not 0 <= target_class < logits.shape[1]:
            raise ExplainError(f"target class {target_class} out of range")
        target = T.pick(logits, (0, target_class))
        T.backward(target, tape)
    grads = acts.grad  # [1, K, Hf, Wf]
    activations = acts.data[0]
    if grads is None or not np.any(grads):
        cam = np.zeros((image.height, image.width), dtype=np.float32)
        return Heatmap(values=cam, target_class=target_class, logits=logits.data[0].copy())
    alpha = grads[0].mean(axis=(1, 2))  # per-channel weight
    cam = np.maximum((alpha[:, None, None] * activations).sum(axis=0), 0.0)
    lo, peak = cam.min(), cam.max()
    if peak > lo:
        cam = (cam - lo) / (peak - lo)
    elif peak > 0:
        cam = np.ones_like(cam)  # uniformly hot map
    up = bilinear_resize(cam.astype(np.float64), (image.height, image.width))
    return Heatmap(
        values=np.clip(up, 0.0, 1.0).astype(np.float32),
        target_class=target_class,
        logits=logits.data[0].copy(),
    )


def _color_ramp(v):
    """Map [0,1] to a black-red-yellow ramp, returning uint8 RGB."""
    r = np.clip(v * 2.0, 0, 1)
    g = np.clip(v * 2.0 - 1.0, 0, 1)
    b = np.zeros_like(v)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def render_heatmap(hm, base, out_prefix):
    """Write raw heatmap (PGM), overlay (PNG), and a JSON sidecar.

    Returns the three paths written.
    """
    if hm.values.shape != base.pixels.shape:
        raise ExplainError(
            f"heatmap shape {hm.values.shape} does not match image "
            f"{base.pixels.shape}"
        )
    raw_path = out_prefix + ".cam.pgm"
    overlay_path = out_prefix + ".overlay.png"
    sidecar_path = out_prefix + ".cam.json"
    write_image(GrayImage.from_array(hm.values), raw_path)
    gray = (base.pixels[..., None] * 255).astype(np.float64)
    ramp = _color_ramp(hm.values).astype(np.float64)
    overlay = np.clip(0.5 * gray + 0.5 * ramp, 0, 255).astype(np.uint8)
    Image.fromarray(overlay, mode="RGB").save(overlay_path)
    with open(sidecar_path, "w") as f:
        json.dump(
            {
                "target_class": int(hm.target_class),
                "logits": [float(v) for v in hm.logits],
            },
            f,
            indent=2,
        )
    return raw_path, overlay_path, sidecar_path
