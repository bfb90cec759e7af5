"""Residual bottleneck encoder with projection and classifier heads.

The encoder follows the four-stage bottleneck design with an optional
small-input customization (3x3 stride-1 stem, identity pool). Heads are a
two-layer MLP projector (to 128-d, unit-normalized) and a linear binary
classifier. Parameters are addressable by name for checkpointing and
selective freezing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import RunningStats, Tensor


class ModelError(ValueError):
    pass


@dataclass
class EncoderConfig:
    stem: str = "3x3"  # "3x3": 3x3/stride1/identity pool; "7x7": 7x7/stride2/maxpool
    stage_blocks: list = field(default_factory=lambda: [1, 1, 1, 1])
    stage_widths: list = field(default_factory=lambda: [8, 16, 32, 64])
    expansion: int = 4

    @property
    def feature_dim(self):
        return self.stage_widths[3] * self.expansion

    def validate(self):
        if self.stem not in ("3x3", "7x7"):
            raise ModelError(f"unknown stem {self.stem!r}")
        if len(self.stage_blocks) != 4 or len(self.stage_widths) != 4:
            raise ModelError("exactly four stages expected")
        if any(b < 1 for b in self.stage_blocks):
            raise ModelError("every stage needs at least one block")

    def fingerprint(self):
        blob = json.dumps(
            {
                "stem": self.stem,
                "stage_blocks": list(self.stage_blocks),
                "stage_widths": list(self.stage_widths),
                "expansion": self.expansion,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESETS = {
    "tiny": EncoderConfig(stem="3x3", stage_blocks=[1, 1, 1, 1], stage_widths=[8, 16, 32, 64]),
    "paper": EncoderConfig(stem="3x3", stage_blocks=[3, 4, 6, 3], stage_widths=[64, 128, 256, 512]),
}


def preset_config(name):
    if name not in PRESETS:
        raise ModelError(f"unknown encoder preset {name!r}")
    cfg = PRESETS[name]
    return EncoderConfig(
        stem=cfg.stem,
        stage_blocks=list(cfg.stage_blocks),
        stage_widths=list(cfg.stage_widths),
        expansion=cfg.expansion,
    )


def _he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


class Conv:
    def __init__(self, rng, in_ch, out_ch, k, stride, padding, dtype):
        self.weight = _he_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.stride, self.padding)

    def params(self, prefix):
        return {prefix + ".weight": self.weight}

    def buffers(self, prefix):
        return {}


class BatchNorm:
    def __init__(self, channels, dtype):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.stats = RunningStats(channels, dtype=dtype)

    def forward(self, x, train):
        return T.batchnorm2d(x, self.gamma, self.beta, self.stats, train)

    def params(self, prefix):
        return {prefix + ".gamma": self.gamma, prefix + ".beta": self.beta}

    def buffers(self, prefix):
        return {
            prefix + ".running_mean": self.stats.mean,
            prefix + ".running_var": self.stats.var,
        }


class Dense:
    def __init__(self, rng, in_dim, out_dim, dtype):
        self.weight = _he_uniform(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype)

    def forward(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)

    def params(self, prefix):
        return {prefix + ".weight": self.weight, prefix + ".bias": self.bias}

    def buffers(self, prefix):
        return {}


class Bottleneck:
    """1x1 reduce, 3x3, 1x1 expand, each with batch norm; ReLU(residual + skip)."""

    def __init__(self, rng, in_ch, width, stride, expansion, dtype):
        out_ch = width * expansion
        self.conv1 = Conv(rng, in_ch, width, 1, 1, 0, dtype)
        self.bn1 = BatchNorm(width, dtype)
        self.conv2 = Conv(rng, width, width, 3, stride, 1, dtype)
        self.bn2 = BatchNorm(width, dtype)
        self.conv3 = Conv(rng, width, out_ch, 1, 1, 0, dtype)
        self.bn3 = BatchNorm(out_ch, dtype)
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv(rng, in_ch, out_ch, 1, stride, 0, dtype)
            self.proj_bn = BatchNorm(out_ch, dtype)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x, train):
        out = T.relu(self.bn1.forward(self.conv1.forward(x), train))
        out = T.relu(self.bn2.forward(self.conv2.forward(out), train))
        out = self.bn3.forward(self.conv3.forward(out), train)
        if self.proj is not None:
            skip = self.proj_bn.forward(self.proj.forward(x), train)
        else:
            skip = x
        return T.relu(T.add(out, skip))

    def _children(self, prefix):
        items = [
            (prefix + ".conv1", self.conv1),
            (prefix + ".bn1", self.bn1),
            (prefix + ".conv2", self.conv2),
            (prefix + ".bn2", self.bn2),
            (prefix + ".conv3", self.conv3),
            (prefix + ".bn3", self.bn3),
        ]
        if self.proj is not None:
            items += [(prefix + ".proj", self.proj), (prefix + ".proj_bn", self.proj_bn)]
        return items

    def params(self, prefix):
        out = {}
        for p, child in self._children(prefix):
            out.update(child.params(p))
        return out

    def buffers(self, prefix):
        out = {}
        for p, child in self._children(prefix):
            out.update(child.buffers(p))
        return out


class Model:
    """Encoder + projection head + classifier head with named parameters."""

    def __init__(self, config, seed, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
        stem_k, stem_stride = (3, 1) if config.stem == "3x3" else (7, 2)
        self.stem_conv = Conv(rng, 1, 64, stem_k, stem_stride, stem_k // 2, dtype)
        self.stem_bn = BatchNorm(64, dtype)
        self.stem_pool = config.stem == "7x7"
        self.stages = []
        in_ch = 64
        for s, (blocks, width) in enumerate(zip(config.stage_blocks, config.stage_widths)):
            stage = []
            for b in range(blocks):
                stride = 2 if (s > 0 and b == 0) else 1
                stage.append(Bottleneck(rng, in_ch, width, stride, config.expansion, dtype))
                in_ch = width * config.expansion
            self.stages.append(stage)
        fd = config.feature_dim
        self.proj_fc1 = Dense(rng, fd, fd, dtype)
        self.proj_fc2 = Dense(rng, fd, 128, dtype)
        self.cls_fc = Dense(rng, fd, 2, dtype)

    # -- parameter bookkeeping ------------------------------------------

    def _children(self):
        items = [("encoder.stem.conv", self.stem_conv), ("encoder.stem.bn", self.stem_bn)]
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage):
                items.append((f"encoder.stage{s + 1}.block{b}", block))
        items += [
            ("projection.fc1", self.proj_fc1),
            ("projection.fc2", self.proj_fc2),
            ("classifier.fc", self.cls_fc),
        ]
        return items

    def params(self):
        out = {}
        for prefix, child in self._children():
            out.update(child.params(prefix))
        return out

    def buffers(self):
        out = {}
        for prefix, child in self._children():
            out.update(child.buffers(prefix))
        return out

    def set_trainable(self, predicate):
        """Set requires_grad per parameter from a name predicate."""
        for name, p in self.params().items():
            p.requires_grad = bool(predicate(name))

    def trainable_params(self):
        return {n: p for n, p in self.params().items() if p.requires_grad}

    # -- forward passes -------------------------------------------------

    def encode(self, x, train=False, stage4_train=None, capture=False):
        """Features after global average pooling: [B, feature_dim].

        ``stage4_train`` overrides the batch-norm mode of stage 4 (used when
        fine-tuning unfreezes only the last stage). With ``capture`` the
        stage-4 pre-pool activation is returned alongside the features.
        """
        if x.data.ndim != 4:
            raise ModelError(f"expected [B,1,S,S] input, got shape {x.shape}")
        out = T.relu(self.stem_bn.forward(self.stem_conv.forward(x), train))
        if self.stem_pool:
            out = T.maxpool2d(out, 3, 2, 1)
        for s, stage in enumerate(self.stages):
            bn_train = train if (s < 3 or stage4_train is None) else stage4_train
            for block in stage:
                out = block.forward(out, bn_train)
        if out.shape[2] < 1 or out.shape[3] < 1:
            raise ModelError(f"spatial size collapsed to {out.shape[2:]}")
        h = T.global_avg_pool(out)
        return (h, out) if capture else h

    def project(self, h):
        """Projection head output, L2-normalized: [B, 128]."""
        z = self.proj_fc2.forward(T.relu(self.proj_fc1.forward(h)))
        return T.l2_normalize(z)

    def classify(self, h):
        """Binary logits: [B, 2]."""
        return self.cls_fc.forward(h)

    def forward_with_capture(self, x, train=False):
        """(logits, stage-4 activations) for explanation passes."""
        h, acts = self.encode(x, train=train, capture=True)
        return self.classify(h), acts


def build(config, seed, dtype=np.float32):
    """Initialize a full model deterministically from ``seed``."""
    return Model(config, seed, dtype=dtype)


def parameter_count(model):
    return sum(p.data.size for p in model.params().values())
