"""Two-phase training: contrastive pretraining, then a frozen-encoder
linear probe; plus binary checkpoint serialization.

All randomness derives from one root seed via numpy SeedSequence spawn
keys, so shuffles and augmentations are reproducible per epoch and a
resumed run replays the uninterrupted loss sequence exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import loss as loss_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import tensor as T
from .augment import AugmentConfig, eval_transform, make_view_pair_batch
from .optim import Lars, LarsConfig, ScheduleConfig, Sgd, lr_at
from .tensor import Tape, Tensor

CHECKPOINT_MAGIC = b"CLCKPT01"
CHECKPOINT_VERSION = 1


class TrainError(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    epochs: int = 60
    pairs_per_batch: int = 128  # N; batch carries 2N augmented views
    tau: float = 0.5
    seed: int = 0
    preset: str = "tiny"
    lars: LarsConfig = field(default_factory=LarsConfig)
    warmup_frac: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if self.pairs_per_batch < 1:
            raise TrainError("pairs_per_batch must be >= 1")
        if self.tau <= 0:
            raise TrainError("tau must be positive")


@dataclass
class FinetuneConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    freeze_mode: str = "encoder_all"  # or "all_but_last_stage"
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if self.freeze_mode not in ("encoder_all", "all_but_last_stage"):
            raise TrainError(f"unknown freeze_mode {self.freeze_mode!r}")


@dataclass
class Checkpoint:
    fingerprint: str
    config: dict  # snapshot of model/run settings
    epoch: int
    root_seed: int
    params: dict  # name -> float32 ndarray
    buffers: dict  # name -> float32 ndarray (batch-norm running stats)
    opt_state: dict | None = None
    version: int = CHECKPOINT_VERSION


def snapshot_model(model, epoch, root_seed, config, opt_state=None):
    for name, p in model.params().items():
        if not np.all(np.isfinite(p.data)):
            raise TrainError(f"refusing to checkpoint non-finite parameter {name!r}")
    return Checkpoint(
        fingerprint=model.config.fingerprint(),
        config=config,
        epoch=epoch,
        root_seed=root_seed,
        params={n: p.data.astype(np.float32).copy() for n, p in model.params().items()},
        buffers={n: b.astype(np.float32).copy() for n, b in model.buffers().items()},
        opt_state=opt_state,
    )


def model_from_checkpoint(ckpt):
    enc = ckpt.config["encoder"]
    cfg = model_mod.EncoderConfig(
        stem=enc["stem"],
        stage_blocks=list(enc["stage_blocks"]),
        stage_widths=list(enc["stage_widths"]),
        expansion=enc["expansion"],
    )
    if cfg.fingerprint() != ckpt.fingerprint:
        raise TrainError("checkpoint fingerprint does not match its own config")
    m = model_mod.build(cfg, seed=0)
    params = m.params()
    if set(params) != set(ckpt.params):
        raise TrainError("checkpoint parameter names do not match architecture")
    for name, p in params.items():
        p.data = ckpt.params[name].copy()
    buffers = m.buffers()
    for name, b in buffers.items():
        b[...] = ckpt.buffers[name]
    return m


def _encoder_snapshot(cfg):
    return {
        "stem": cfg.stem,
        "stage_blocks": list(cfg.stage_blocks),
        "stage_widths": list(cfg.stage_widths),
        "expansion": cfg.expansion,
    }


def _shuffle_rng(root_seed, phase, epoch):
    return np.random.default_rng(
        np.random.SeedSequence(root_seed, spawn_key=(phase, epoch))
    )


def pretrain(config, unlabeled, resume=None, stop_epoch=None):
    """Contrastive pretraining over unlabeled images.

    Returns (checkpoint, log rows). Each log row is a dict with epoch,
    phase, loss, accuracy (None during pretraining), and lr. ``resume``
    continues a run from a previously saved checkpoint; ``stop_epoch``
    checkpoints mid-run while keeping the schedule anchored to
    ``config.epochs``, so a resumed run replays the full run exactly.
    """
    config.validate()
    n_pairs = config.pairs_per_batch
    if len(unlabeled) < n_pairs:
        raise TrainError(
            f"need at least {n_pairs} images for one batch, got {len(unlabeled)}"
        )
    enc_cfg = model_mod.preset_config(config.preset)
    batches_per_epoch = len(unlabeled) // n_pairs  # trailing partial batch dropped
    total_steps = config.epochs * batches_per_epoch
    sched = ScheduleConfig(
        warmup_steps=max(1, int(round(config.warmup_frac * total_steps))),
        total_steps=total_steps,
        base_lr=config.lars.base_lr,
    )

    if resume is not None:
        if resume.fingerprint != enc_cfg.fingerprint():
            raise TrainError("resume checkpoint does not match configured preset")
        m = model_from_checkpoint(resume)
        start_epoch = resume.epoch
    else:
        m = model_mod.build(enc_cfg, seed=config.seed)
        start_epoch = 0

    m.set_trainable(lambda name: not name.startswith("classifier."))
    opt = Lars(m.trainable_params(), config.lars)
    if resume is not None and resume.opt_state:
        for name in opt.state:
            opt.state[name] = resume.opt_state[name].copy()

    end_epoch = config.epochs if stop_epoch is None else stop_epoch
    if not start_epoch < end_epoch <= config.epochs:
        raise TrainError(
            f"stop_epoch {end_epoch} outside ({start_epoch}, {config.epochs}]"
        )
    log = []
    step = start_epoch * batches_per_epoch
    for epoch in range(start_epoch, end_epoch):
        perm = _shuffle_rng(config.seed, 1, epoch).permutation(len(unlabeled))
        epoch_losses = []
        lr = 0.0
        for b in range(batches_per_epoch):
            idx = perm[b * n_pairs : (b + 1) * n_pairs]
            batch = make_view_pair_batch(
                [unlabeled[i] for i in idx],
                config.augment,
                config.seed,
                epoch=epoch,
                source_indices=[int(i) for i in idx],
            )
            lr = lr_at(step, sched)
            with Tape() as tape:
                h = m.encode(batch.views, train=True)
                z = m.project(h)
                loss = loss_mod.batch_loss(z, config.tau)
                val = loss.item()
                if not np.isfinite(val):
                    raise TrainError(
                        f"non-finite contrastive loss at epoch {epoch} batch {b}; "
                        "aborting without writing a checkpoint"
                    )
                T.backward(loss, tape)
            opt.step(lr)
            opt.zero_grad()
            epoch_losses.append(val)
            step += 1
        log.append(
            {
                "epoch": epoch + 1,
                "phase": "pretrain",
                "loss": float(np.mean(epoch_losses)),
                "accuracy": None,
                "lr": lr,
            }
        )
    ckpt = snapshot_model(
        m,
        epoch=end_epoch,
        root_seed=config.seed,
        config={
            "encoder": _encoder_snapshot(enc_cfg),
            "preset": config.preset,
            "tau": config.tau,
            "pairs_per_batch": n_pairs,
        },
        opt_state={n: v.copy() for n, v in opt.state.items()},
    )
    return ckpt, log


def _stack_eval_batch(samples, aug_cfg):
    return Tensor(
        np.stack([eval_transform(s.image, aug_cfg).data for s in samples])
    )


def finetune(checkpoint, config, labeled_train, aug_cfg=None):
    """Linear-probe fine-tuning with a frozen (or mostly frozen) encoder."""
    config.validate()
    aug_cfg = aug_cfg or AugmentConfig()
    labels_present = {s.label for s in labeled_train}
    if labels_present != {0, 1}:
        raise TrainError(f"both classes required in training data, got {labels_present}")
    m = model_from_checkpoint(checkpoint)

    # fresh classifier head, deterministic under the finetune seed
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(4,)))
    fd = m.config.feature_dim
    m.cls_fc = model_mod.Dense(rng, fd, 2, m.dtype)

    last_stage = config.freeze_mode == "all_but_last_stage"
    if last_stage:
        trainable = lambda n: n.startswith(("encoder.stage4.", "classifier."))
    else:
        trainable = lambda n: n.startswith("classifier.")
    m.set_trainable(trainable)
    frozen_before = {
        n: p.data.copy() for n, p in m.params().items() if not p.requires_grad
    }
    opt = Sgd(m.trainable_params(), momentum=config.momentum)

    inputs = _stack_eval_batch(labeled_train, aug_cfg)
    labels = np.array([s.label for s in labeled_train])
    n = len(labeled_train)
    log = []
    for epoch in range(config.epochs):
        perm = _shuffle_rng(config.seed, 3, epoch).permutation(n)
        epoch_losses = []
        correct = 0
        for start in range(0, n, config.batch_size):  # trailing batch kept
            idx = perm[start : start + config.batch_size]
            x = Tensor(inputs.data[idx])
            y = labels[idx]
            with Tape() as tape:
                h = m.encode(x, train=False, stage4_train=last_stage or None)
                logits = m.classify(h)
                loss = T.softmax_cross_entropy(logits, y)
                val = loss.item()
                if not np.isfinite(val):
                    raise TrainError(f"non-finite finetune loss at epoch {epoch}")
                T.backward(loss, tape)
            opt.step(config.lr)
            opt.zero_grad()
            epoch_losses.append(val * len(idx))
            correct += int(np.sum(logits.data.argmax(axis=1) == y))
        log.append(
            {
                "epoch": epoch + 1,
                "phase": "finetune",
                "loss": float(np.sum(epoch_losses) / n),
                "accuracy": correct / n,
                "lr": config.lr,
            }
        )
    for name, before in frozen_before.items():
        after = m.params()[name].data
        if not np.array_equal(before, after):
            raise TrainError(f"frozen parameter {name!r} changed during finetune")
    ckpt = snapshot_model(
        m,
        epoch=config.epochs,
        root_seed=config.seed,
        config={**checkpoint.config, "finetune": {"freeze_mode": config.freeze_mode}},
    )
    return ckpt, log


def evaluate(checkpoint, labeled_eval, aug_cfg=None, batch_size=64):
    """Eval-mode scoring; returns (metrics report, per-sample score rows)."""
    if not labeled_eval:
        raise TrainError("empty evaluation set")
    aug_cfg = aug_cfg or AugmentConfig()
    m = checkpoint if isinstance(checkpoint, model_mod.Model) else model_from_checkpoint(checkpoint)
    labels = np.array([s.label for s in labeled_eval])
    scores = []
    for start in range(0, len(labeled_eval), batch_size):
        chunk = labeled_eval[start : start + batch_size]
        x = _stack_eval_batch(chunk, aug_cfg)
        logits = m.classify(m.encode(x, train=False))
        probs = T.softmax(logits.data)
        scores.extend(float(p[1]) for p in probs)
    scores = np.array(scores)
    rep = metrics_mod.report(scores, labels)
    rows = [
        {"index": i, "score": float(s), "label": int(l), "pred": int(s >= 0.5)}
        for i, (s, l) in enumerate(zip(scores, labels))
    ]
    return rep, rows


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# Layout: magic "CLCKPT01", 8-byte little-endian header length, JSON header
# (version, fingerprint, config, epoch, root seed, tensor directory), then
# raw little-endian float32 payloads in directory order.


def save_checkpoint(ckpt, path):
    entries = []
    payloads = []
    for kind, table in (("param", ckpt.params), ("buffer", ckpt.buffers)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            entries.append({"kind": kind, "name": name, "shape": list(arr.shape)})
            payloads.append(arr.tobytes())
    if ckpt.opt_state:
        for name in sorted(ckpt.opt_state):
            arr = np.ascontiguousarray(ckpt.opt_state[name], dtype="<f4")
            entries.append({"kind": "opt", "name": name, "shape": list(arr.shape)})
            payloads.append(arr.tobytes())
    header = json.dumps(
        {
            "version": ckpt.version,
            "fingerprint": ckpt.fingerprint,
            "config": ckpt.config,
            "epoch": ckpt.epoch,
            "root_seed": ckpt.root_seed,
            "tensors": entries,
        }
    ).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise TrainError(f"{path}: bad checkpoint magic at offset 0")
    if len(blob) < 16:
        raise TrainError(f"{path}: truncated at offset {len(blob)}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise TrainError(f"{path}: truncated header at offset {len(blob)}")
    try:
        header = json.loads(blob[16 : 16 + hlen])
    except json.JSONDecodeError as exc:
        raise TrainError(f"{path}: corrupt header ({exc})") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise TrainError(
            f"{path}: unsupported checkpoint version {header.get('version')}"
        )
    offset = 16 + hlen
    params, buffers, opt_state = {}, {}, {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64)) * 4
        if offset + size > len(blob):
            raise TrainError(f"{path}: truncated payload at offset {offset}")
        arr = np.frombuffer(blob[offset : offset + size], dtype="<f4").reshape(
            entry["shape"]
        ).copy()
        offset += size
        {"param": params, "buffer": buffers, "opt": opt_state}[entry["kind"]][
            entry["name"]
        ] = arr
    return Checkpoint(
        fingerprint=header["fingerprint"],
        config=header["config"],
        epoch=header["epoch"],
        root_seed=header["root_seed"],
        params=params,
        buffers=buffers,
        opt_state=opt_state or None,
        version=header["version"],
    )


def write_epoch_log(log, path):
    """CSV with fixed columns: epoch, phase, loss, accuracy, lr."""
    with open(path, "w") as f:
        f.write("epoch,phase,loss,accuracy,lr\n")
        for row in log:
            acc = "" if row["accuracy"] is None else f"{row['accuracy']:.6f}"
            f.write(
                f"{row['epoch']},{row['phase']},{row['loss']:.8f},{acc},{row['lr']:.8f}\n"
            )
