"""Batch command-line interface.

Commands: synth, pretrain, finetune, eval, embed, explain. Every command is
deterministic given config plus seed, dumps its resolved configuration next
to its outputs, and uses stable exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import explain as explain_mod
from . import train as train_mod
from .config import ConfigError, dump, finetune_config, load, pretrain_config, augment_config
from .data import DataError, DatasetManifest
from .tensor import Tensor


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_synth(args, cfg):
    out = _ensure_out(args.out)
    if args.n % 2 != 0:
        raise ConfigError("--n must be even for balanced classes")
    seed = cfg["seed"]
    size = cfg["data.image_size"]
    contrast = cfg["data.blob_contrast"]
    sigma = cfg["data.noise_sigma"]
    labeled = data_mod.synth_generate(args.n, size, contrast, sigma, seed=seed)
    for sub in ("benign", "malignant"):
        os.makedirs(os.path.join(out, "labeled", sub), exist_ok=True)
    counts = {"benign": 0, "malignant": 0}
    for i, s in enumerate(labeled):
        sub = "malignant" if s.label else "benign"
        counts[sub] += 1
        data_mod.write_image(
            s.image, os.path.join(out, "labeled", sub, f"{i:05d}.pgm")
        )
    n_unlabeled = args.unlabeled
    if n_unlabeled:
        udir = os.path.join(out, "unlabeled")
        os.makedirs(udir, exist_ok=True)
        pool = data_mod.synth_generate(n_unlabeled, size, contrast, sigma, seed=seed + 1)
        for i, s in enumerate(pool):
            data_mod.write_image(s.image, os.path.join(udir, f"{i:05d}.pgm"))
        counts["unlabeled"] = n_unlabeled
    DatasetManifest(source=f"synth(seed={seed})", counts=counts, seed=seed).write(
        os.path.join(out, "manifest.json")
    )
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def cmd_pretrain(args, cfg):
    out = _ensure_out(args.out)
    images = data_mod.load_unlabeled(args.data)
    pcfg = pretrain_config(cfg)
    resume = train_mod.load_checkpoint(args.resume) if args.resume else None
    ckpt, log = train_mod.pretrain(pcfg, images, resume=resume)
    train_mod.save_checkpoint(ckpt, os.path.join(out, "pretrain.ckpt"))
    train_mod.write_epoch_log(log, os.path.join(out, "pretrain_log.csv"))
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def cmd_finetune(args, cfg):
    out = _ensure_out(args.out)
    samples = data_mod.load_labeled(args.data)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    fcfg = finetune_config(cfg)
    tuned, log = train_mod.finetune(ckpt, fcfg, samples, aug_cfg=augment_config(cfg))
    train_mod.save_checkpoint(tuned, os.path.join(out, "finetune.ckpt"))
    train_mod.write_epoch_log(log, os.path.join(out, "finetune_log.csv"))
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def cmd_eval(args, cfg):
    out = _ensure_out(args.out)
    samples = data_mod.load_labeled(args.data)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    rep, rows = train_mod.evaluate(ckpt, samples, aug_cfg=augment_config(cfg))
    with open(os.path.join(out, "metrics.json"), "w") as f:
        json.dump(rep, f, indent=2)
    with open(os.path.join(out, "scores.csv"), "w") as f:
        f.write("index,score,label,pred\n")
        for r in rows:
            f.write(f"{r['index']},{r['score']:.8f},{r['label']},{r['pred']}\n")
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def cmd_embed(args, cfg):
    out = _ensure_out(args.out)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    model = train_mod.model_from_checkpoint(ckpt)
    aug = augment_config(cfg)
    files = data_mod.image_files(args.data)
    if not files:
        raise DataError(f"no supported images in {args.data}")
    from .augment import eval_transform

    with open(os.path.join(out, "embeddings.csv"), "w") as f:
        dim = model.config.feature_dim
        f.write("filename," + ",".join(f"f{i}" for i in range(dim)) + "\n")
        for path in files:
            img = data_mod.read_image(path)
            x = Tensor(eval_transform(img, aug).data[None])
            h = model.encode(x, train=False).data[0]
            f.write(
                os.path.basename(path) + "," + ",".join(f"{v:.6g}" for v in h) + "\n"
            )
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def cmd_explain(args, cfg):
    out = _ensure_out(args.out)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    model = train_mod.model_from_checkpoint(ckpt)
    aug = augment_config(cfg)
    if os.path.isdir(args.image):
        files = data_mod.image_files(args.image)
        if not files:
            raise DataError(f"no supported images in {args.image}")
    else:
        files = [args.image]
    target = args.target_class
    if target != "predicted":
        target = int(target)
    for path in files:
        img = data_mod.read_image(path)
        hm = explain_mod.gradcam(model, img, target, aug_cfg=aug)
        prefix = os.path.join(out, os.path.splitext(os.path.basename(path))[0])
        explain_mod.render_heatmap(hm, img, prefix)
    dump(cfg, os.path.join(out, "resolved.cfg"))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="graycl",
        description="Self-supervised contrastive pipeline for grayscale images",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--n", type=int, required=True, help="labeled sample count (even)")
    sp.add_argument("--unlabeled", type=int, default=0, help="unlabeled sample count")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pretrain", help="contrastive pretraining")
    common(sp)
    sp.add_argument("--data", required=True, help="flat directory of unlabeled images")
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="linear-probe fine-tuning")
    common(sp)
    sp.add_argument("--data", required=True, help="labeled root (benign/, malignant/)")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="score a labeled evaluation set")
    common(sp)
    sp.add_argument("--data", required=True, help="labeled root (benign/, malignant/)")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("embed", help="export encoder features")
    common(sp)
    sp.add_argument("--data", required=True, help="flat directory of images")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("explain", help="Grad-CAM heatmaps")
    common(sp)
    sp.add_argument("--image", required=True, help="image file or directory")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument(
        "--target-class",
        dest="target_class",
        default="predicted",
        help="'predicted', 0, or 1",
    )
    sp.set_defaults(func=cmd_explain)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load(args.config, seed_override=args.seed)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
