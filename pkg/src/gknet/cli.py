"""Command-line interface.

Subcommands: synthesize, train, eval, harmonize, inspect. Exit codes are
stable: 0 success, 1 contract violation, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import (SynthesisConfig, bucket_of, foreground_ratio, index_dataset,
                   load_triple, write_synthetic_dataset)
from .errors import ConfigurationError, ContractViolationError
from .model import blend, load_checkpoint, save_checkpoint
from .train import desk_preset, evaluate, resume, save_train_state, train
from .config import build_configs, load_config_file
from .viz import cluster_kernel_labels, heatmap_image, label_map_image

__all__ = ["main", "build_parser"]


def _load_image_pair(composite_path, mask_path):
    comp_img = Image.open(composite_path).convert("RGB")
    mask_img = Image.open(mask_path).convert("L")
    if comp_img.size != mask_img.size:
        raise ContractViolationError(
            f"composite {comp_img.size} and mask {mask_img.size} sizes differ")
    comp = torch.from_numpy(
        np.asarray(comp_img, dtype=np.float32) / 255.0).permute(2, 0, 1)
    mask = torch.from_numpy(
        (np.asarray(mask_img, dtype=np.float32) / 255.0 > 0.5).astype(np.float32)
    ).unsqueeze(0)
    return comp, mask


def _save_rgb(path, t: torch.Tensor) -> None:
    arr = np.rint(t.clamp(0, 1).numpy() * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def _load_triples(data_root, resolution):
    index = index_dataset(data_root)
    return [load_triple(e, resolution=resolution) for e in index.entries]


def cmd_synthesize(args) -> int:
    sections = load_config_file(args.config) if args.config else {}
    _, _, syn = build_configs(sections, {"synthesis": {"seed": args.seed}})
    write_synthetic_dataset(args.out, args.count, args.resolution, syn)
    print(f"wrote {args.count} triples to {args.out}")
    return 0


def _train_configs(args):
    sections = load_config_file(args.config) if args.config else {}
    overrides = {
        "network": {"resolution": args.resolution, "depth": args.depth,
                    "base_channels": args.base_channels},
        "train": {"lr": args.lr, "epochs": args.epochs, "seed": args.seed,
                  "batch_size": args.batch_size,
                  "eval_interval": args.eval_interval,
                  "checkpoint_dir": str(args.out)},
        "synthesis": {},
    }
    if not args.config and not any(v is not None for v in overrides["network"].values()):
        cfg = desk_preset(**{k: v for k, v in overrides["train"].items()
                             if v is not None})
        return cfg
    _, cfg, _ = build_configs(sections, overrides)
    return cfg


def cmd_train(args) -> int:
    cfg = _train_configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    triples = _load_triples(args.data, cfg.resolution)
    log_path = out / "train.log"
    state = resume(args.resume, expected_config=cfg) if args.resume else None
    with open(log_path, "a") as log:
        state = train(triples, cfg, state=state,
                      log_fn=lambda line: print(line, file=log, flush=True))
    save_train_state(out / "state_final.gk", state)
    save_checkpoint(state.model, out / "model_final.gk")
    print(f"trained {state.step} steps; checkpoints in {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    triples = _load_triples(args.data, model.cfg.resolution)
    report = evaluate(model, triples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv())
    summary = report.summary_text()
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return 0


def cmd_harmonize(args) -> int:
    model = load_checkpoint(args.checkpoint)
    comp, mask = _load_image_pair(args.composite, args.mask)
    x = torch.cat([comp, mask], dim=0).unsqueeze(0)
    with torch.no_grad():
        out, _, _ = model(x)
    result = blend(out[0].clamp(0.0, 1.0), comp, mask)
    _save_rgb(args.out, result)
    print(f"wrote {args.out}")
    return 0


def cmd_inspect(args) -> int:
    if args.kernels_k < 1:
        raise ContractViolationError("--kernels-k must be >= 1")
    model = load_checkpoint(args.checkpoint)
    comp, mask = _load_image_pair(args.input, args.mask)
    x = torch.cat([comp, mask], dim=0).unsqueeze(0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        _, kernels, diagnostics = model(x)
        for level, k in kernels.items():
            labels = cluster_kernel_labels(k, args.kernels_k, seed=args.seed)
            label_map_image(labels, args.kernels_k).save(
                out_dir / f"kernel_clusters_level{level}.png")
        y, xq = (int(v) for v in args.attn_point.split(","))
        feats = model.encoder(x)
        maps = model.lre.attention_maps(feats[0], (y, xq))
        for head in range(maps.shape[0]):
            heatmap_image(maps[head]).save(out_dir / f"attention_head{head}.png")
    print(f"wrote inspection dumps to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gknet",
                                     description="Global-aware kernel harmonization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate a synthetic triple dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("harmonize", help="harmonize one composite image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--composite", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("inspect", help="dump kernel clusters and attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="composite image")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernels-k", type=int, default=6)
    p.add_argument("--attn-point", default="0,0", help="query point y,x")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
