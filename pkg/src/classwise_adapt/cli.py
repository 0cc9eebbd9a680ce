"""Command line entry points: gen-toy, pretrain, adapt, eval, fuse.

Every command resolves one RunConfig (defaults ← --config file ← --key
value overrides), writes a run.json echo into its output directory, and
exits 0 only when all artifacts landed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import fusion
from .config import RunConfig, apply_kv, load_config_file
from .data import (
    DiskDataset,
    Domain,
    _default_colors,
    write_toy_dataset,
)
from .errors import ConfigError
from .training import (
    adapt,
    evaluate,
    load_segnet,
    pretrain_source,
    save_bank,
    save_segnet,
)

VAL_OFFSET = 100_000  # keeps validation scene indices disjoint from training


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="classwise-adapt",
        description="Synthetic-to-real adaptation for semantic segmentation on desk-scale toy domains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")

    common(sub.add_parser("gen-toy", help="emit the two-domain toy dataset"))
    common(sub.add_parser("pretrain", help="supervised training on the synthetic domain"))

    p_adapt = sub.add_parser("adapt", help="adversarial adaptation toward the real domain")
    common(p_adapt)
    p_adapt.add_argument("--mode", choices=("classwise", "single", "none"), default="classwise")
    p_adapt.add_argument("--pretrained", type=Path, required=True, help="source network checkpoint")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a labeled split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--domain", choices=("synthetic", "real"), default="real")
    p_eval.add_argument("--split", default="val", help="dataset subdirectory to evaluate")

    p_fuse = sub.add_parser("fuse", help="fuse per-frame predictions into a labeled point cloud")
    common(p_fuse)
    p_fuse.add_argument("--frames", type=Path, required=True, help="directory with label/ and depth/")
    p_fuse.add_argument("--trajectory", type=Path, required=True)
    p_fuse.add_argument("--intrinsics", type=Path, required=True)

    return parser


def _resolve_config(args, overrides) -> RunConfig:
    config = RunConfig()
    if args.config:
        load_config_file(config, args.config)
    for key, value in overrides:
        apply_kv(config, key, value)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = str(args.out)
    return config


def _parse_overrides(rest: list) -> list:
    pairs = []
    i = 0
    while i < len(rest):
        token = rest[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r} (overrides use --key value)")
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
            pairs.append((key, value))
            i += 1
            continue
        if i + 1 >= len(rest):
            raise ConfigError(f"override {token!r} is missing a value")
        pairs.append((key, rest[i + 1]))
        i += 2
    return pairs


def cmd_gen_toy(config: RunConfig) -> int:
    root = config.resolved_data_root()
    toy = config.toy_config()
    write_toy_dataset(toy, root / "train", config.toy_train_per_domain)
    write_toy_dataset(toy, root / "val", config.toy_val_per_domain, index_offset=VAL_OFFSET)
    config.write_run_json(config.out_dir, "gen-toy", {"dataset": str(root)})
    print(f"toy dataset written to {root}")
    return 0


def _split_dataset(config: RunConfig, split: str, domain: Domain) -> DiskDataset:
    from .data import DatasetSpec

    spec = DatasetSpec(
        root=config.resolved_data_root() / split,
        modality=config.modality_enum(),
        class_count=config.class_count,
        ignore_index=config.ignore_index,
    )
    return DiskDataset(spec, domain)


def cmd_pretrain(config: RunConfig) -> int:
    out = Path(config.out_dir)
    source = _split_dataset(config, "train", Domain.SYNTHETIC)
    net = pretrain_source(
        config.segnet_config(),
        config.train_config(),
        source,
        modality=config.modality_enum(),
        noise=config.noise_policy(),
        aug=config.augment_policy(),
        max_depth=config.max_depth,
        log_path=out / "train_log.csv",
        checkpoint_dir=out / "checkpoints",
    )
    save_segnet(out / "source.ckpt", net)
    config.write_run_json(out, "pretrain", {"checkpoint": str(out / "source.ckpt")})
    print(f"source network written to {out / 'source.ckpt'}")
    return 0


def cmd_adapt(config: RunConfig, mode: str, pretrained: Path) -> int:
    out = Path(config.out_dir)
    source_net = load_segnet(pretrained)
    if mode == "none":
        out.mkdir(parents=True, exist_ok=True)
        save_segnet(out / "adapted.ckpt", source_net)
        config.write_run_json(out, "adapt", {"mode": mode, "checkpoint": str(out / "adapted.ckpt")})
        print(f"no-adaptation passthrough written to {out / 'adapted.ckpt'}")
        return 0
    source = _split_dataset(config, "train", Domain.SYNTHETIC)
    target = _split_dataset(config, "train", Domain.REAL)
    adapted_net, bank = adapt(
        source_net,
        source,
        target,
        config.train_config(),
        mode=mode,
        modality=config.modality_enum(),
        noise=config.noise_policy(),
        aug=config.augment_policy(),
        max_depth=config.max_depth,
        log_path=out / "train_log.csv",
        checkpoint_dir=out / "checkpoints",
    )
    save_segnet(out / "adapted.ckpt", adapted_net)
    save_bank(out / "bank.ckpt", bank)
    config.write_run_json(out, "adapt", {"mode": mode, "checkpoint": str(out / "adapted.ckpt")})
    print(f"adapted network written to {out / 'adapted.ckpt'}")
    return 0


def _dump_frames(config: RunConfig, net, dataset, out: Path) -> None:
    """Per-frame predictions + depth in the dataset layout, plus a simple
    rigid trajectory and pinhole intrinsics, ready for `fuse`."""
    import torch

    from .training import make_batch

    frames = out / "frames"
    (frames / "label").mkdir(parents=True, exist_ok=True)
    (frames / "depth").mkdir(parents=True, exist_ok=True)
    poses = {}
    h = w = None
    with torch.no_grad():
        for i in range(len(dataset)):
            x, _ = make_batch(dataset, [i], config.modality_enum(), aug=None, max_depth=config.max_depth)
            pred = net(x).argmax(dim=1)[0].numpy().astype(np.uint8)
            sample = dataset[i]
            h, w = sample.depth.shape
            Image.fromarray(pred).save(frames / "label" / f"{i:06d}.png")
            depth_mm = np.round(sample.depth * 1000.0).astype(np.uint16)
            Image.fromarray(depth_mm).save(frames / "depth" / f"{i:06d}.png")
            poses[i] = fusion.FramePose.from_rt(np.eye(3), (0.05 * i, 0.0, 0.0))
    fusion.write_trajectory(frames / "trajectory.txt", poses)
    fusion.write_intrinsics(
        frames / "intrinsics.txt",
        fusion.CameraIntrinsics(fx=float(h), fy=float(h), cx=(w - 1) / 2.0, cy=(h - 1) / 2.0),
    )


def cmd_eval(config: RunConfig, checkpoint: Path, domain: str, split: str) -> int:
    out = Path(config.out_dir)
    net = load_segnet(checkpoint)
    dataset = _split_dataset(config, split, Domain(domain))
    rep = evaluate(
        net,
        dataset,
        config.modality_enum(),
        max_depth=config.max_depth,
        mode=config.eval_mode,
        batch=config.eval_batch,
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    if config.eval_dump_frames:
        _dump_frames(config, net, dataset, out)
    config.write_run_json(out, "eval", {"checkpoint": str(checkpoint), "domain": domain})
    print(f"PA={rep.pa:.4f} MPA={rep.mpa:.4f} MIoU={rep.miou:.4f} -> {out / 'metrics.json'}")
    return 0


def cmd_fuse(config: RunConfig, frames: Path, trajectory: Path, intrinsics: Path) -> int:
    out = Path(config.out_dir)
    poses = fusion.read_trajectory(trajectory)
    intr = fusion.read_intrinsics(intrinsics)
    pmap = fusion.LabeledPointMap(voxel_size=config.fuse_voxel_size, window=config.fuse_window)
    for frame in sorted(poses):
        label = np.asarray(Image.open(frames / "label" / f"{frame:06d}.png"))
        depth = np.asarray(Image.open(frames / "depth" / f"{frame:06d}.png")).astype(np.float64) / 1000.0
        points, classes = fusion.backproject(
            label, depth, intr, poses[frame],
            ignore_index=config.ignore_index, max_range=config.fuse_max_range,
        )
        pmap.vote_update(points, classes, frame)
    palette = (np.asarray(_default_colors(config.class_count)) * 255).astype(np.uint8)
    out.mkdir(parents=True, exist_ok=True)
    fusion.export_cloud(pmap, palette, out / "cloud.ply")
    config.write_run_json(out, "fuse", {"cloud": str(out / "cloud.ply"), "voxels": len(pmap)})
    print(f"{len(pmap)} voxels -> {out / 'cloud.ply'}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(rest)
        config = _resolve_config(args, overrides)
        if args.command == "gen-toy":
            return cmd_gen_toy(config)
        if args.command == "pretrain":
            return cmd_pretrain(config)
        if args.command == "adapt":
            return cmd_adapt(config, args.mode, args.pretrained)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.domain, args.split)
        if args.command == "fuse":
            return cmd_fuse(config, args.frames, args.trajectory, args.intrinsics)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
