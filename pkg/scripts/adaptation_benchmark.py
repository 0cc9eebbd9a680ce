#!/usr/bin/env python3
"""Multi-seed adaptation benchmark on the two-domain toy dataset.

Reproduces, at desk scale, the two directional comparisons the package is
built around: class-wise adaptation vs a single joint discriminator vs no
adaptation, and rgbd-with-noise pretraining vs plain rgb. Prints a summary
table and writes results.json into --out.

    python scripts/adaptation_benchmark.py --out runs/bench --seeds 0 1 2
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from classwise_adapt.config import RunConfig
from classwise_adapt.data import Domain, Modality, ToyDataset
from classwise_adapt.training import (
    adapt,
    evaluate,
    pretrain_source,
    run_baseline_adaptation,
)


def run_seed(seed: int) -> dict:
    config = RunConfig(seed=seed)
    cfg = config.toy_config()
    train_cfg = config.train_config()
    noise, aug = config.noise_policy(), config.augment_policy()
    source = ToyDataset(cfg, Domain.SYNTHETIC, config.toy_train_per_domain)
    target = ToyDataset(cfg, Domain.REAL, config.toy_train_per_domain)
    val = ToyDataset(cfg, Domain.REAL, config.toy_val_per_domain, index_offset=100_000)

    out = {}
    source_net = pretrain_source(
        config.segnet_config(), train_cfg, source,
        modality=Modality.RGBD, noise=noise, aug=aug,
    )
    rep = evaluate(source_net, val, Modality.RGBD)
    out["source"] = {"pa": rep.pa, "miou": rep.miou}

    for mode, fn in (("classwise", adapt), ("single", run_baseline_adaptation)):
        adapted_net, _ = fn(source_net, source, target, train_cfg,
                      modality=Modality.RGBD, noise=noise, aug=aug)
        rep = evaluate(adapted_net, val, Modality.RGBD)
        out[mode] = {"pa": rep.pa, "miou": rep.miou}

    rgb_config = RunConfig(seed=seed, modality="rgb", noise_enabled=False)
    rgb_net = pretrain_source(
        rgb_config.segnet_config(), rgb_config.train_config(), source,
        modality=Modality.RGB, noise=rgb_config.noise_policy(), aug=aug,
    )
    rep = evaluate(rgb_net, val, Modality.RGB)
    out["rgb_plain"] = {"pa": rep.pa, "miou": rep.miou}
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=Path("runs/bench"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    t0 = time.time()
    per_seed = {}
    for seed in args.seeds:
        print(f"--- seed {seed}")
        per_seed[seed] = run_seed(seed)
        for name, rep in per_seed[seed].items():
            print(f"  {name:10s} PA={rep['pa']:.4f} MIoU={rep['miou']:.4f}")

    summary = {}
    for name in ("source", "classwise", "single", "rgb_plain"):
        summary[name] = {
            "pa": float(np.mean([per_seed[s][name]["pa"] for s in args.seeds])),
            "miou": float(np.mean([per_seed[s][name]["miou"] for s in args.seeds])),
        }
    print(f"\nmeans over seeds {args.seeds} ({time.time() - t0:.0f}s):")
    for name, rep in summary.items():
        print(f"  {name:10s} PA={rep['pa']:.4f} MIoU={rep['miou']:.4f}")

    args.out.mkdir(parents=True, exist_ok=True)
    payload = {"seeds": {str(s): per_seed[s] for s in args.seeds}, "mean": summary}
    (args.out / "results.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"written: {args.out / 'results.json'}")


if __name__ == "__main__":
    main()
