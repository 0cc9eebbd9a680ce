"""Flat key=value run configuration shared by every CLI command.

Every field has a default; parsing is total — unknown keys or malformed
values raise ConfigError naming the offender. `key = value` lines,
blank lines and # comments are accepted; CLI overrides use --key value.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentPolicy, NoisePolicy
from .data import DomainShift, Modality, ToySceneConfig
from .errors import ConfigError
from .segnet import SegNetConfig
from .training import TrainConfig

CACHE_ENV = "CLASSWISE_ADAPT_CACHE"


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "run_out"
    data_root: str = "toy_data"
    modality: str = "rgbd"
    class_count: int = 6
    ignore_index: int = 0
    max_depth: float = 10.0
    eval_mode: str = "present"
    profile: str = "desk"

    # toy dataset generator
    toy_height: int = 40
    toy_width: int = 40
    toy_objects_min: int = 3
    toy_objects_max: int = 6
    toy_min_class_diversity: int = 3
    toy_dominance_cap: float = 0.85
    toy_ceiling_fraction: float = 0.06
    toy_hue_rotation_deg: float = 45.0
    toy_brightness_scale: float = 0.75
    toy_noise_sigma: float = 0.06
    toy_texture_amplitude: float = 0.05
    toy_depth_noise_sigma: float = 0.0
    toy_train_per_domain: int = 256
    toy_val_per_domain: int = 64

    # synthetic-noise injection
    noise_enabled: bool = True
    noise_p_gaussian: float = 0.25
    noise_p_salt_pepper: float = 0.25
    noise_p_blur: float = 0.25
    noise_p_bilateral: float = 0.25
    noise_gaussian_sigma: float = 0.03
    noise_salt_pepper_rate: float = 0.02
    noise_bilateral_sigma_spatial: float = 3.0
    noise_bilateral_sigma_range: float = 0.1
    noise_apply_to_depth: bool = True

    # geometric/photometric augmentation
    aug_crop: int = 32
    aug_gamma_min: float = 0.7
    aug_gamma_max: float = 1.5
    aug_flip_prob: float = 0.5

    # training
    train_pretrain_iters: int = 500
    train_pretrain_batch: int = 6
    train_adam_alpha: float = 1e-4
    train_adam_beta1: float = 0.9
    train_adam_beta2: float = 0.999
    train_adapt_iters: int = 300
    train_adapt_batch: int = 4
    train_sgd_lr: float = 2e-3
    train_disc_lr: float = 0.2
    train_adv_weight: float = 0.1
    train_class_weights: str = ""  # comma-separated floats; empty -> ones
    train_grad_clip: float = 1.0
    train_checkpoint_every: int = 0
    train_log_every: int = 10
    train_log_wall_time: bool = False

    # fusion
    fuse_voxel_size: float = 0.02
    fuse_window: int = 9
    fuse_max_range: float = 10.0

    # evaluation
    eval_batch: int = 8
    eval_dump_frames: bool = False

    # ------------------------------------------------------------------
    def resolved_data_root(self) -> Path:
        root = Path(self.data_root)
        cache = os.environ.get(CACHE_ENV)
        if not root.is_absolute() and cache:
            return Path(cache) / root
        return root

    def modality_enum(self) -> Modality:
        return Modality(self.modality)

    def toy_config(self) -> ToySceneConfig:
        return ToySceneConfig(
            height=self.toy_height,
            width=self.toy_width,
            class_count=self.class_count,
            objects_min=self.toy_objects_min,
            objects_max=self.toy_objects_max,
            shift=DomainShift(
                hue_rotation_deg=self.toy_hue_rotation_deg,
                brightness_scale=self.toy_brightness_scale,
                noise_sigma=self.toy_noise_sigma,
                texture_amplitude=self.toy_texture_amplitude,
                depth_noise_sigma=self.toy_depth_noise_sigma,
            ),
            min_class_diversity=self.toy_min_class_diversity,
            dominance_cap=self.toy_dominance_cap,
            ceiling_fraction=self.toy_ceiling_fraction,
            seed=self.seed,
        )

    def noise_policy(self) -> NoisePolicy:
        if not self.noise_enabled:
            return NoisePolicy.disabled()
        return NoisePolicy(
            p_gaussian=self.noise_p_gaussian,
            p_salt_pepper=self.noise_p_salt_pepper,
            p_blur=self.noise_p_blur,
            p_bilateral=self.noise_p_bilateral,
            gaussian_sigma=self.noise_gaussian_sigma,
            salt_pepper_rate=self.noise_salt_pepper_rate,
            bilateral_sigma_spatial=self.noise_bilateral_sigma_spatial,
            bilateral_sigma_range=self.noise_bilateral_sigma_range,
            apply_to_depth=self.noise_apply_to_depth,
            depth_max_range=self.max_depth,
        )

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            crop_height=self.aug_crop,
            crop_width=self.aug_crop,
            gamma_min=self.aug_gamma_min,
            gamma_max=self.aug_gamma_max,
            flip_prob=self.aug_flip_prob,
        )

    def train_config(self) -> TrainConfig:
        weights = ()
        if self.train_class_weights.strip():
            weights = tuple(float(v) for v in self.train_class_weights.split(","))
        return TrainConfig(
            pretrain_iters=self.train_pretrain_iters,
            pretrain_batch=self.train_pretrain_batch,
            adam_alpha=self.train_adam_alpha,
            adam_beta1=self.train_adam_beta1,
            adam_beta2=self.train_adam_beta2,
            adapt_iters=self.train_adapt_iters,
            adapt_batch=self.train_adapt_batch,
            sgd_lr=self.train_sgd_lr,
            disc_lr=self.train_disc_lr,
            adv_weight=self.train_adv_weight,
            class_weights=weights,
            grad_clip=self.train_grad_clip,
            seed=self.seed,
            checkpoint_every=self.train_checkpoint_every,
            log_every=self.train_log_every,
            log_wall_time=self.train_log_wall_time,
        )

    def segnet_config(self) -> SegNetConfig:
        channels = self.modality_enum().channels
        if self.profile == "full":
            return SegNetConfig.full(input_channels=channels, class_count=self.class_count)
        if self.profile == "desk":
            return SegNetConfig.desk(
                input_channels=channels,
                class_count=self.class_count,
                input_hw=self.aug_crop,
            )
        raise ConfigError(f"unknown profile {self.profile!r} (expected desk or full)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write_run_json(self, out_dir, command: str, extra: dict | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"command": command, "config": self.to_dict()}
        if extra:
            payload.update(extra)
        path = out / "run.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def apply_kv(config: RunConfig, key: str, raw: str) -> None:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(config, key, _coerce(key, raw))


def load_config_file(config: RunConfig, path) -> None:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        apply_kv(config, key.strip(), raw)
