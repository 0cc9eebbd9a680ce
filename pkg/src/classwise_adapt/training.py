"""Training protocol: supervised pretraining on the synthetic domain, then
alternating per-class adversarial adaptation.

Phase contract per adaptation iteration:

* D-phase — synthetic features come from the frozen source network,
  real features from the adapted network, both gradient-detached; every
  discriminator is updated with its weighted domain loss summed over the
  two half-batches. The segmentation networks are untouched.
* A-phase — real features flow through the adapted network into the
  frozen discriminators; the adapted network alone is updated with
  seg loss + adv_weight * sum_j w_j * adversarial loss. Discriminators
  are untouched.

Both segmentation networks run with frozen batchnorm statistics during
adaptation, so D-phase feature extraction mutates nothing. Everything is
deterministic in (seed, data order); augmentation seeds derive from
(seed, iteration, slot).
"""
from __future__ import annotations

import dataclasses
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .augment import AugmentPolicy, NoisePolicy, inpaint_sample, random_augment
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import DEFAULT_MAX_DEPTH_M, Modality, to_network_input
from .discriminators import DiscriminatorBank, DiscriminatorConfig, build_bank
from .errors import (
    ConfigError,
    EmptyDomainBatchError,
    EmptyLossError,
    TrainingDivergedError,
)
from .losses import REAL_DOMAIN, SYNTHETIC_DOMAIN, adversarial_loss, domain_loss, seg_loss
from .metrics import ConfusionMatrix, MetricsReport, report
from .segnet import SegNet, SegNetConfig, build

ADAPT_MODES = ("classwise", "single", "none")

_SALT_PRETRAIN_ORDER = 0x5EED01
_SALT_ADAPT_ORDER = 0x5EED02
_SALT_AUG = 0x5EED03
_SALT_BANK_INIT = 0x5EED04


@dataclass(frozen=True)
class TrainConfig:
    pretrain_iters: int = 500
    pretrain_batch: int = 6
    adam_alpha: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adapt_iters: int = 300
    adapt_batch: int = 4
    sgd_lr: float = 2e-3
    disc_lr: float = 0.2  # 0 -> use sgd_lr
    adv_weight: float = 0.1
    class_weights: tuple = ()  # empty -> all ones
    grad_clip: float = 1.0  # max gradient norm per phase update; 0 disables
    seed: int = 0
    checkpoint_every: int = 0  # 0 -> only final
    log_every: int = 10
    log_wall_time: bool = False
    d_phase_only: bool = False

    def __post_init__(self):
        if self.adam_alpha <= 0 or self.sgd_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam decay rates must be in (0,1)")
        if self.adv_weight < 0:
            raise ConfigError("adv_weight must be >= 0")
        if self.pretrain_batch < 1 or self.adapt_batch < 1:
            raise ConfigError("batch sizes must be positive")

    def weights_for(self, k: int) -> tuple:
        if not self.class_weights:
            return tuple([1.0] * k)
        if len(self.class_weights) != k:
            raise ConfigError(f"class_weights length {len(self.class_weights)} != class count {k}")
        return tuple(float(w) for w in self.class_weights)


class TrainLog:
    """CSV sink: iteration, seg loss, mean domain loss, mean adversarial
    loss, wall time. The wall column stays 0.0 unless opted in, keeping
    logs byte-reproducible across runs."""

    COLUMNS = "iteration,seg_loss,domain_loss,adv_loss,wall_time"

    def __init__(self, path, wall_time: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.wall_time = wall_time
        self._t0 = time.monotonic()
        self.path.write_text(self.COLUMNS + "\n", encoding="utf-8")

    def row(self, iteration: int, seg: float, dom: float, adv: float) -> None:
        wall = time.monotonic() - self._t0 if self.wall_time else 0.0
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{iteration},{seg:.8e},{dom:.8e},{adv:.8e},{wall:.3f}\n")


def _aug_seed(seed: int, iteration: int, slot: int) -> int:
    return int(
        np.random.SeedSequence([seed, _SALT_AUG, iteration, slot]).generate_state(1)[0]
    )


def prepare_sample(sample, modality: Modality, max_depth: float):
    sample = inpaint_sample(sample)
    return to_network_input(sample, modality, max_depth)


def make_batch(
    source,
    indices,
    modality: Modality,
    *,
    noise: NoisePolicy | None = None,
    aug: AugmentPolicy | None = None,
    seed: int = 0,
    iteration: int = 0,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
):
    """Stack samples into (x, y) tensors; augments when a policy is given."""
    xs, ys = [], []
    for slot, idx in enumerate(indices):
        sample = inpaint_sample(source[int(idx)])
        if aug is not None:
            sample = random_augment(
                sample, noise or NoisePolicy.disabled(), aug, _aug_seed(seed, iteration, slot)
            )
            sample = inpaint_sample(sample)  # salt-and-pepper may punch depth holes
        xs.append(to_network_input(sample, modality, max_depth))
        ys.append(np.asarray(sample.label, dtype=np.int64))
    x = torch.from_numpy(np.stack(xs))
    y = torch.from_numpy(np.stack(ys))
    return x, y


def state_signature(module: nn.Module) -> str:
    """sha256 over named parameters and buffers; exact-state fingerprint."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def module_arrays(module: nn.Module, prefix: str = "") -> dict:
    return {
        f"{prefix}{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def restore_module(module: nn.Module, arrays: dict, prefix: str = "") -> None:
    state = {}
    for name, tensor in module.state_dict().items():
        arr = arrays[f"{prefix}{name}"]
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(tensor.dtype)
    module.load_state_dict(state)


def segnet_config_dict(config: SegNetConfig) -> dict:
    return dataclasses.asdict(config)


def save_segnet(path, net: SegNet) -> None:
    save_checkpoint(
        path,
        kind="segnet",
        config={"segnet": segnet_config_dict(net.config), "role": net.role},
        arrays=module_arrays(net),
    )


def segnet_config_from_dict(d: dict) -> SegNetConfig:
    d = dict(d)
    for key in ("block_layers", "pyramid_scales", "expected_stage_channels"):
        d[key] = tuple(d[key])
    for key in ("growth", "dilations"):
        d[key] = tuple(tuple(v) for v in d[key])
    return SegNetConfig(**d)


def load_segnet(path, config: SegNetConfig | None = None) -> SegNet:
    if config is None:
        _, saved, _ = read_checkpoint(path)
        config = segnet_config_from_dict(saved["segnet"])
    expected_role_cfg = {"segnet": segnet_config_dict(config)}
    _, saved, _ = read_checkpoint(path)
    expected_role_cfg["role"] = saved.get("role", "source")
    arrays = load_checkpoint(path, "segnet", expected_role_cfg)
    net = build(config, role=expected_role_cfg["role"])
    restore_module(net, arrays)
    return net


def save_bank(path, bank: DiscriminatorBank) -> None:
    save_checkpoint(
        path,
        kind="discriminator_bank",
        config={"size": bank.size, "disc": dataclasses.asdict(bank.config)},
        arrays=module_arrays(bank),
    )


def load_bank(path) -> DiscriminatorBank:
    _, saved, _ = read_checkpoint(path)
    disc = dict(saved["disc"])
    disc["pyramid_scales"] = tuple(disc["pyramid_scales"])
    config = DiscriminatorConfig(**disc)
    arrays = load_checkpoint(
        path, "discriminator_bank", {"size": saved["size"], "disc": dataclasses.asdict(config)}
    )
    bank = build_bank(saved["size"], config)
    restore_module(bank, arrays)
    return bank


def _check_finite(value: float, iteration: int) -> float:
    if not np.isfinite(value):
        raise TrainingDivergedError(iteration)
    return value


def pretrain_source(
    net_config: SegNetConfig,
    config: TrainConfig,
    source,
    *,
    modality: Modality = Modality.RGBD,
    noise: NoisePolicy | None = None,
    aug: AugmentPolicy | None = None,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
    log_path=None,
    checkpoint_dir=None,
) -> SegNet:
    """Supervised training of the source-domain network on synthetic data."""
    if len(source) == 0:
        raise EmptyDomainBatchError("source dataset is empty")
    noise = noise if noise is not None else NoisePolicy()
    aug = aug if aug is not None else AugmentPolicy()
    torch.manual_seed(config.seed)
    net = build(net_config, role="source")
    opt = torch.optim.Adam(
        net.parameters(),
        lr=config.adam_alpha,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    order = np.random.default_rng(np.random.SeedSequence([config.seed, _SALT_PRETRAIN_ORDER]))
    log = TrainLog(log_path, config.log_wall_time) if log_path else None
    ignore = getattr(source, "ignore_index", 0)
    seg_sum, n_rows = 0.0, 0
    net.train()
    for it in range(config.pretrain_iters):
        idxs = order.integers(0, len(source), size=config.pretrain_batch)
        x, y = make_batch(
            source, idxs, modality, noise=noise, aug=aug,
            seed=config.seed, iteration=it, max_depth=max_depth,
        )
        try:
            loss = seg_loss(net(x), y, ignore)
        except EmptyLossError:
            continue
        _check_finite(loss.item(), it)
        opt.zero_grad()
        loss.backward()
        opt.step()
        seg_sum += loss.item()
        n_rows += 1
        if log and (it + 1) % config.log_every == 0:
            log.row(it + 1, seg_sum / max(1, n_rows), 0.0, 0.0)
            seg_sum, n_rows = 0.0, 0
        if checkpoint_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_segnet(Path(checkpoint_dir) / f"source_{it + 1:06d}.ckpt", net)
    net.eval()
    if checkpoint_dir:
        save_segnet(Path(checkpoint_dir) / "source_final.ckpt", net)
    return net


def default_disc_config(net_config: SegNetConfig, feature_hw: int, mode: str) -> DiscriminatorConfig:
    in_ch = net_config.class_count if mode == "single" else 1
    return DiscriminatorConfig.for_feature_size(feature_hw, in_channels=in_ch)


def adapt(
    source_net: SegNet,
    source,
    target,
    config: TrainConfig,
    *,
    mode: str = "classwise",
    disc_config: DiscriminatorConfig | None = None,
    modality: Modality = Modality.RGBD,
    noise: NoisePolicy | None = None,
    aug: AugmentPolicy | None = None,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
    log_path=None,
    checkpoint_dir=None,
) -> tuple[SegNet, DiscriminatorBank]:
    """Alternating adversarial adaptation; returns the adapted network and
    the trained discriminator bank. Target labels are never consumed."""
    if mode not in ("classwise", "single"):
        raise ConfigError(f"adapt mode must be classwise or single, got {mode!r}")
    if len(source) == 0:
        raise EmptyDomainBatchError("source dataset is empty")
    if len(target) == 0:
        raise EmptyDomainBatchError("target dataset is empty")
    noise = noise if noise is not None else NoisePolicy()
    aug = aug if aug is not None else AugmentPolicy()
    geo_only = NoisePolicy.disabled()  # real images are already "noisy"; geometry only
    k = source_net.config.class_count
    weights = config.weights_for(k if mode == "classwise" else 1)

    torch.manual_seed(
        int(np.random.SeedSequence([config.seed, _SALT_BANK_INIT]).generate_state(1)[0])
    )
    if disc_config is None:
        disc_config = default_disc_config(source_net.config, aug.crop_height, mode)
    bank = build_bank(k if mode == "classwise" else 1, disc_config)
    adapted_net = build(source_net.config, role="adapted")
    adapted_net.load_state_dict(source_net.state_dict())

    source_net.requires_grad_(False)
    source_net.eval()
    adapted_net.eval()  # batchnorm statistics stay frozen at their pretrained values

    lr_d = config.disc_lr if config.disc_lr > 0 else config.sgd_lr
    opt_r = torch.optim.SGD(adapted_net.parameters(), lr=config.sgd_lr)
    opt_d = torch.optim.SGD(bank.parameters(), lr=lr_d)
    order = np.random.default_rng(np.random.SeedSequence([config.seed, _SALT_ADAPT_ORDER]))
    log = TrainLog(log_path, config.log_wall_time) if log_path else None
    ignore = getattr(source, "ignore_index", 0)
    b = config.adapt_batch
    sums = np.zeros(3)
    n_rows = 0

    for it in range(config.adapt_iters):
        # ---------------- D-phase: update discriminators only
        syn_idx = order.integers(0, len(source), size=b)
        real_idx = order.integers(0, len(target), size=b)
        x_syn, _ = make_batch(
            source, syn_idx, modality, noise=noise, aug=aug,
            seed=config.seed, iteration=2 * it, max_depth=max_depth,
        )
        x_real, _ = make_batch(
            target, real_idx, modality, noise=geo_only, aug=aug,
            seed=config.seed + 1, iteration=2 * it, max_depth=max_depth,
        )
        with torch.no_grad():
            f_syn = source_net.features(x_syn)
            f_real = adapted_net.features(x_real)
        bank.requires_grad_(True)
        maps_syn = bank.discriminate(f_syn)
        maps_real = bank.discriminate(f_real)
        loss_d = sum(
            w * (domain_loss(ms, SYNTHETIC_DOMAIN) + domain_loss(mr, REAL_DOMAIN))
            for w, ms, mr in zip(weights, maps_syn, maps_real)
        )
        _check_finite(loss_d.item(), it)
        opt_d.zero_grad()
        loss_d.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(bank.parameters(), config.grad_clip)
        opt_d.step()

        # ---------------- A-phase: update the adapted network only
        loss_a_val, loss_seg_val = 0.0, 0.0
        if not config.d_phase_only:
            bank.requires_grad_(False)
            real_idx2 = order.integers(0, len(target), size=b)
            syn_idx2 = order.integers(0, len(source), size=b)
            x_real2, _ = make_batch(
                target, real_idx2, modality, noise=geo_only, aug=aug,
                seed=config.seed + 2, iteration=2 * it + 1, max_depth=max_depth,
            )
            x_syn2, y_syn2 = make_batch(
                source, syn_idx2, modality, noise=noise, aug=aug,
                seed=config.seed + 3, iteration=2 * it + 1, max_depth=max_depth,
            )
            maps = bank.discriminate(adapted_net.features(x_real2))
            loss_a = sum(
                w * adversarial_loss(m, REAL_DOMAIN) for w, m in zip(weights, maps)
            )
            try:
                loss_seg = seg_loss(adapted_net(x_syn2), y_syn2, ignore)
            except EmptyLossError:
                loss_seg = torch.zeros(())
            total = loss_seg + config.adv_weight * loss_a
            _check_finite(total.item(), it)
            opt_r.zero_grad()
            total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(adapted_net.parameters(), config.grad_clip)
            opt_r.step()
            loss_a_val = loss_a.item() / max(1e-12, sum(weights))
            loss_seg_val = loss_seg.item()

        sums += (loss_seg_val, loss_d.item() / (2 * max(1e-12, sum(weights))), loss_a_val)
        n_rows += 1
        if log and (it + 1) % config.log_every == 0:
            log.row(it + 1, *(sums / max(1, n_rows)))
            sums[:] = 0.0
            n_rows = 0
        if checkpoint_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            state = TrainState(
                iteration=it + 1, source_net=source_net, adapted_net=adapted_net, bank=bank,
                opt_r=opt_r, opt_d=opt_d, order_state=order.bit_generator.state,
            )
            state.save(Path(checkpoint_dir) / f"state_{it + 1:06d}.ckpt")

    if checkpoint_dir:
        save_segnet(Path(checkpoint_dir) / "adapted_final.ckpt", adapted_net)
        save_bank(Path(checkpoint_dir) / "bank_final.ckpt", bank)
    return adapted_net, bank


def run_baseline_adaptation(source_net, source, target, config, **kwargs):
    """Single discriminator over all feature channels jointly."""
    kwargs.pop("mode", None)
    return adapt(source_net, source, target, config, mode="single", **kwargs)


def evaluate(
    net: SegNet,
    dataset,
    modality: Modality = Modality.RGBD,
    *,
    max_depth: float = DEFAULT_MAX_DEPTH_M,
    mode: str = "present",
    batch: int = 8,
) -> MetricsReport:
    """Argmax predictions accumulated into a confusion matrix. No
    augmentation; depth holes are inpainted before input assembly."""
    net.eval()
    cm = ConfusionMatrix(dataset.class_count, getattr(dataset, "ignore_index", 0))
    with torch.no_grad():
        for start in range(0, len(dataset), batch):
            idxs = range(start, min(start + batch, len(dataset)))
            x, y = make_batch(dataset, idxs, modality, aug=None, max_depth=max_depth)
            pred = net(x).argmax(dim=1)
            cm.add(pred.numpy(), y.numpy())
    return report(cm, mode)


# ---------------------------------------------------------------------------
# full training state with a bit-exact checkpoint round trip


def _optimizer_meta_arrays(opt, prefix: str):
    sd = opt.state_dict()
    meta = {"param_groups": sd["param_groups"], "state": {}}
    arrays = {}
    for idx, st in sd["state"].items():
        keys = {}
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                arrays[f"{prefix}.{idx}.{key}"] = val.detach().cpu().numpy()
                keys[key] = None  # tensor marker; payload lives in arrays
            else:
                keys[key] = val
        meta["state"][str(idx)] = keys
    return meta, arrays


def _optimizer_restore(opt, meta: dict, arrays: dict, prefix: str) -> None:
    state = {}
    for idx_s, keys in meta["state"].items():
        st = {}
        for key, val in keys.items():
            if val is None:
                arr = arrays[f"{prefix}.{idx_s}.{key}"]
                st[key] = torch.from_numpy(np.ascontiguousarray(arr))
            else:
                st[key] = val
        state[int(idx_s)] = st
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


@dataclass
class TrainState:
    """Everything the adaptation loop owns, checkpointable bit-exactly."""

    iteration: int
    source_net: SegNet
    adapted_net: SegNet
    bank: DiscriminatorBank
    opt_r: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    order_state: dict = field(default_factory=dict)

    def save(self, path) -> None:
        arrays = {}
        arrays.update(module_arrays(self.source_net, "source_net."))
        arrays.update(module_arrays(self.adapted_net, "adapted_net."))
        arrays.update(module_arrays(self.bank, "bank."))
        meta_r, arr_r = _optimizer_meta_arrays(self.opt_r, "opt_r")
        meta_d, arr_d = _optimizer_meta_arrays(self.opt_d, "opt_d")
        arrays.update(arr_r)
        arrays.update(arr_d)
        config = {
            "iteration": self.iteration,
            "segnet": segnet_config_dict(self.source_net.config),
            "bank_size": self.bank.size,
            "disc": dataclasses.asdict(self.bank.config),
            "opt_r": meta_r,
            "opt_d": meta_d,
            "order_state": _jsonable_rng_state(self.order_state),
        }
        save_checkpoint(path, kind="train_state", config=config, arrays=arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        _, config, arrays = read_checkpoint(path)
        net_config = segnet_config_from_dict(config["segnet"])
        disc = dict(config["disc"])
        disc["pyramid_scales"] = tuple(disc["pyramid_scales"])
        source_net = build(net_config, role="source")
        adapted_net = build(net_config, role="adapted")
        bank = build_bank(config["bank_size"], DiscriminatorConfig(**disc))
        restore_module(source_net, arrays, "source_net.")
        restore_module(adapted_net, arrays, "adapted_net.")
        restore_module(bank, arrays, "bank.")
        opt_r = torch.optim.SGD(adapted_net.parameters(), lr=1.0)
        opt_d = torch.optim.SGD(bank.parameters(), lr=1.0)
        _optimizer_restore(opt_r, config["opt_r"], arrays, "opt_r")
        _optimizer_restore(opt_d, config["opt_d"], arrays, "opt_d")
        return cls(
            iteration=config["iteration"],
            source_net=source_net,
            adapted_net=adapted_net,
            bank=bank,
            opt_r=opt_r,
            opt_d=opt_d,
            order_state=config["order_state"],
        )


def _jsonable_rng_state(state) -> dict:
    """numpy bit-generator states contain ints beyond 64 bits; JSON keeps
    arbitrary precision, so a plain dict copy suffices."""
    if not state:
        return {}
    out = dict(state)
    if isinstance(out.get("state"), dict):
        out["state"] = dict(out["state"])
    return out
