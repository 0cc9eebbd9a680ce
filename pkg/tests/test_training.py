import csv

import numpy as np
import pytest
import torch
from torch import nn

from classwise_adapt.augment import AugmentPolicy, NoisePolicy
from classwise_adapt.data import Domain, Modality, Sample, ToyDataset
from classwise_adapt.discriminators import DiscriminatorConfig
from classwise_adapt.errors import (
    ConfigError,
    EmptyDomainBatchError,
    TrainingDivergedError,
)
from classwise_adapt.losses import REAL_DOMAIN, SYNTHETIC_DOMAIN
from classwise_adapt.metrics import ConfusionMatrix, report
from classwise_adapt.segnet import SegNetConfig, build
from classwise_adapt.training import (
    TrainConfig,
    _check_finite,
    adapt,
    evaluate,
    make_batch,
    pretrain_source,
    run_baseline_adaptation,
    state_signature,
)
from conftest import strong_gap_cfg

CANVAS = 32


def tiny_sources(seed=0, n=8, canvas=CANVAS):
    cfg = strong_gap_cfg(seed=seed, canvas=canvas)
    return (
        ToyDataset(cfg, Domain.SYNTHETIC, n),
        ToyDataset(cfg, Domain.REAL, n),
    )


def tiny_net_config(canvas=CANVAS, k=6):
    return SegNetConfig.desk(input_channels=4, class_count=k, input_hw=canvas)


def fast_policies(canvas=CANVAS):
    noise = NoisePolicy(p_blur=0.0, p_bilateral=0.0)  # keep the slow filters out
    aug = AugmentPolicy(crop_height=canvas, crop_width=canvas)
    return noise, aug


class TestPretrain:
    def test_overfits_a_tiny_set(self, tmp_path):
        source, _ = tiny_sources(n=4)
        noise, aug = fast_policies()
        config = TrainConfig(pretrain_iters=200, pretrain_batch=4, seed=0, log_every=1)
        log = tmp_path / "log.csv"
        pretrain_source(
            tiny_net_config(), config, source,
            modality=Modality.RGBD, noise=noise, aug=aug, log_path=log,
        )
        rows = list(csv.DictReader(log.open()))
        first = float(rows[0]["seg_loss"])
        last = float(rows[-1]["seg_loss"])
        assert last < 0.2 * first, (first, last)

    def test_zero_iterations_returns_initialization(self):
        source, _ = tiny_sources(n=2)
        noise, aug = fast_policies()
        config = TrainConfig(pretrain_iters=0, seed=3)
        net = pretrain_source(
            tiny_net_config(), config, source, modality=Modality.RGBD, noise=noise, aug=aug
        )
        torch.manual_seed(3)
        fresh = build(tiny_net_config(), role="source")
        assert state_signature(net) == state_signature(fresh)

    def test_fixed_seed_reproduces_parameters(self):
        source, _ = tiny_sources(n=4)
        noise, aug = fast_policies()
        config = TrainConfig(pretrain_iters=12, pretrain_batch=2, seed=9)
        nets = [
            pretrain_source(
                tiny_net_config(), config, source,
                modality=Modality.RGBD, noise=noise, aug=aug,
            )
            for _ in range(2)
        ]
        assert state_signature(nets[0]) == state_signature(nets[1])

    def test_different_seeds_differ(self):
        source, _ = tiny_sources(n=4)
        noise, aug = fast_policies()
        sigs = []
        for seed in (1, 2):
            config = TrainConfig(pretrain_iters=5, pretrain_batch=2, seed=seed)
            net = pretrain_source(
                tiny_net_config(), config, source,
                modality=Modality.RGBD, noise=noise, aug=aug,
            )
            sigs.append(state_signature(net))
        assert sigs[0] != sigs[1]

    def test_empty_source_rejected(self):
        source, _ = tiny_sources(n=1)
        source.count = 0
        with pytest.raises(EmptyDomainBatchError):
            pretrain_source(tiny_net_config(), TrainConfig(), source)

    def test_divergence_guard(self):
        with pytest.raises(TrainingDivergedError) as err:
            _check_finite(float("nan"), 17)
        assert err.value.iteration == 17
        assert _check_finite(1.0, 0) == 1.0


def _quick_source_net(seed=0, iters=30, canvas=CANVAS):
    source, target = tiny_sources(seed=0, n=8, canvas=canvas)
    noise, aug = fast_policies(canvas)
    config = TrainConfig(pretrain_iters=iters, pretrain_batch=4, seed=seed)
    net = pretrain_source(
        tiny_net_config(canvas), config, source,
        modality=Modality.RGBD, noise=noise, aug=aug,
    )
    return net, source, target, noise, aug


class TestAdaptProtocol:
    def test_phase_isolation(self):
        source_net, source, target, noise, aug = _quick_source_net()
        sig_c_before = state_signature(source_net)
        base = dict(adapt_iters=1, adapt_batch=2, sgd_lr=1e-3, disc_lr=1e-2, seed=4)

        # D-phase only: discriminators move, both segmentation nets do not
        adapted_net1, bank1 = adapt(
            source_net, source, target, TrainConfig(d_phase_only=True, **base),
            modality=Modality.RGBD, noise=noise, aug=aug,
        )
        assert state_signature(source_net) == sig_c_before
        torch.manual_seed(4)  # adapted_net is a copy of source_net before any A-phase
        assert state_signature(adapted_net1) == state_signature(source_net)

        # full iteration: the A-phase must leave every discriminator
        # bit-identical to the D-phase-only outcome
        adapted_net2, bank2 = adapt(
            source_net, source, target, TrainConfig(**base),
            modality=Modality.RGBD, noise=noise, aug=aug,
        )
        assert state_signature(bank2) == state_signature(bank1)
        assert state_signature(adapted_net2) != state_signature(source_net)
        assert state_signature(source_net) == sig_c_before

    def test_adapt_determinism(self):
        source_net, source, target, noise, aug = _quick_source_net()
        config = TrainConfig(adapt_iters=3, adapt_batch=2, sgd_lr=1e-3, seed=5)
        sigs = []
        for _ in range(2):
            adapted_net, bank = adapt(
                source_net, source, target, config,
                modality=Modality.RGBD, noise=noise, aug=aug,
            )
            sigs.append((state_signature(adapted_net), state_signature(bank)))
        assert sigs[0] == sigs[1]

    def test_zero_adv_weight_decouples_from_discriminators(self):
        source_net, source, target, noise, aug = _quick_source_net()
        sigs, bank_sigs = [], []
        for disc_lr in (1e-2, 1e-1):
            config = TrainConfig(
                adapt_iters=3, adapt_batch=2, sgd_lr=1e-3,
                disc_lr=disc_lr, adv_weight=0.0, seed=6,
            )
            adapted_net, bank = adapt(
                source_net, source, target, config,
                modality=Modality.RGBD, noise=noise, aug=aug,
            )
            sigs.append(state_signature(adapted_net))
            bank_sigs.append(state_signature(bank))
        assert sigs[0] == sigs[1]  # discriminator evolution cannot reach adapted_net
        assert bank_sigs[0] != bank_sigs[1]

    def test_adversarial_loss_is_domain_loss_with_flipped_label(self):
        from classwise_adapt.losses import adversarial_loss, domain_loss

        source_net, source, target, noise, aug = _quick_source_net()
        bank_cfg = DiscriminatorConfig.for_feature_size(CANVAS)
        from classwise_adapt.discriminators import build_bank

        torch.manual_seed(0)
        bank = build_bank(6, bank_cfg).eval()
        x, _ = make_batch(target, [0, 1], Modality.RGBD)
        with torch.no_grad():
            maps = bank.discriminate(source_net.features(x))
        for m in maps:
            assert adversarial_loss(m, REAL_DOMAIN).item() == domain_loss(m, SYNTHETIC_DOMAIN).item()

    def test_mode_validation(self):
        source_net, source, target, noise, aug = _quick_source_net(iters=0)
        with pytest.raises(ConfigError):
            adapt(source_net, source, target, TrainConfig(), mode="bogus")

    def test_empty_target_rejected(self):
        source_net, source, target, noise, aug = _quick_source_net(iters=0)
        target.count = 0
        with pytest.raises(EmptyDomainBatchError):
            adapt(source_net, source, target, TrainConfig())


class TestBaseline:
    def test_single_discriminator_bank(self):
        source_net, source, target, noise, aug = _quick_source_net(iters=0)
        config = TrainConfig(adapt_iters=1, adapt_batch=2, sgd_lr=1e-3, seed=7)
        _, bank = run_baseline_adaptation(
            source_net, source, target, config,
            modality=Modality.RGBD, noise=noise, aug=aug,
        )
        assert bank.size == 1
        assert bank.config.in_channels == 6

    def test_parameter_count_differs_from_classwise(self):
        source_net, source, target, noise, aug = _quick_source_net(iters=0)
        config = TrainConfig(adapt_iters=1, adapt_batch=2, sgd_lr=1e-3, seed=7)
        _, single = run_baseline_adaptation(
            source_net, source, target, config, modality=Modality.RGBD, noise=noise, aug=aug
        )
        _, classwise = adapt(
            source_net, source, target, config, modality=Modality.RGBD, noise=noise, aug=aug
        )
        n_single = sum(p.numel() for p in single.parameters())
        n_classwise = sum(p.numel() for p in classwise.parameters())
        assert n_single != n_classwise


def separable_gap_cfg(seed=0, canvas=CANVAS):
    """Deliberately extreme appearance gap with dense objects: the
    separability example calls for toy domains a discriminator can tell
    apart, so noise augmentation (which exists to blur the gap) stays off."""
    from classwise_adapt.data import DomainShift, ToySceneConfig

    return ToySceneConfig(
        height=canvas, width=canvas, seed=seed, objects_min=6, objects_max=8,
        shift=DomainShift(
            hue_rotation_deg=120.0, brightness_scale=0.55,
            noise_sigma=0.12, texture_amplitude=0.08,
        ),
    )


class TestDiscriminatorSeparability:
    def test_d_phase_learns_separable_toy_domains(self):
        cfg = separable_gap_cfg()
        source = ToyDataset(cfg, Domain.SYNTHETIC, 32)
        target = ToyDataset(cfg, Domain.REAL, 32)
        no_noise = NoisePolicy.disabled()
        aug = AugmentPolicy(
            crop_height=CANVAS, crop_width=CANVAS, gamma_min=1.0, gamma_max=1.0
        )
        source_net = pretrain_source(
            tiny_net_config(), TrainConfig(pretrain_iters=400, pretrain_batch=4, seed=0),
            source, modality=Modality.RGBD, noise=no_noise, aug=aug,
        )
        config = TrainConfig(
            adapt_iters=450, adapt_batch=6, sgd_lr=1e-3, disc_lr=0.2,
            d_phase_only=True, seed=8,
        )
        _, bank = adapt(
            source_net, source, target, config,
            modality=Modality.RGBD, noise=no_noise, aug=aug,
        )
        held_syn = ToyDataset(cfg, Domain.SYNTHETIC, 8, index_offset=5000)
        held_real = ToyDataset(cfg, Domain.REAL, 8, index_offset=5000)
        correct = total = 0
        with torch.no_grad():
            for dataset, domain in ((held_syn, SYNTHETIC_DOMAIN), (held_real, REAL_DOMAIN)):
                x, _ = make_batch(dataset, range(len(dataset)), Modality.RGBD)
                for m in bank.discriminate(source_net.features(x)):
                    pred = m.argmax(dim=1)
                    correct += (pred == domain).sum().item()
                    total += pred.numel()
        assert correct / total > 0.9, correct / total


class _PerfectPredictor(nn.Module):
    """Emits one-hot logits copied from the dataset labels, in order."""

    def __init__(self, dataset, k):
        super().__init__()
        self.dataset = dataset
        self.k = k
        self.cursor = 0

    def forward(self, x):
        n = x.shape[0]
        logits = []
        for _ in range(n):
            label = torch.from_numpy(np.asarray(self.dataset[self.cursor].label))
            logits.append(torch.nn.functional.one_hot(label, self.k).permute(2, 0, 1).float())
            self.cursor += 1
        return torch.stack(logits)


class _ConstantPredictor(nn.Module):
    def __init__(self, k, cls):
        super().__init__()
        self.k = k
        self.cls = cls

    def forward(self, x):
        logits = torch.zeros(x.shape[0], self.k, *x.shape[2:])
        logits[:, self.cls] = 10.0
        return logits


class _ArrayDataset:
    def __init__(self, samples, class_count, ignore_index=0):
        self.samples = samples
        self.class_count = class_count
        self.ignore_index = ignore_index

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _sample_with_label(label, sid):
    h, w = label.shape
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    depth = np.full((h, w), 2.0, dtype=np.float32)
    return Sample(rgb, depth, label.astype(np.int64), depth == 0, Domain.REAL, sid)


class TestEvaluate:
    def test_perfect_predictor_scores_one(self):
        source, _ = tiny_sources(n=5)
        net = _PerfectPredictor(source, k=6)
        rep = evaluate(net, source, Modality.RGBD, batch=2)
        assert rep.pa == 1.0 and rep.mpa == 1.0 and rep.miou == 1.0

    def test_constant_predictor_on_balanced_set(self):
        h = w = 16
        half = np.full((h, w), 1)
        full2 = np.full((h, w), 2)
        ds = _ArrayDataset(
            [_sample_with_label(half, "a"), _sample_with_label(full2, "b")], class_count=3
        )
        rep = evaluate(_ConstantPredictor(3, cls=1), ds, Modality.RGB)
        assert rep.pa == pytest.approx(0.5)

    def test_report_matches_metrics_oracle(self):
        source, _ = tiny_sources(n=4)
        torch.manual_seed(0)
        net = build(tiny_net_config()).eval()
        rep = evaluate(net, source, Modality.RGBD, batch=2)
        cm = ConfusionMatrix(6, ignore_index=0)
        with torch.no_grad():
            for i in range(len(source)):
                x, y = make_batch(source, [i], Modality.RGBD)
                pred = net(x).argmax(dim=1).numpy()
                cm.add(pred, y.numpy())
        oracle = report(cm)
        assert rep.pa == oracle.pa
        assert rep.mpa == oracle.mpa
        assert rep.miou == oracle.miou


class TestLogs:
    def test_log_columns_and_determinism(self, tmp_path):
        source, _ = tiny_sources(n=4)
        noise, aug = fast_policies()
        config = TrainConfig(pretrain_iters=6, pretrain_batch=2, seed=1, log_every=2)
        paths = []
        for name in ("a", "b"):
            log = tmp_path / f"{name}.csv"
            pretrain_source(
                tiny_net_config(), config, source,
                modality=Modality.RGBD, noise=noise, aug=aug, log_path=log,
            )
            paths.append(log)
        assert paths[0].read_bytes() == paths[1].read_bytes()
        header = paths[0].read_text().splitlines()[0]
        assert header == "iteration,seg_loss,domain_loss,adv_loss,wall_time"
