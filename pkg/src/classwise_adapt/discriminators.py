"""Per-class pixel-wise domain discriminators.

The bank holds one discriminator per class, architecturally identical but
with independent parameters. Discriminator j consumes exactly feature
channel j and emits a per-pixel probability distribution over
{synthetic=0, real=1}. The single-discriminator comparison baseline is the
same architecture with in_channels equal to the class count.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError
from .segnet import PyramidPool, init_weights

N_DOMAINS = 2


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    width: int = 16
    pyramid_scales: tuple = (1, 2, 4, 8)

    def __post_init__(self):
        if self.in_channels < 1 or self.width < 1:
            raise ConfigError("in_channels and width must be positive")
        if len(self.pyramid_scales) != 4:
            raise ConfigError("discriminator pyramid uses exactly four scales")
        if self.width % len(self.pyramid_scales):
            raise ConfigError("width must split evenly across the four pyramid streams")

    @classmethod
    def for_feature_size(cls, hw: int, in_channels: int = 1, width: int = 16):
        """Clamp pyramid scales to the pooled feature size (hw // 4)."""
        pooled = max(1, hw // 4)
        scales = tuple(min(s, pooled) for s in (1, 2, 4, 8))
        return cls(in_channels=in_channels, width=width, pyramid_scales=scales)


class PixelDiscriminator(nn.Module):
    """ReLU → 7×7 conv → pool ↓2 → 7×7 conv → pool ↓2 → pyramid pool →
    bilinear ×4 → 1×1 conv to two channels → per-pixel softmax."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        w = config.width
        self.config = config
        self.conv1 = nn.Conv2d(config.in_channels, w, kernel_size=7, padding=3)
        self.pool1 = nn.AvgPool2d(kernel_size=2, stride=2)
        self.conv2 = nn.Conv2d(w, w, kernel_size=7, padding=3)
        self.pool2 = nn.AvgPool2d(kernel_size=2, stride=2)
        self.pyramid = PyramidPool(
            w, config.pyramid_scales, w // len(config.pyramid_scales), identity_channels=0
        )
        self.upsample = nn.Upsample(scale_factor=4, mode="bilinear", align_corners=False)
        self.classifier = nn.Conv2d(w, N_DOMAINS, kernel_size=1)
        init_weights(self)
        # start at an even (0.5, 0.5) split: no saturated pixels, live
        # gradients from the first update
        nn.init.zeros_(self.classifier.weight)
        nn.init.zeros_(self.classifier.bias)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"feature size {h}x{w} must be divisible by 4")
        x = F.relu(x)
        x = self.pool1(self.conv1(x))
        x = self.pool2(self.conv2(x))
        x = self.pyramid(x)
        x = self.upsample(x)
        logits = self.classifier(x)
        return torch.softmax(logits, dim=-3)


class DiscriminatorBank(nn.Module):
    """k independent discriminators over disjoint feature-channel slices."""

    def __init__(self, size: int, config: DiscriminatorConfig):
        super().__init__()
        if size < 1:
            raise ConfigError("bank size must be >= 1")
        self.config = config
        self.discriminators = nn.ModuleList(
            PixelDiscriminator(config) for _ in range(size)
        )

    @property
    def size(self) -> int:
        return len(self.discriminators)

    @property
    def expected_feature_channels(self) -> int:
        return self.size * self.config.in_channels

    def forward(self, features):
        return self.discriminate(features)

    def discriminate(self, features) -> list:
        """Split features along channels; discriminator j sees only slice j."""
        if features.dim() == 3:
            features = features.unsqueeze(0)
        if features.shape[1] != self.expected_feature_channels:
            raise ShapeError(
                f"bank expects {self.expected_feature_channels} feature channels, "
                f"got {features.shape[1]}"
            )
        ic = self.config.in_channels
        return [
            disc(features[:, j * ic : (j + 1) * ic])
            for j, disc in enumerate(self.discriminators)
        ]


def build_bank(size: int, config: DiscriminatorConfig | None = None) -> DiscriminatorBank:
    return DiscriminatorBank(size, config or DiscriminatorConfig())


def discriminate(bank: DiscriminatorBank, features) -> list:
    return bank.discriminate(features)
