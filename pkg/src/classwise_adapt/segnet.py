"""Segmentation network: dilated dense blocks, a pyramid pooling bottleneck,
and learned down/upsampling.

The network is a pure chain, exposed as named rows so tests can hook any
stage. Channel bookkeeping follows the dense-block rule (block output =
block input plus the sum of per-layer growths); the "features" consumed by
the domain discriminators are the output of the final 1×1 convolution, one
channel per class.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

# stages 0-2 sit in the downsampling half, 3-5 after the bottleneck
DOWN_STAGES = (0, 1, 2)
UP_STAGES = (3, 4, 5)

ROW_NAMES = (
    "stem",
    "stem_pool",
    "dense1",
    "down1",
    "dense2",
    "down2",
    "dense3",
    "pyramid",
    "dense4",
    "up1",
    "dense5",
    "up2",
    "dense6",
    "final_upsample",
    "head",
    "classifier",
)


def _normalize_growth(growth, layers: Sequence[int]) -> tuple:
    """Accept an int, one int per stage, or explicit per-layer tuples."""
    if isinstance(growth, int):
        return tuple(tuple([growth] * n) for n in layers)
    out = []
    for stage, n in zip(growth, layers):
        if isinstance(stage, int):
            out.append(tuple([stage] * n))
        else:
            out.append(tuple(int(g) for g in stage))
    return tuple(out)


def default_dilations(n_layers: int, feature_size: int, increasing: bool) -> tuple:
    """Per-layer dilation doubling with depth, clamped so the 3×3 kernel span
    (2d+1) fits the stage's nominal feature size; reversed for the
    upsampling phase."""
    cap = 1
    while 2 * (cap * 2) + 1 <= feature_size:
        cap *= 2
    seq = [min(2**i, cap) for i in range(n_layers)]
    return tuple(seq if increasing else reversed(seq))


def pyramid_scales_for(bottleneck: int) -> tuple:
    """(1,2,3,6,s) clamped to the bottleneck size s."""
    return tuple(min(s, bottleneck) for s in (1, 2, 3, 6, bottleneck))


@dataclass(frozen=True)
class SegNetConfig:
    input_channels: int = 4
    class_count: int = 38
    stem_channels: int = 64
    block_layers: tuple = (3, 6, 9, 9, 6, 3)
    growth: tuple = 64
    dilations: tuple = ()
    pyramid_scales: tuple = (1, 2, 3, 6, 30)
    down_divisor: int = 2
    up_divisor: int = 4
    head_channels: int = 256
    profile: str = "custom"
    expected_stage_channels: tuple = ()  # dense-block outputs; validated when set

    def __post_init__(self):
        if len(self.block_layers) != 6:
            raise ConfigError("exactly six dense stages are required")
        object.__setattr__(self, "block_layers", tuple(int(n) for n in self.block_layers))
        object.__setattr__(self, "growth", _normalize_growth(self.growth, self.block_layers))
        if not self.dilations:
            sizes = self._nominal_sizes()
            object.__setattr__(
                self,
                "dilations",
                tuple(
                    default_dilations(n, sizes[i], increasing=i in DOWN_STAGES)
                    for i, n in enumerate(self.block_layers)
                ),
            )
        object.__setattr__(
            self, "dilations", tuple(tuple(int(d) for d in ds) for ds in self.dilations)
        )
        object.__setattr__(self, "pyramid_scales", tuple(int(s) for s in self.pyramid_scales))
        self._validate()

    def _nominal_sizes(self, input_hw: int = 240) -> tuple:
        s = input_hw // 2
        return (s, s // 2, s // 4, s // 4, s // 2, s)

    def _validate(self):
        if min(self.input_channels, self.class_count, self.stem_channels, self.head_channels) < 1:
            raise ConfigError("channel counts must be positive")
        for i, n in enumerate(self.block_layers):
            if len(self.growth[i]) != n or len(self.dilations[i]) != n:
                raise ConfigError(f"stage {i}: growth/dilation length must equal layer count {n}")
            ds = self.dilations[i]
            if any(d < 1 for d in ds):
                raise ConfigError("dilations must be >= 1")
            if i in DOWN_STAGES and list(ds) != sorted(ds):
                raise ConfigError(f"stage {i}: downsampling-phase dilations must be non-decreasing")
            if i in UP_STAGES and list(ds) != sorted(ds, reverse=True):
                raise ConfigError(f"stage {i}: upsampling-phase dilations must be non-increasing")
        if len(self.pyramid_scales) != 5:
            raise ConfigError("exactly five pyramid scales are required")
        if self.expected_stage_channels:
            got = tuple(self.stage_channels()[f"dense{i+1}"] for i in range(6))
            if got != tuple(self.expected_stage_channels):
                raise ConfigError(
                    f"stage channels {got} do not land on expected {self.expected_stage_channels}"
                )

    def stage_channels(self) -> "OrderedDict[str, int]":
        """Channel count after every row, per the dense growth rule."""
        out: OrderedDict[str, int] = OrderedDict()
        m = self.stem_channels
        out["stem"] = m
        out["stem_pool"] = m
        m += sum(self.growth[0])
        out["dense1"] = m
        m //= self.down_divisor
        out["down1"] = m
        m += sum(self.growth[1])
        out["dense2"] = m
        m //= self.down_divisor
        out["down2"] = m
        m += sum(self.growth[2])
        out["dense3"] = m
        out["pyramid"] = m
        m += sum(self.growth[3])
        out["dense4"] = m
        m //= self.up_divisor
        out["up1"] = m
        m += sum(self.growth[4])
        out["dense5"] = m
        m //= self.up_divisor
        out["up2"] = m
        m += sum(self.growth[5])
        out["dense6"] = m
        out["final_upsample"] = m
        out["head"] = self.head_channels
        out["classifier"] = self.class_count
        return out

    def stage_sizes(self, h: int, w: int) -> "OrderedDict[str, tuple]":
        if h % 8 or w % 8:
            raise ShapeError(f"input {h}x{w} must be divisible by 8")
        half, quarter, eighth = (h // 2, w // 2), (h // 4, w // 4), (h // 8, w // 8)
        sizes = OrderedDict()
        sizes["stem"] = (h, w)
        sizes["stem_pool"] = half
        sizes["dense1"] = half
        sizes["down1"] = quarter
        sizes["dense2"] = quarter
        sizes["down2"] = eighth
        for name in ("dense3", "pyramid", "dense4"):
            sizes[name] = eighth
        sizes["up1"] = quarter
        sizes["dense5"] = quarter
        sizes["up2"] = half
        sizes["dense6"] = half
        for name in ("final_upsample", "head", "classifier"):
            sizes[name] = (h, w)
        return sizes

    @classmethod
    def full(cls, input_channels: int = 4, class_count: int = 38) -> "SegNetConfig":
        # reference architecture: 84 convolutions, bottleneck growth lands
        # on 1088 by widening the last layer (256 = 8*28 + 32)
        return cls(
            input_channels=input_channels,
            class_count=class_count,
            stem_channels=64,
            block_layers=(3, 6, 9, 9, 6, 3),
            growth=(64, 64, 64, (28,) * 8 + (32,), 64, 64),
            pyramid_scales=(1, 2, 3, 6, 30),
            head_channels=256,
            profile="full",
            expected_stage_channels=(256, 512, 832, 1088, 656, 356),
        )

    @classmethod
    def desk(
        cls,
        input_channels: int = 4,
        class_count: int = 6,
        input_hw: int = 48,
        stem_channels: int = 16,
        growth: int = 16,
        head_channels: int = 32,
    ) -> "SegNetConfig":
        """Laptop-scale profile; pyramid scales and dilations fit input_hw."""
        layers = (2, 2, 3, 3, 2, 2)
        if input_hw % 8:
            raise ConfigError("desk input size must be divisible by 8")
        sizes = (input_hw // 2, input_hw // 4, input_hw // 8) * 2
        sizes = (sizes[0], sizes[1], sizes[2], sizes[2], sizes[1], sizes[0])
        dils = tuple(
            default_dilations(n, sizes[i], increasing=i in DOWN_STAGES)
            for i, n in enumerate(layers)
        )
        return cls(
            input_channels=input_channels,
            class_count=class_count,
            stem_channels=stem_channels,
            block_layers=layers,
            growth=growth,
            dilations=dils,
            pyramid_scales=pyramid_scales_for(input_hw // 8),
            head_channels=head_channels,
            profile="desk",
        )


class DenseLayer(nn.Module):
    """Pre-activation dense layer: BN→ELU→1×1→BN→ELU→3×3 dilated."""

    def __init__(self, in_channels: int, growth: int, dilation: int):
        super().__init__()
        mid = 4 * growth
        self.norm1 = nn.BatchNorm2d(in_channels)
        self.conv1 = nn.Conv2d(in_channels, mid, kernel_size=1, bias=False)
        self.norm2 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(
            mid, growth, kernel_size=3, padding=dilation, dilation=dilation, bias=False
        )

    def forward(self, x):
        out = self.conv1(F.elu(self.norm1(x)))
        return self.conv2(F.elu(self.norm2(out)))


class DenseBlock(nn.Module):
    """Each layer consumes the concatenation of the block input and every
    earlier layer's output; the block emits the full concatenation."""

    def __init__(self, in_channels: int, growths: Sequence[int], dilations: Sequence[int]):
        super().__init__()
        self.layers = nn.ModuleList()
        channels = in_channels
        for g, d in zip(growths, dilations):
            self.layers.append(DenseLayer(channels, g, d))
            channels += g
        self.out_channels = channels

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, dim=1)))
        return torch.cat(feats, dim=1)


class Downsample(nn.Module):
    """Bilinear ×0.5 followed by a 1×1 channel reduction."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=False)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=0.5, mode="bilinear", align_corners=False)
        return self.conv(x)


class Upsample(nn.Module):
    """Strided transposed convolution ×2 with channel reduction."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_channels, out_channels, kernel_size=2, stride=2)

    def forward(self, x):
        return self.conv(x)


class PyramidPool(nn.Module):
    """Parallel average pooling at several scales.

    Each pooled stream is reduced by a 1×1 convolution and resized back;
    when identity_channels > 0 a parameter-free slice of the input joins
    the concatenation, keeping one convolution per scale.
    """

    def __init__(
        self,
        in_channels: int,
        scales: Sequence[int],
        stream_channels: int,
        identity_channels: int = 0,
    ):
        super().__init__()
        self.scales = tuple(int(s) for s in scales)
        self.identity_channels = identity_channels
        self.convs = nn.ModuleList(
            nn.Conv2d(in_channels, stream_channels, kernel_size=1, bias=False)
            for _ in self.scales
        )
        self.out_channels = identity_channels + stream_channels * len(self.scales)

    def forward(self, x):
        h, w = x.shape[-2:]
        if max(self.scales) > min(h, w):
            raise ShapeError(f"pyramid scale {max(self.scales)} exceeds feature size {h}x{w}")
        streams = []
        if self.identity_channels:
            streams.append(x[:, : self.identity_channels])
        for scale, conv in zip(self.scales, self.convs):
            y = F.adaptive_avg_pool2d(x, scale)
            y = conv(y)
            streams.append(F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False))
        return torch.cat(streams, dim=1)


def segnet_pyramid(in_channels: int, scales: Sequence[int]) -> PyramidPool:
    """Bottleneck pyramid: five reduced streams plus an identity slice,
    widths summing back to the input channel count."""
    stream = in_channels // (len(scales) + 1)
    if stream < 1:
        raise ConfigError("too few channels for the pyramid stream split")
    identity = in_channels - stream * len(scales)
    return PyramidPool(in_channels, scales, stream, identity_channels=identity)


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class SegNet(nn.Module):
    """role: "source" for the frozen reference trained on synthetic data,
    "adapted" for the copy updated against the discriminators."""

    def __init__(self, config: SegNetConfig, role: str = "source"):
        super().__init__()
        self.config = config
        self.role = role
        ch = config.stage_channels()
        rows: "OrderedDict[str, nn.Module]" = OrderedDict()
        rows["stem"] = nn.Conv2d(
            config.input_channels, config.stem_channels, kernel_size=7, padding=3
        )
        rows["stem_pool"] = nn.AvgPool2d(kernel_size=2, stride=2)
        m = config.stem_channels
        rows["dense1"] = DenseBlock(m, config.growth[0], config.dilations[0])
        rows["down1"] = Downsample(ch["dense1"], ch["down1"])
        rows["dense2"] = DenseBlock(ch["down1"], config.growth[1], config.dilations[1])
        rows["down2"] = Downsample(ch["dense2"], ch["down2"])
        rows["dense3"] = DenseBlock(ch["down2"], config.growth[2], config.dilations[2])
        rows["pyramid"] = segnet_pyramid(ch["dense3"], config.pyramid_scales)
        rows["dense4"] = DenseBlock(ch["pyramid"], config.growth[3], config.dilations[3])
        rows["up1"] = Upsample(ch["dense4"], ch["up1"])
        rows["dense5"] = DenseBlock(ch["up1"], config.growth[4], config.dilations[4])
        rows["up2"] = Upsample(ch["dense5"], ch["up2"])
        rows["dense6"] = DenseBlock(ch["up2"], config.growth[5], config.dilations[5])
        rows["final_upsample"] = nn.Upsample(
            scale_factor=2, mode="bilinear", align_corners=False
        )
        rows["head"] = nn.Conv2d(ch["dense6"], config.head_channels, kernel_size=3, padding=1)
        rows["classifier"] = nn.Conv2d(config.head_channels, config.class_count, kernel_size=1)
        self.body = nn.Sequential(rows)
        init_weights(self)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ShapeError(f"spatial size {h}x{w} must be divisible by 8")
        if x.shape[-3] != self.config.input_channels:
            raise ShapeError(
                f"expected {self.config.input_channels} input channels, got {x.shape[-3]}"
            )
        return self.body(x)

    def features(self, x):
        """Per-class score maps from the last convolution — the tensors the
        domain discriminators consume. Identical to forward by definition."""
        return self.forward(x)


def build(config: SegNetConfig, role: str = "source") -> SegNet:
    return SegNet(config, role=role)


def count_convolutions(module: nn.Module) -> int:
    return sum(1 for m in module.modules() if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)))


def row_conv_counts(net: SegNet) -> "OrderedDict[str, int]":
    return OrderedDict(
        (name, count_convolutions(row)) for name, row in net.body.named_children()
    )
