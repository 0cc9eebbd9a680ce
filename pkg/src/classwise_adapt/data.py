"""Sample types, dataset directory IO, and the procedural two-domain toy-scene generator.

Dataset directory layout::

    <root>/rgb/<id>.png      8-bit, 3-channel
    <root>/depth/<id>.png    16-bit single channel, millimeters, 0 = hole
    <root>/label/<id>.png    8-bit class index
    <root>/manifest.txt      one "id<TAB>domain" per line, UTF-8

The toy generator writes the same layout, so downstream consumers never
care whether samples were rendered or loaded.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    CorruptSampleError,
    GenerationFailedError,
    HolesNotFilledError,
)

DEPTH_SCALE_MM = 1000.0  # on-disk depth is 16-bit millimeters
DEFAULT_MAX_DEPTH_M = 10.0  # normalization range for network inputs

# Fixed roles inside toy scenes.
TOY_IGNORE_CLASS = 0
TOY_FLOOR_CLASS = 1
TOY_WALL_CLASS = 2
TOY_FIRST_OBJECT_CLASS = 3


class Domain(str, enum.Enum):
    SYNTHETIC = "synthetic"
    REAL = "real"


class Modality(str, enum.Enum):
    RGB = "rgb"
    DEPTH = "depth"
    RGBD = "rgbd"

    @property
    def channels(self) -> int:
        return {Modality.RGB: 3, Modality.DEPTH: 1, Modality.RGBD: 4}[self]


@dataclass
class Sample:
    """One rgb/depth/label triple with a domain tag.

    rgb is H×W×3 float32 in [0,1], depth is H×W float32 meters with 0.0
    encoding a hole, label is H×W integer class indices.
    """

    rgb: np.ndarray
    depth: np.ndarray
    label: np.ndarray
    hole_mask: np.ndarray
    domain: Domain
    id: str

    def validate(self, class_count: int | None = None) -> "Sample":
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3):
            raise CorruptSampleError(f"{self.id}: rgb shape {self.rgb.shape} != {(h, w, 3)}")
        if self.label.shape != (h, w) or self.hole_mask.shape != (h, w):
            raise CorruptSampleError(f"{self.id}: label/hole_mask shape mismatch")
        if self.rgb.min() < 0.0 or self.rgb.max() > 1.0:
            raise CorruptSampleError(f"{self.id}: rgb values outside [0,1]")
        if self.depth.min() < 0.0:
            raise CorruptSampleError(f"{self.id}: negative depth")
        if class_count is not None and self.label.max() >= class_count:
            raise CorruptSampleError(
                f"{self.id}: label {int(self.label.max())} >= class count {class_count}"
            )
        if not np.array_equal(self.hole_mask, self.depth == 0.0):
            raise CorruptSampleError(f"{self.id}: hole_mask inconsistent with depth==0")
        return self

    def with_planes(self, rgb=None, depth=None, label=None) -> "Sample":
        """Copy with replaced planes; hole_mask is rederived from depth."""
        depth = self.depth if depth is None else depth
        return Sample(
            rgb=self.rgb if rgb is None else rgb,
            depth=depth,
            label=self.label if label is None else label,
            hole_mask=depth == 0.0,
            domain=self.domain,
            id=self.id,
        )


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    modality: Modality = Modality.RGBD
    class_count: int = 6
    ignore_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "modality", Modality(self.modality))
        if self.class_count < 1:
            raise ConfigError("class_count must be positive")
        if not 0 <= self.ignore_index < self.class_count:
            raise ConfigError("ignore_index must be < class_count")


@dataclass(frozen=True)
class DomainShift:
    """Appearance-level synthetic→real gap applied by the toy generator."""

    hue_rotation_deg: float = 45.0
    brightness_scale: float = 0.75
    noise_sigma: float = 0.06
    texture_amplitude: float = 0.05
    depth_noise_sigma: float = 0.0


def _default_colors(k: int) -> tuple:
    base = [
        (0.50, 0.50, 0.50),  # ignore / ceiling
        (0.55, 0.40, 0.25),  # floor
        (0.78, 0.78, 0.70),  # wall
        (0.85, 0.20, 0.15),
        (0.15, 0.55, 0.80),
        (0.25, 0.70, 0.25),
        (0.85, 0.75, 0.15),
        (0.60, 0.25, 0.70),
        (0.90, 0.50, 0.10),
        (0.20, 0.75, 0.65),
    ]
    while len(base) < k:
        g = 0.2 + 0.6 * (len(base) % 7) / 6.0
        base.append((g, 1.0 - g, 0.5))
    return tuple(base[:k])


def _default_depth_ranges(k: int) -> tuple:
    base = [
        (3.5, 4.5),  # ceiling strip sits on the far wall
        (1.0, 4.0),  # floor gradient near→far
        (3.5, 4.5),  # wall
    ]
    # object planes: overlapping neighbours so depth alone is informative
    # but not sufficient to separate classes
    spans = [(0.6, 1.6), (1.2, 2.4), (2.0, 3.2), (0.8, 2.8), (1.6, 3.0)]
    for i in range(3, k):
        base.append(spans[(i - 3) % len(spans)])
    return tuple(base[:k])


@dataclass(frozen=True)
class ToySceneConfig:
    height: int = 48
    width: int = 48
    class_count: int = 6
    objects_min: int = 3
    objects_max: int = 6
    class_colors: tuple = ()
    class_depth_ranges: tuple = ()
    shift: DomainShift = field(default_factory=DomainShift)
    min_class_diversity: int = 3
    dominance_cap: float = 0.85
    ceiling_fraction: float = 0.06
    seed: int = 0

    def __post_init__(self):
        if not self.class_colors:
            object.__setattr__(self, "class_colors", _default_colors(self.class_count))
        if not self.class_depth_ranges:
            object.__setattr__(
                self, "class_depth_ranges", _default_depth_ranges(self.class_count)
            )
        if self.class_count < TOY_FIRST_OBJECT_CLASS + 1:
            raise ConfigError("toy scenes need at least 4 classes (ignore/floor/wall/object)")
        if self.min_class_diversity < 2:
            raise ConfigError("min_class_diversity must be >= 2")
        if len(self.class_colors) != self.class_count:
            raise ConfigError("class_colors length must equal class_count")
        if len(self.class_depth_ranges) != self.class_count:
            raise ConfigError("class_depth_ranges length must equal class_count")
        if not 0.0 < self.dominance_cap <= 1.0:
            raise ConfigError("dominance_cap must be in (0,1]")
        for v in (
            self.shift.hue_rotation_deg,
            self.shift.brightness_scale,
            self.shift.noise_sigma,
            self.shift.texture_amplitude,
            self.shift.depth_noise_sigma,
        ):
            if not math.isfinite(v):
                raise ConfigError("domain-shift parameters must be finite")


def hue_rotate(rgb: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate colors about the gray axis; output clipped to [0,1]."""
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    a = 1.0 / math.sqrt(3.0)
    # Rodrigues rotation about (1,1,1)/sqrt(3)
    k = np.array([[0, -a, a], [a, 0, -a], [-a, a, 0]])
    outer = np.full((3, 3), 1.0 / 3.0)
    m = c * np.eye(3) + s * k + (1 - c) * outer
    out = rgb @ m.T.astype(rgb.dtype)
    return np.clip(out, 0.0, 1.0)


def _paint_scene(cfg: ToySceneConfig, rng: np.random.Generator):
    h, w = cfg.height, cfg.width
    label = np.full((h, w), TOY_WALL_CLASS, dtype=np.int64)
    rgb = np.empty((h, w, 3), dtype=np.float32)
    depth = np.empty((h, w), dtype=np.float32)

    wall_lo, wall_hi = cfg.class_depth_ranges[TOY_WALL_CLASS]
    wall_depth = rng.uniform(wall_lo, wall_hi)
    rgb[:] = np.asarray(cfg.class_colors[TOY_WALL_CLASS], dtype=np.float32)
    depth[:] = wall_depth

    ceil_rows = max(1, int(round(cfg.ceiling_fraction * h)))
    label[:ceil_rows] = TOY_IGNORE_CLASS
    rgb[:ceil_rows] = np.asarray(cfg.class_colors[TOY_IGNORE_CLASS], dtype=np.float32)

    horizon = int(rng.uniform(0.45, 0.62) * h)
    floor_lo, _ = cfg.class_depth_ranges[TOY_FLOOR_CLASS]
    rows = np.arange(horizon, h, dtype=np.float32)
    # linear near→far gradient from the bottom edge up to the horizon
    t = (h - 1 - rows) / max(1.0, float(h - 1 - horizon))
    floor_depth = floor_lo + t * (wall_depth - floor_lo)
    label[horizon:] = TOY_FLOOR_CLASS
    rgb[horizon:] = np.asarray(cfg.class_colors[TOY_FLOOR_CLASS], dtype=np.float32)
    depth[horizon:] = floor_depth[:, None]

    n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    objects = []
    for _ in range(n_objects):
        cls = int(rng.integers(TOY_FIRST_OBJECT_CLASS, cfg.class_count))
        lo, hi = cfg.class_depth_ranges[cls]
        objects.append(
            dict(
                cls=cls,
                shape="ellipse" if rng.random() < 0.5 else "rect",
                cy=rng.uniform(0.2, 0.85),
                cx=rng.uniform(0.1, 0.9),
                ry=rng.uniform(0.10, 0.28),
                rx=rng.uniform(0.10, 0.28),
                z=rng.uniform(lo, hi),
                color=np.clip(
                    np.asarray(cfg.class_colors[cls]) + rng.uniform(-0.08, 0.08, 3),
                    0.0,
                    1.0,
                ).astype(np.float32),
            )
        )
    # paint far-to-near so nearer objects occlude
    yy, xx = np.mgrid[0:h, 0:w]
    for obj in sorted(objects, key=lambda o: -o["z"]):
        cy, cx = obj["cy"] * (h - 1), obj["cx"] * (w - 1)
        ry, rx = max(2.0, obj["ry"] * h), max(2.0, obj["rx"] * w)
        if obj["shape"] == "ellipse":
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        label[mask] = obj["cls"]
        rgb[mask] = obj["color"]
        depth[mask] = obj["z"]
    return rgb, depth, label


def _scene_acceptable(cfg: ToySceneConfig, label: np.ndarray) -> bool:
    counts = np.bincount(label.ravel(), minlength=cfg.class_count)
    non_ignore = [c for c in range(cfg.class_count) if c != TOY_IGNORE_CLASS and counts[c] > 0]
    if len(non_ignore) < cfg.min_class_diversity:
        return False
    return counts.max() / label.size < cfg.dominance_cap


def _apply_domain_shift(
    cfg: ToySceneConfig, rgb: np.ndarray, depth: np.ndarray, rng: np.random.Generator
):
    shift = cfg.shift
    h, w = depth.shape
    out = hue_rotate(rgb, shift.hue_rotation_deg)
    out = out * shift.brightness_scale
    if shift.texture_amplitude > 0:
        fy, fx = rng.uniform(2.0, 6.0, size=2)
        phase = rng.uniform(0.0, 2 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        tex = np.sin(2 * math.pi * (fy * yy / h + fx * xx / w) + phase)
        out = out + shift.texture_amplitude * tex[:, :, None].astype(np.float32)
    if shift.noise_sigma > 0:
        out = out + rng.normal(0.0, shift.noise_sigma, out.shape)
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    d = depth
    if shift.depth_noise_sigma > 0:
        d = depth + rng.normal(0.0, shift.depth_noise_sigma, depth.shape).astype(np.float32)
        d = np.clip(d, 0.01, None).astype(np.float32)
    return out, d


def generate_toy_sample(cfg: ToySceneConfig, domain: Domain, index: int) -> Sample:
    """Deterministic layered 2.5D scene; pure function of (cfg, domain, index).

    Scene layout (and therefore the label plane) is derived without the
    domain, so synthetic/real pairs at the same index differ only in
    appearance. Scenes below the class-diversity floor or above the
    dominance cap are rejected and redrawn from a derived sub-seed.
    """
    domain = Domain(domain)
    for attempt in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index, attempt]))
        rgb, depth, label = _paint_scene(cfg, rng)
        if not _scene_acceptable(cfg, label):
            continue
        if domain is Domain.REAL:
            shift_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, index, attempt, 0xD0])
            )
            rgb, depth = _apply_domain_shift(cfg, rgb, depth, shift_rng)
        sample = Sample(
            rgb=rgb,
            depth=depth,
            label=label,
            hole_mask=depth == 0.0,
            domain=domain,
            id=f"{domain.value}_{index:05d}",
        )
        return sample.validate(cfg.class_count)
    raise GenerationFailedError(
        f"100 consecutive rejections at index {index}; config cannot satisfy "
        f"min_class_diversity={cfg.min_class_diversity} / dominance_cap={cfg.dominance_cap}"
    )


def to_network_input(
    sample: Sample, modality: Modality, max_depth: float = DEFAULT_MAX_DEPTH_M
) -> np.ndarray:
    """Stack a sample into a C×H×W float32 array.

    Depth is normalized to [0,1] by max_depth and must be hole-free when
    requested (inpaint first).
    """
    modality = Modality(modality)
    planes = []
    if modality in (Modality.RGB, Modality.RGBD):
        planes.extend(np.ascontiguousarray(sample.rgb[:, :, c]) for c in range(3))
    if modality in (Modality.DEPTH, Modality.RGBD):
        if sample.hole_mask.any():
            raise HolesNotFilledError(f"{sample.id}: depth holes present; inpaint first")
        planes.append(np.clip(sample.depth / max_depth, 0.0, 1.0))
    return np.stack(planes).astype(np.float32)


# ---------------------------------------------------------------------------
# directory IO


def read_manifest(root: Path) -> list[tuple[str, Domain]]:
    path = Path(root) / "manifest.txt"
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        sample_id, domain = line.split("\t")
        entries.append((sample_id, Domain(domain)))
    return entries


def load_sample(spec: DatasetSpec, sample_id: str, domain: Domain | None = None) -> Sample:
    """Load one triple from the directory layout; pure given the files."""
    if domain is None:
        domains = dict(read_manifest(spec.root))
        if sample_id not in domains:
            raise FileNotFoundError(f"{sample_id} not in manifest under {spec.root}")
        domain = domains[sample_id]
    paths = {kind: spec.root / kind / f"{sample_id}.png" for kind in ("rgb", "depth", "label")}
    for kind, path in paths.items():
        if not path.exists():
            raise FileNotFoundError(f"missing {kind} image: {path}")
    rgb8 = np.asarray(Image.open(paths["rgb"]))
    depth_mm = np.asarray(Image.open(paths["depth"]))
    label8 = np.asarray(Image.open(paths["label"]))
    if rgb8.ndim != 3 or rgb8.shape[2] != 3:
        raise CorruptSampleError(f"{sample_id}: rgb is not 3-channel")
    if depth_mm.shape != rgb8.shape[:2] or label8.shape != rgb8.shape[:2]:
        raise CorruptSampleError(f"{sample_id}: plane dimensions disagree")
    depth = depth_mm.astype(np.float32) / DEPTH_SCALE_MM
    sample = Sample(
        rgb=rgb8.astype(np.float32) / 255.0,
        depth=depth,
        label=label8.astype(np.int64),
        hole_mask=depth == 0.0,
        domain=Domain(domain),
        id=sample_id,
    )
    return sample.validate(spec.class_count)


def write_sample(root: Path, sample: Sample) -> None:
    root = Path(root)
    for kind in ("rgb", "depth", "label"):
        (root / kind).mkdir(parents=True, exist_ok=True)
    rgb8 = np.round(sample.rgb * 255.0).astype(np.uint8)
    depth_mm = np.round(sample.depth * DEPTH_SCALE_MM).astype(np.uint16)
    Image.fromarray(rgb8).save(root / "rgb" / f"{sample.id}.png")
    Image.fromarray(depth_mm).save(root / "depth" / f"{sample.id}.png")
    Image.fromarray(sample.label.astype(np.uint8)).save(root / "label" / f"{sample.id}.png")


def write_toy_dataset(
    cfg: ToySceneConfig,
    root: Path,
    per_domain: int,
    index_offset: int = 0,
) -> DatasetSpec:
    """Emit a two-domain toy dataset in the standard directory layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for domain in (Domain.SYNTHETIC, Domain.REAL):
        for i in range(per_domain):
            sample = generate_toy_sample(cfg, domain, index_offset + i)
            write_sample(root, sample)
            lines.append(f"{sample.id}\t{domain.value}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return DatasetSpec(root=root, class_count=cfg.class_count)


# ---------------------------------------------------------------------------
# sample sources consumed by the trainer


class DiskDataset:
    """Manifest-backed dataset, optionally filtered to one domain."""

    def __init__(self, spec: DatasetSpec, domain: Domain | None = None):
        self.spec = spec
        wanted = None if domain is None else Domain(domain)
        self.entries = [
            (sid, dom) for sid, dom in read_manifest(spec.root) if wanted in (None, dom)
        ]

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    @property
    def ignore_index(self) -> int:
        return self.spec.ignore_index

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> Sample:
        sid, dom = self.entries[i]
        return load_sample(self.spec, sid, dom)


class ToyDataset:
    """Generates toy samples on demand; index_offset separates splits."""

    def __init__(
        self,
        cfg: ToySceneConfig,
        domain: Domain,
        count: int,
        index_offset: int = 0,
        ignore_index: int = TOY_IGNORE_CLASS,
        cache: bool = True,
    ):
        self.cfg = cfg
        self.domain = Domain(domain)
        self.count = count
        self.index_offset = index_offset
        self.ignore_index = ignore_index
        self._cache: dict[int, Sample] | None = {} if cache else None

    @property
    def class_count(self) -> int:
        return self.cfg.class_count

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> Sample:
        if not 0 <= i < self.count:
            raise IndexError(i)
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        sample = generate_toy_sample(self.cfg, self.domain, self.index_offset + i)
        if self._cache is not None:
            self._cache[i] = sample
        return sample
