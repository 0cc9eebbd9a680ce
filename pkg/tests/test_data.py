import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from classwise_adapt.data import (
    DatasetSpec,
    DiskDataset,
    Domain,
    Modality,
    Sample,
    ToySceneConfig,
    generate_toy_sample,
    load_sample,
    read_manifest,
    to_network_input,
    write_sample,
    write_toy_dataset,
)
from classwise_adapt.errors import (
    ConfigError,
    CorruptSampleError,
    GenerationFailedError,
    HolesNotFilledError,
)


def _write_triple(root, sample_id, rgb8, depth_mm, label8, domain="synthetic"):
    for kind in ("rgb", "depth", "label"):
        (root / kind).mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb8).save(root / "rgb" / f"{sample_id}.png")
    Image.fromarray(depth_mm).save(root / "depth" / f"{sample_id}.png")
    Image.fromarray(label8).save(root / "label" / f"{sample_id}.png")
    with open(root / "manifest.txt", "a", encoding="utf-8") as fh:
        fh.write(f"{sample_id}\t{domain}\n")


def _basic_triple(h=12, w=16, k=6):
    rgb8 = np.full((h, w, 3), 128, dtype=np.uint8)
    depth_mm = np.full((h, w), 1500, dtype=np.uint16)
    label8 = np.zeros((h, w), dtype=np.uint8)
    label8[h // 2 :] = k - 1
    return rgb8, depth_mm, label8


class TestLoadSample:
    def test_millimeters_become_meters(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8)
        spec = DatasetSpec(root=tmp_path, class_count=6)
        sample = load_sample(spec, "a")
        assert sample.depth[0, 0] == pytest.approx(1.5)
        assert sample.rgb[0, 0, 0] == pytest.approx(128 / 255)

    def test_zero_depth_marks_hole(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        depth_mm[3, 4] = 0
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8)
        sample = load_sample(DatasetSpec(root=tmp_path, class_count=6), "a")
        assert sample.hole_mask[3, 4]
        assert sample.hole_mask.sum() == 1

    def test_label_at_class_count_rejected(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple(k=6)
        label8[0, 0] = 6
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8)
        with pytest.raises(CorruptSampleError):
            load_sample(DatasetSpec(root=tmp_path, class_count=6), "a")

    def test_missing_file(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8)
        (tmp_path / "depth" / "a.png").unlink()
        with pytest.raises(FileNotFoundError):
            load_sample(DatasetSpec(root=tmp_path, class_count=6), "a")

    def test_dimension_mismatch(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        _write_triple(tmp_path, "a", rgb8, depth_mm[:-2], label8)
        with pytest.raises(CorruptSampleError):
            load_sample(DatasetSpec(root=tmp_path, class_count=6), "a")

    def test_load_is_pure(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8)
        spec = DatasetSpec(root=tmp_path, class_count=6)
        s1, s2 = load_sample(spec, "a"), load_sample(spec, "a")
        assert np.array_equal(s1.rgb, s2.rgb)
        assert np.array_equal(s1.depth, s2.depth)
        assert np.array_equal(s1.label, s2.label)

    def test_domain_comes_from_manifest(self, tmp_path):
        rgb8, depth_mm, label8 = _basic_triple()
        _write_triple(tmp_path, "a", rgb8, depth_mm, label8, domain="real")
        sample = load_sample(DatasetSpec(root=tmp_path, class_count=6), "a")
        assert sample.domain is Domain.REAL


class TestToyGenerator:
    def test_bit_identical_repeats(self, toy_cfg):
        a = generate_toy_sample(toy_cfg, Domain.SYNTHETIC, 7)
        b = generate_toy_sample(toy_cfg, Domain.SYNTHETIC, 7)
        for plane in ("rgb", "depth", "label", "hole_mask"):
            assert np.array_equal(getattr(a, plane), getattr(b, plane))

    def test_domains_share_layout_not_appearance(self, toy_cfg):
        syn = generate_toy_sample(toy_cfg, Domain.SYNTHETIC, 3)
        real = generate_toy_sample(toy_cfg, Domain.REAL, 3)
        assert np.array_equal(syn.label, real.label)
        assert not np.array_equal(syn.rgb, real.rgb)

    def test_no_holes(self, toy_cfg):
        sample = generate_toy_sample(toy_cfg, Domain.REAL, 5)
        assert not sample.hole_mask.any()
        assert (sample.depth > 0).all()

    def test_diversity_floor_over_generated_set(self):
        # exhaustive scan: every emitted scene carries >= 3 distinct
        # non-ignore classes and no class above the dominance cap
        cfg = ToySceneConfig(min_class_diversity=3, seed=5)
        for i in range(1000):
            label = generate_toy_sample(cfg, Domain.SYNTHETIC, i).label
            classes = set(np.unique(label)) - {0}
            assert len(classes) >= 3, f"index {i}"
            dominance = np.bincount(label.ravel()).max() / label.size
            assert dominance < cfg.dominance_cap, f"index {i}"

    def test_rejection_budget_exhausted(self):
        cfg = ToySceneConfig(objects_min=0, objects_max=0, min_class_diversity=3)
        with pytest.raises(GenerationFailedError):
            generate_toy_sample(cfg, Domain.SYNTHETIC, 0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ToySceneConfig(min_class_diversity=1)
        with pytest.raises(ConfigError):
            ToySceneConfig(class_count=3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=500))
    def test_pure_function_of_index(self, index):
        cfg = ToySceneConfig(seed=2)
        a = generate_toy_sample(cfg, Domain.REAL, index)
        b = generate_toy_sample(cfg, Domain.REAL, index)
        assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)


class TestNetworkInput:
    def test_rgbd_is_four_channel(self):
        cfg = ToySceneConfig(height=240, width=240, seed=1)
        sample = generate_toy_sample(cfg, Domain.SYNTHETIC, 0)
        x = to_network_input(sample, Modality.RGBD)
        assert x.shape == (4, 240, 240)

    def test_rgb_channel_order_preserved(self, toy_sample):
        x = to_network_input(toy_sample, Modality.RGB)
        assert x.shape == (3,) + toy_sample.depth.shape
        for c in range(3):
            assert np.array_equal(x[c], toy_sample.rgb[:, :, c])

    def test_depth_normalization(self, toy_sample):
        depth = np.full_like(toy_sample.depth, 2.5)
        sample = toy_sample.with_planes(depth=depth)
        x = to_network_input(sample, Modality.DEPTH, max_depth=10.0)
        assert np.allclose(x[0], 0.25)

    def test_holes_rejected(self, toy_sample):
        depth = toy_sample.depth.copy()
        depth[0, 0] = 0.0
        sample = toy_sample.with_planes(depth=depth)
        with pytest.raises(HolesNotFilledError):
            to_network_input(sample, Modality.RGBD)
        x = to_network_input(sample, Modality.RGB)  # rgb path unaffected
        assert x.shape[0] == 3


class TestDatasetRoundTrip:
    def test_write_load_round_trip(self, tmp_path, toy_cfg):
        spec = write_toy_dataset(toy_cfg, tmp_path, per_domain=3)
        entries = read_manifest(tmp_path)
        assert len(entries) == 6
        ds = DiskDataset(spec, Domain.REAL)
        assert len(ds) == 3
        sample = ds[0]
        original = generate_toy_sample(toy_cfg, Domain.REAL, 0)
        # 8-bit/16-bit quantization on disk
        assert np.abs(sample.rgb - original.rgb).max() <= 0.5 / 255 + 1e-6
        assert np.abs(sample.depth - original.depth).max() <= 0.5e-3 + 1e-6
        assert np.array_equal(sample.label, original.label)

    def test_write_sample_is_idempotent(self, tmp_path, toy_sample):
        write_sample(tmp_path, toy_sample)
        first = (tmp_path / "rgb" / f"{toy_sample.id}.png").read_bytes()
        write_sample(tmp_path, toy_sample)
        assert (tmp_path / "rgb" / f"{toy_sample.id}.png").read_bytes() == first


class TestSampleValidation:
    def test_mismatched_hole_mask_rejected(self, toy_sample):
        bad = Sample(
            rgb=toy_sample.rgb,
            depth=toy_sample.depth,
            label=toy_sample.label,
            hole_mask=~toy_sample.hole_mask,
            domain=toy_sample.domain,
            id="bad",
        )
        with pytest.raises(CorruptSampleError):
            bad.validate()

    def test_rgb_range_enforced(self, toy_sample):
        rgb = toy_sample.rgb.copy()
        rgb[0, 0, 0] = 1.5
        with pytest.raises(CorruptSampleError):
            toy_sample.with_planes(rgb=rgb).validate()
