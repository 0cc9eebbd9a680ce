import dataclasses

import numpy as np
import pytest
import torch

from classwise_adapt.checkpoint import (
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from classwise_adapt.discriminators import DiscriminatorConfig, build_bank
from classwise_adapt.errors import CheckpointError
from classwise_adapt.segnet import SegNetConfig, build
from classwise_adapt.training import (
    TrainState,
    load_bank,
    load_segnet,
    save_bank,
    save_segnet,
    state_signature,
)


class TestContainer:
    def test_array_round_trip(self, tmp_path):
        arrays = {
            "a": np.arange(12, dtype=np.float32).reshape(3, 4),
            "b": np.array(7, dtype=np.int64),
            "c": np.random.default_rng(0).random((2, 2, 2)),
        }
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, "test", {"v": 1}, arrays)
        kind, config, back = read_checkpoint(path)
        assert kind == "test" and config == {"v": 1}
        for name, arr in arrays.items():
            assert np.array_equal(back[name], arr)
            assert back[name].dtype == arr.dtype

    def test_writes_are_byte_deterministic(self, tmp_path):
        arrays = {"w": np.ones((4, 4), dtype=np.float64)}
        save_checkpoint(tmp_path / "a.ckpt", "k", {"n": 2}, arrays)
        save_checkpoint(tmp_path / "b.ckpt", "k", {"n": 2}, arrays)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_kind_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "x.ckpt", "alpha", {}, {"w": np.zeros(2)})
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.ckpt", "beta", {})

    def test_config_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "x.ckpt", "k", {"lr": 0.1}, {"w": np.zeros(2)})
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.ckpt", "k", {"lr": 0.2})

    def test_garbage_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError):
            read_checkpoint(bad)


class TestNetworkCheckpoints:
    def test_segnet_round_trip(self, tmp_path):
        torch.manual_seed(0)
        net = build(SegNetConfig.desk(input_hw=16))
        save_segnet(tmp_path / "net.ckpt", net)
        back = load_segnet(tmp_path / "net.ckpt")
        assert state_signature(back) == state_signature(net)
        assert back.config == net.config
        assert back.role == net.role

    def test_segnet_config_verified(self, tmp_path):
        torch.manual_seed(0)
        net = build(SegNetConfig.desk(input_hw=16))
        save_segnet(tmp_path / "net.ckpt", net)
        other = SegNetConfig.desk(input_hw=16, class_count=5)
        with pytest.raises(CheckpointError):
            load_segnet(tmp_path / "net.ckpt", other)

    def test_bank_round_trip(self, tmp_path):
        torch.manual_seed(1)
        bank = build_bank(4, DiscriminatorConfig.for_feature_size(16))
        save_bank(tmp_path / "bank.ckpt", bank)
        back = load_bank(tmp_path / "bank.ckpt")
        assert back.size == 4
        assert state_signature(back) == state_signature(bank)

    def test_bank_records_are_per_class(self, tmp_path):
        torch.manual_seed(2)
        bank = build_bank(3, DiscriminatorConfig.for_feature_size(16))
        save_bank(tmp_path / "bank.ckpt", bank)
        _, _, arrays = read_checkpoint(tmp_path / "bank.ckpt")
        for j in range(3):
            assert any(name.startswith(f"discriminators.{j}.") for name in arrays)


class TestTrainStateRoundTrip:
    def test_bit_exact(self, tmp_path):
        torch.manual_seed(3)
        cfg = SegNetConfig.desk(input_hw=16)
        source_net = build(cfg, role="source")
        adapted_net = build(cfg, role="adapted")
        bank = build_bank(cfg.class_count, DiscriminatorConfig.for_feature_size(16))
        opt_r = torch.optim.SGD(adapted_net.parameters(), lr=0.01)
        opt_d = torch.optim.SGD(bank.parameters(), lr=0.01)
        # take one real optimizer step so state is non-trivial
        x = torch.randn(1, 4, 16, 16)
        loss = adapted_net(x).mean() + sum(m.mean() for m in bank.discriminate(adapted_net.features(x)))
        loss.backward()
        opt_r.step()
        opt_d.step()
        order = np.random.default_rng(5)
        order.integers(0, 100, size=7)

        state = TrainState(
            iteration=7, source_net=source_net, adapted_net=adapted_net, bank=bank,
            opt_r=opt_r, opt_d=opt_d, order_state=order.bit_generator.state,
        )
        p1 = tmp_path / "s1.ckpt"
        p2 = tmp_path / "s2.ckpt"
        state.save(p1)
        loaded = TrainState.load(p1)
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.iteration == 7
        assert state_signature(loaded.adapted_net) == state_signature(adapted_net)
        assert state_signature(loaded.bank) == state_signature(bank)
        # restored rng continues identically
        resumed = np.random.default_rng(0)
        resumed.bit_generator.state = loaded.order_state
        assert np.array_equal(resumed.integers(0, 100, 5), order.integers(0, 100, 5))


def test_config_dict_round_trip():
    cfg = SegNetConfig.full()
    as_dict = dataclasses.asdict(cfg)
    from classwise_adapt.training import segnet_config_from_dict

    assert segnet_config_from_dict(as_dict) == cfg
