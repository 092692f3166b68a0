"""Network builder, forward shape contract, describe, checkpoints."""

import numpy as np
import pytest
from helpers import assert_gradients_match, randomize_bn_params, weighted_scalar

from mmbseg.checkpoint import load_checkpoint, save_checkpoint
from mmbseg.engine import leaf, set_debug_checks
from mmbseg.errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DimensionError,
    MissingTensorError,
    TensorShapeError,
)
from mmbseg.network import NetConfig, Network, build_network, preset


def small_cfg(**kw):
    base = dict(
        scales=3,
        channel_schedule=(8, 8, 8),
        blocks_per_branch=(1, 1, 1),
        block_kind="mmbconv",
        expansion=2.0,
        num_classes=5,
    )
    base.update(kw)
    return NetConfig(**base)


class TestConfig:
    def test_uniform_predicate(self):
        assert preset("uniform").is_uniform
        assert preset("uniform-mmbconv").is_uniform
        assert not preset("baseline").is_uniform

    def test_baseline_pyramid_schedule(self):
        cfg = preset("baseline")
        assert cfg.channel_schedule == (32, 64, 128, 256)
        assert not cfg.is_uniform

    def test_tempered_schedule_decreases_with_divisor(self):
        cfg = preset("tempered")
        assert all(a >= b for a, b in zip(cfg.channel_schedule, cfg.channel_schedule[1:]))

    def test_schedule_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            NetConfig(scales=3, channel_schedule=(8, 8), blocks_per_branch=(1, 1, 1))

    def test_add_merge_needs_uniform_channels(self):
        with pytest.raises(ConfigError):
            small_cfg(channel_schedule=(8, 16, 8), skip_merge="add")

    def test_json_round_trip(self):
        cfg = preset("uniform-mmbconv", num_classes=7)
        import json

        back = NetConfig.from_json(json.dumps(cfg.to_dict()))
        assert back == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            NetConfig.from_dict({**small_cfg().to_dict(), "bogus": 1})


class TestBuild:
    def test_same_seed_same_parameters(self):
        a = build_network(small_cfg(), seed=7)
        b = build_network(small_cfg(), seed=7)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            assert np.array_equal(pa.value, pb.value)

    def test_different_seed_different_parameters(self):
        a = build_network(small_cfg(), seed=7)
        b = build_network(small_cfg(), seed=8)
        diffs = [
            not np.array_equal(pa.value, pb.value)
            for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params())
            if na.endswith("/w")
        ]
        assert any(diffs)

    def test_forward_shape_contract(self, rng):
        net = build_network(small_cfg(), seed=0)
        x = leaf(rng.random((1, 3, 128, 128)).astype(np.float32))
        y = net.forward(x, training=True)
        assert y.value.shape == (1, 5, 128, 128)

    def test_zero_input_finite_logits(self):
        set_debug_checks(True)
        try:
            net = build_network(small_cfg(), seed=0)
            x = leaf(np.zeros((1, 3, 64, 64), dtype=np.float32))
            y = net.forward(x, training=True)
            assert np.isfinite(y.value).all()
        finally:
            set_debug_checks(False)

    def test_bad_extents_rejected_before_compute(self, rng):
        net = build_network(small_cfg(), seed=0)
        x = leaf(rng.random((1, 3, 60, 64)).astype(np.float32))  # 60 % 16 != 0
        with pytest.raises(DimensionError):
            net.forward(x, training=True)

    @pytest.mark.parametrize("merge", ["concat", "add"])
    def test_both_merge_modes_run(self, rng, merge):
        net = build_network(small_cfg(skip_merge=merge), seed=0)
        x = leaf(rng.random((1, 3, 32, 32)).astype(np.float32))
        assert net.forward(x, training=True).value.shape == (1, 5, 32, 32)

    def test_block_kind_swap_changes_only_conv_kernels(self):
        mb = build_network(small_cfg(block_kind="mbconv"), seed=3)
        mmb = build_network(small_cfg(block_kind="mmbconv"), seed=3)
        for (na, pa), (nb, pb) in zip(mb.named_params(), mmb.named_params()):
            assert na == nb
            if pa.value.shape != pb.value.shape:
                assert na.endswith("/w"), f"non-kernel shape changed: {na}"
                assert pa.value.shape[:2] == pb.value.shape[:2]
                assert pa.value.shape[2:] == (1, 1) and pb.value.shape[2:] == (3, 3)


class TestDescribe:
    def test_uniform_rows_equal(self):
        net = build_network(preset("uniform-mmbconv"), seed=0)
        rows = [r for r in net.describe() if r["branch"].startswith("branch")]
        assert len({r["channels"] for r in rows}) == 1
        assert len({r["blocks"] for r in rows}) == 1

    def test_baseline_channels_increase_down_the_table(self):
        net = build_network(preset("baseline"), seed=0)
        rows = [r for r in net.describe() if r["branch"].startswith("branch")]
        chans = [r["channels"] for r in rows]
        assert chans == sorted(chans) and len(set(chans)) == len(chans)

    def test_params_column_sums_to_total(self):
        net = build_network(preset("uniform-mbconv"), seed=0)
        assert sum(r["params"] for r in net.describe()) == net.param_count()


class TestNetworkGradients:
    def test_middle_branch_weight_fd(self, rng):
        # probe along a single mid-encoder weight tensor: a full-network
        # FD step along *every* leaf at once moves tens of thousands of
        # activations and crosses a ReLU6 kink almost surely
        def make(r):
            net = build_network(small_cfg(), seed=int(r.integers(1 << 30)))
            randomize_bn_params(net.named_params(), r)
            x = leaf(r.standard_normal((2, 3, 16, 16)).astype(np.float32))
            wt = leaf(r.standard_normal((2, 5, 16, 16)).astype(np.float32))
            mids = [p for n, p in net.named_params() if n.startswith("enc1/b0") and n.endswith("/w")]
            probe = mids[int(r.integers(len(mids)))]
            return lambda: weighted_scalar(net.forward(x, training=True), wt), [probe]

        assert_gradients_match(make, rng, instances=2)


class TestCheckpoint:
    def test_round_trip_forward_bit_identical(self, tmp_path, rng):
        net = build_network(small_cfg(), seed=11)
        x = leaf(rng.random((1, 3, 32, 32)).astype(np.float32))
        net.forward(x, training=True)  # populate running stats
        before = net.forward(x, training=False).value
        p = tmp_path / "net.ckpt"
        save_checkpoint(net, p, extra={"step": 3})
        loaded, extra, state = load_checkpoint(p)
        assert extra == {"step": 3}
        after = loaded.forward(x, training=False).value
        assert np.array_equal(before, after)

    def test_save_is_deterministic(self, tmp_path):
        net = build_network(small_cfg(), seed=11)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, a)
        save_checkpoint(net, b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_file_is_reported(self, tmp_path):
        net = build_network(small_cfg(), seed=1)
        p = tmp_path / "net.ckpt"
        save_checkpoint(net, p)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_version_mismatch_distinct_error(self, tmp_path):
        import json
        import zipfile

        net = build_network(small_cfg(), seed=1)
        p = tmp_path / "net.ckpt"
        save_checkpoint(net, p)
        # rewrite the manifest with a bumped version
        with zipfile.ZipFile(p) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        manifest = json.loads(names["manifest.json"])
        manifest["format_version"] = 99
        names["manifest.json"] = json.dumps(manifest).encode()
        with zipfile.ZipFile(p, "w") as zf:
            for n, data in names.items():
                zf.writestr(n, data)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(p)

    def test_missing_tensor_distinct_error(self, tmp_path):
        import zipfile

        net = build_network(small_cfg(), seed=1)
        p = tmp_path / "net.ckpt"
        save_checkpoint(net, p)
        with zipfile.ZipFile(p) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        victim = next(n for n in names if n.startswith("tensors/") and n.endswith("/w.ten"))
        del names[victim]
        with zipfile.ZipFile(p, "w") as zf:
            for n, data in names.items():
                zf.writestr(n, data)
        with pytest.raises(MissingTensorError):
            load_checkpoint(p)

    def test_shape_mismatch_distinct_error(self, tmp_path):
        import json
        import zipfile

        net = build_network(small_cfg(), seed=1)
        p = tmp_path / "net.ckpt"
        save_checkpoint(net, p)
        with zipfile.ZipFile(p) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        # claim a different channel count in the manifest's config
        manifest = json.loads(names["manifest.json"])
        manifest["config"]["channel_schedule"] = [16, 8, 8]
        names["manifest.json"] = json.dumps(manifest).encode()
        with zipfile.ZipFile(p, "w") as zf:
            for n, data in names.items():
                zf.writestr(n, data)
        with pytest.raises(TensorShapeError):
            load_checkpoint(p)
