import numpy as np
import pytest

from multistream import functional as F
from multistream.errors import ConfigError, DimensionError
from multistream.gradcheck import finite_diff_check
from multistream.model import (BlockConfig, FinalProjection, ModelConfig, MultiStreamBlock,
                               MultiStreamEncoder, StreamConfig, StreamEncoder, best_model_config,
                               enumerate_params, param_count, projection_seed, stream_seed)
from multistream.tensor import Tensor

from helpers import random_config

SMALL = dict(d_model=8, d_q=2, d_k=2, d_v=3, bottleneck=4)


@pytest.mark.parametrize("case", range(50))
def test_param_count_matches_enumeration(case):
    cfg = random_config(np.random.default_rng(case))
    model = MultiStreamEncoder(cfg)
    counted = param_count(cfg)
    assert counted.total == enumerate_params(model)
    assert sum(counted.by_kind.values()) == counted.total


def test_factorized_ff_count_at_full_width():
    cfg = ModelConfig.uniform(1, [1], head_budget=1, conv_layers=0)
    ff = param_count(cfg).components["blocks.0.streams.0.feed_forward"]
    assert ff - 2 * 256 == 2 * 256 * 128 == 65_536


def test_table_three_delta_is_exact():
    def total(mode, d_ff):
        return param_count(ModelConfig.uniform(1, [1, 2, 3, 4, 5], conv_layers=7, ff_mode=mode,
                                               d_ff=d_ff, input_dim=140, num_classes=6000)).total
    assert total("plain", 2048) - total("plain", 1024) == 5 * (2 * 256 * 1024 + 1024)


def test_zero_blocks_count_only_affines():
    cfg = ModelConfig(blocks=[], input_dim=7, num_classes=5, d_model=4)
    pc = param_count(cfg)
    assert pc.total == (7 * 4 + 4) + (4 * 5 + 5) == enumerate_params(MultiStreamEncoder(cfg))
    assert MultiStreamEncoder(cfg)(np.ones((3, 7))).shape == (3, 5)


def test_best_model_builds_and_counts():
    cfg = best_model_config()
    assert len(cfg.blocks) == 3
    assert [s.rate for s in cfg.blocks[0].streams] == [1, 2, 3, 4, 5]
    assert all(s.heads == 3 and s.conv_layers == 7 for b in cfg.blocks for s in b.streams)
    assert abs(param_count(cfg).total - 23e6) <= 0.15 * 23e6


def test_head_budget_split():
    block = BlockConfig.from_budget([1, 2, 3], head_budget=15)
    assert [s.heads for s in block.streams] == [5, 5, 5]
    with pytest.raises(ConfigError):
        BlockConfig.from_budget([1, 2, 3, 4], head_budget=15)


def test_blocks_must_share_width():
    a = BlockConfig.from_budget([1], 1, d_model=8)
    b = BlockConfig.from_budget([1], 1, d_model=16)
    with pytest.raises(ConfigError):
        ModelConfig(blocks=[a, b])


def test_config_round_trip():
    cfg = ModelConfig.uniform(2, [1, 3], head_budget=4, context=(2, 1), input_dim=5, num_classes=3,
                              seed=7, **SMALL)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_no_conv_stream_has_no_conv_layers():
    stream = StreamEncoder(StreamConfig(conv_layers=0, heads=1), BlockConfig.from_budget([1], 1, **SMALL))
    assert stream.convs == []


def test_single_frame_stream(rng):
    block = BlockConfig.from_budget([2], 1, **SMALL)
    out = StreamEncoder(block.streams[0], block, seed=0)(Tensor(rng.normal(size=(1, 1, 8))))
    assert out.shape == (1, 1, 8) and np.all(np.isfinite(out.data))


def test_single_stream_block_equals_direct_composition(rng):
    block_cfg = BlockConfig.from_budget([1], 2, conv_layers=2, context=(2, 2), **SMALL)
    x = rng.normal(size=(2, 9, 8))
    block = MultiStreamBlock(block_cfg, seed=11)
    stream = StreamEncoder(block_cfg.streams[0], block_cfg, seed=stream_seed(11, 0))
    final = FinalProjection(1, 8, block_cfg.dropout, seed=projection_seed(11))
    np.testing.assert_array_equal(block(Tensor(x)).data, final(stream(Tensor(x))).data)


def test_dilations_one_two_three_block_runs(rng):
    block = MultiStreamBlock(BlockConfig.from_budget([1, 2, 3], 15, conv_layers=1, **SMALL), seed=0)
    assert [s.attention.heads for s in block.streams] == [5, 5, 5]
    assert block(Tensor(rng.normal(size=(1, 10, 8)))).shape == (1, 10, 8)


def _twin_block(dropout=0.0):
    cfg = BlockConfig.from_budget([2, 2], 2, conv_layers=1, dropout=dropout, **SMALL)
    block = MultiStreamBlock(cfg, seed=3)
    block.streams[1].load_state_dict(block.streams[0].state_dict())
    return block


def test_duplicate_streams_give_identical_halves(rng):
    block = _twin_block()
    a, b = block.stream_outputs(Tensor(rng.normal(size=(2, 6, 8))))
    np.testing.assert_array_equal(a.data, b.data)


def test_stream_permutation_with_projection_permutation(rng):
    cfg = BlockConfig.from_budget([1, 3], 2, conv_layers=1, dropout=0.0, **SMALL)
    block = MultiStreamBlock(cfg, seed=5)
    x = rng.normal(size=(2, 7, 8))
    before = block(Tensor(x)).data
    block.streams.reverse()
    W = block.final.weight.data
    block.final.weight.data = np.concatenate([W[8:], W[:8]], axis=0)
    block.final.bn.state = F.BatchNormState(8)
    # same terms, different summation order inside the projection
    np.testing.assert_allclose(block(Tensor(x)).data, before, rtol=0, atol=1e-12)


def test_forward_shapes_and_dimension_check(rng):
    cfg = ModelConfig.uniform(1, [1, 2], head_budget=2, conv_layers=1, input_dim=5, num_classes=3, **SMALL)
    model = MultiStreamEncoder(cfg)
    assert model(rng.normal(size=(13, 5))).shape == (13, 3)
    assert model(rng.normal(size=(2, 4, 5))).shape == (2, 4, 3)
    with pytest.raises(DimensionError):
        model(rng.normal(size=(4, 6)))


def test_zero_weights_and_input_give_uniform_distribution():
    cfg = ModelConfig.uniform(1, [1, 2], head_budget=2, conv_layers=1, input_dim=4, num_classes=6, **SMALL)
    model = MultiStreamEncoder(cfg)
    for p in model.parameters():
        p.data[:] = 0
    probs = F.softmax_rows(model(np.zeros((5, 4)))).data
    np.testing.assert_allclose(probs, 1 / 6, rtol=0, atol=1e-15)


def test_identical_seed_identical_outputs(rng):
    cfg = ModelConfig.uniform(2, [1, 2], head_budget=2, conv_layers=1, input_dim=4, num_classes=3, **SMALL)
    x = rng.normal(size=(2, 9, 4))
    a, b = MultiStreamEncoder(cfg), MultiStreamEncoder(cfg)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    np.testing.assert_array_equal(a(x).data, b(x).data)


def test_parameter_names_are_unique_and_set():
    model = MultiStreamEncoder(ModelConfig.uniform(2, [1, 2], head_budget=2, **SMALL))
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert all(p.name == n for n, p in model.named_parameters())


def test_end_to_end_gradcheck(rng):
    cfg = ModelConfig.uniform(1, [1, 2], head_budget=2, conv_layers=1, context=(2, 2), input_dim=3,
                              num_classes=3, d_model=16, d_q=2, d_k=2, d_v=2, bottleneck=4)
    model = MultiStreamEncoder(cfg)
    feats = rng.normal(size=(1, 7, 3))
    labels = rng.integers(0, 3, size=(1, 7))
    drops = [m for m in model.modules() if type(m).__name__ == "Dropout"]

    def loss():
        for i, m in enumerate(drops):
            m.rng = np.random.default_rng(i)
        return F.cross_entropy(model(feats), labels, reduction="sum")

    report = finite_diff_check(loss, model.named_parameters(), max_coords=6)
    assert report.passed, report.format_table()
    assert len(report.entries) == len(model.parameters())
