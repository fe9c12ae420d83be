import numpy as np
import pytest

from multistream import functional as F
from multistream._kernels import window_mask
from multistream.errors import ConfigError, DimensionError
from multistream.layers import ConvF, FactorizedFF, Linear, TimeRestrictedAttention
from multistream.tensor import Tensor

from helpers import max_rel, reference_attention


def attention(d=6, heads=2, dk=3, dv=4, stride=1, left=2, right=2, seed=0):
    return TimeRestrictedAttention(d, heads, dk, dk, dv, stride, left, right, seed=seed)


def gradcheck_module(module, x, rng, eps=1e-6, tol=1e-4):
    """Finite differences over the input and every parameter of ``module``."""
    w = rng.normal(size=module(Tensor(x)).shape)
    xt = Tensor(x.copy(), requires_grad=True)
    loss_fn = lambda: (module(xt) * w).sum()
    named = list(module.named_parameters()) + [("x", xt)]
    for _, p in named:
        p.grad = None
    loss_fn().backward()
    for name, p in named:
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn().item()
            flat[i] = orig - eps
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            assert max_rel(analytic[i], num, floor=1e-6) <= tol, name


# -- Conv-F -------------------------------------------------------------------

def test_convf_zero_factors_reduce_to_scaled_skip(rng):
    layer = ConvF(4, 2, rate=2, skip_scale=0.66, seed=0)
    layer.factor1.data[:] = 0
    layer.factor2.data[:] = 0
    x = rng.normal(size=(2, 7, 4))
    np.testing.assert_allclose(layer(Tensor(x)).data, 0.66 * x, rtol=0, atol=1e-15)


@pytest.mark.parametrize("rate", [1, 3])
def test_convf_impulse_taps_follow_rate(rate):
    layer = ConvF(1, 1, rate=rate, dropout=0.0, skip_scale=1.0, seed=0)
    layer.factor1.data[:] = 1.0
    layer.factor2.data[:] = 1.0
    layer.eval()
    layer.bn.state.update(np.zeros(1), np.ones(1) - 1e-5)  # identity batch norm
    x = np.zeros((20, 1))
    x[5] = 1.0
    out = layer(Tensor(x)).data[:, 0] - x[:, 0]
    assert list(np.flatnonzero(out)) == [5, 5 + rate, 5 + 2 * rate]
    np.testing.assert_allclose(out[[5, 5 + rate, 5 + 2 * rate]], [1, 2, 1])


@pytest.mark.parametrize("rate", [1, 2, 4])
def test_convf_preserves_length(rng, rate):
    assert ConvF(4, 2, rate=rate, seed=1)(Tensor(rng.normal(size=(3, 5, 4)))).shape == (3, 5, 4)


def test_convf_rejects_wrong_width(rng):
    with pytest.raises(DimensionError):
        ConvF(4, 2, seed=0)(Tensor(rng.normal(size=(5, 3))))


@pytest.mark.parametrize("kwargs", [{"rate": 0}, {"skip_scale": 0.0}, {"dropout": 1.0}])
def test_convf_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ConvF(4, 2, **kwargs)


def test_convf_gradcheck(rng):
    layer = ConvF(3, 2, rate=2, dropout=0.0, seed=3)
    gradcheck_module(layer, rng.normal(size=(2, 6, 3)), rng)


# -- attention ----------------------------------------------------------------

def test_attention_matches_brute_force_spec_case(rng):
    layer = attention(stride=2, left=2, right=2, seed=4)
    x = rng.normal(size=(2, 9, 6))
    np.testing.assert_allclose(layer(Tensor(x)).data, reference_attention(layer, x),
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("case", range(10))
def test_attention_matches_brute_force_random(case):
    rng = np.random.default_rng(100 + case)
    T, s = int(rng.integers(1, 17)), int(rng.integers(1, 4))
    L, R = int(rng.integers(0, 4)), int(rng.integers(0, 4))
    layer = attention(stride=s, left=L, right=R, seed=case)
    x = rng.normal(size=(1, T, 6))
    np.testing.assert_allclose(layer(Tensor(x)).data, reference_attention(layer, x),
                               rtol=0, atol=1e-12)


def test_zero_queries_give_uniform_weights(rng):
    layer = attention(stride=2, left=2, right=1)
    layer.wq.data[:] = 0
    x = rng.normal(size=(1, 8, 6))
    heads = layer.heads_output(Tensor(x)).data
    valid = window_mask(8, 2, 2, 1)
    w = layer.last_weights[0, 0]
    np.testing.assert_allclose(w[valid], (1.0 / valid.sum(axis=1))[np.nonzero(valid)[0]])
    v = x[0] @ layer.wv.data[:, :4]
    for t in range(8):
        ctx = [t + j * 2 for j in range(-2, 2) if 0 <= t + j * 2 < 8]
        np.testing.assert_allclose(heads[0, 0, t], v[ctx].mean(axis=0), atol=1e-13)


def test_zero_context_attends_to_self(rng):
    layer = attention(left=0, right=0)
    x = rng.normal(size=(1, 5, 6))
    heads = layer.heads_output(Tensor(x)).data
    np.testing.assert_allclose(heads[0, 1], x[0] @ layer.wv.data[:, 4:8], atol=1e-13)


def test_weights_sum_to_one_and_vanish_outside_window(rng):
    layer = attention(stride=3, left=3, right=2)
    layer(Tensor(rng.normal(size=(2, 13, 6))))
    w = layer.last_weights
    assert np.abs(w.sum(axis=-1) - 1).max() <= 1e-12
    assert np.all(w[..., ~window_mask(13, 3, 3, 2)] == 0)


def test_head_permutation_invariance(rng):
    layer = attention(heads=3, seed=2)
    x = rng.normal(size=(1, 7, 6))
    before = layer(Tensor(x)).data
    perm = [2, 0, 1]
    for name, width in (("wq", 3), ("wk", 3), ("wv", 4)):
        W = getattr(layer, name).data
        getattr(layer, name).data = np.concatenate([W[:, h * width:(h + 1) * width] for h in perm], axis=1)
    layer.wo.data = np.concatenate([layer.wo.data[h * 4:(h + 1) * 4] for h in perm], axis=0)
    np.testing.assert_allclose(layer(Tensor(x)).data, before, rtol=0, atol=1e-13)


def test_two_dimensional_input(rng):
    layer = attention()
    x = rng.normal(size=(6, 6))
    np.testing.assert_allclose(layer(Tensor(x)).data, layer(Tensor(x[None])).data[0], atol=0)


def test_output_projection_shape_matches_heads():
    layer = attention(heads=3, dv=5)
    assert layer.wo.shape == (15, 6)


def test_query_key_width_mismatch():
    with pytest.raises(ConfigError):
        TimeRestrictedAttention(6, 2, 3, 4, 4)


def test_attention_gradcheck(rng):
    layer = attention(d=4, heads=2, dk=2, dv=2, stride=2, left=1, right=1, seed=5)
    gradcheck_module(layer, rng.normal(size=(1, 5, 4)), rng)


# -- feed-forward -------------------------------------------------------------

def test_ff_zero_factors_give_layer_norm_of_input(rng):
    ff = FactorizedFF(5, 3, seed=0)
    ff.factor1.data[:] = 0
    ff.factor2.data[:] = 0
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(ff(Tensor(x)).data,
                               F.layer_norm(Tensor(x), ff.norm.gain, ff.norm.bias).data, atol=0)


def test_ff_cancelling_factors_give_bias_row(rng):
    ff = FactorizedFF(4, 4, seed=0)
    ff.factor1.data = np.eye(4)
    ff.factor2.data = -np.eye(4)
    ff.norm.bias.data = np.array([0.1, 0.2, 0.3, 0.4])
    out = ff(Tensor(rng.normal(size=(3, 4)))).data
    np.testing.assert_allclose(out, np.tile(ff.norm.bias.data, (3, 1)), atol=1e-15)


def test_ff_parameter_counts():
    fact = FactorizedFF(8, 3)
    plain = FactorizedFF(8, mode="plain", d_ff=5)
    assert fact.factor1.size + fact.factor2.size == 2 * 8 * 3
    assert plain.num_parameters() - 2 * 8 == 2 * 8 * 5 + 5 + 8


def test_ff_unknown_mode():
    with pytest.raises(ConfigError):
        FactorizedFF(4, 2, mode="wide")


@pytest.mark.parametrize("mode", ["factorized", "plain"])
def test_ff_gradcheck(rng, mode):
    ff = FactorizedFF(4, 2, mode=mode, d_ff=3, seed=1)
    gradcheck_module(ff, rng.normal(size=(2, 3, 4)), rng)


def test_linear_gradcheck(rng):
    gradcheck_module(Linear(3, 2, seed=0), rng.normal(size=(4, 3)), rng)


@pytest.mark.parametrize("layer", [ConvF(4, 2, rate=3, seed=0), attention(d=4, heads=1, dk=2, dv=2, stride=3),
                                   FactorizedFF(4, 2, seed=0)])
@pytest.mark.parametrize("T", [2, 5, 11])
def test_layers_preserve_length(rng, layer, T):
    assert layer(Tensor(rng.normal(size=(2, T, 4)))).shape == (2, T, 4)
