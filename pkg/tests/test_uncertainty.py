import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cugcn import numkernel as nk
from cugcn.uncertainty import (
    EXPECTED,
    LOGIT_CLAMP,
    STOCHASTIC,
    MaskParams,
    bernoulli_entropy,
    concrete_from_logits,
    concrete_limit,
    concrete_sample,
    edge_predictor_loss,
    entropy_fixed_point_steps,
    logit,
    mask_rng,
    sample_mask,
)


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_concrete_sample_reference_value():
    ref = _sigmoid((math.log(0.9 / 0.1) + math.log(0.5 / 0.5)) / 0.67)
    assert concrete_sample(0.9, 0.5, 0.67) == pytest.approx(ref, abs=1e-12)
    assert concrete_sample(0.9, 0.5, 0.67) == pytest.approx(0.9637, abs=1e-4)


def test_concrete_sample_clamps_and_validates():
    assert 0.0 < concrete_sample(1.0, 0.0, 0.67) < 1.0
    with pytest.raises(ValueError):
        concrete_sample(0.5, 0.5, 0.0)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_concrete_zero_temperature_limit(p, eps):
    z = math.log(p / (1 - p)) + math.log(eps / (1 - eps))
    if abs(z) > 1e-3:
        assert concrete_sample(p, eps, 1e-4) == pytest.approx(concrete_limit(p, eps), abs=1e-6)


def test_entropy_values():
    assert bernoulli_entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert bernoulli_entropy(0.0) == 0.0
    assert bernoulli_entropy(1.0) == 0.0
    p = 0.2
    assert bernoulli_entropy(p) == pytest.approx(-(p * math.log(p) + (1 - p) * math.log(1 - p)))
    t = bernoulli_entropy(nk.Tensor([0.2, 0.5]))
    np.testing.assert_allclose(t.data, bernoulli_entropy(np.array([0.2, 0.5])))


def test_edge_predictor_single_term():
    loss = edge_predictor_loss([(0.5, np.array([[2.0]]))])
    assert loss.item() == pytest.approx(0.5 / 2 * 4 - math.log(2), abs=1e-12)
    assert loss.item() == pytest.approx(0.306853, abs=1e-6)


def test_edge_predictor_sum_and_mean_reductions():
    p = np.array([0.2, 0.7, 0.9])
    m = np.array([[1.0, -1.0], [0.5, 0.0]])
    n2 = float(np.sum(m**2))
    per = (1 - p) / 2 * n2 - bernoulli_entropy(p)
    assert edge_predictor_loss([(p, m)]).item() == pytest.approx(per.sum())
    assert edge_predictor_loss([(p, m)], reduction="mean").item() == pytest.approx(per.mean())
    two = edge_predictor_loss([(p, m), (p, 2 * m)]).item()
    assert two == pytest.approx(per.sum() + ((1 - p) / 2 * 4 * n2 - bernoulli_entropy(p)).sum())
    with pytest.raises(ValueError):
        edge_predictor_loss([(p, m)], reduction="max")


def test_edge_predictor_gradient(rng):
    p = nk.parameter(rng.uniform(0.1, 0.9, (4, 3)))
    m = nk.parameter(rng.standard_normal((3, 2)))
    assert nk.gradcheck(lambda: edge_predictor_loss([(p, m)]), [p, m]) < 1e-6


@pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_hard_threshold_mean_matches_p(p):
    eps = np.random.default_rng([7, int(p * 10)]).random(100_000)
    hard = concrete_sample(np.full(eps.shape, p), eps, 0.1) > 0.5
    assert abs(hard.mean() - p) < 0.02


def test_entropy_only_descent_reaches_half():
    p0 = np.array([0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98])
    p = entropy_fixed_point_steps(p0, steps=200)
    assert np.all(np.abs(p - 0.5) < 0.01)


def test_mask_params_init_and_clamp():
    m = MaskParams.init(5, 3, p=0.9)
    np.testing.assert_allclose(m.pair_probs().data, 0.9)
    np.testing.assert_allclose(m.feat_probs().data, 0.9)
    m.pair_logits.data[0, 1] = 50.0
    m.feat_logits.data[2, 2] = -50.0
    m.clamp_()
    assert np.all(np.abs(m.pair_logits.data) <= LOGIT_CLAMP)
    np.testing.assert_array_equal(m.pair_logits.data, m.pair_logits.data.T)
    assert m.feat_logits.data[2, 2] == -LOGIT_CLAMP
    fixed = MaskParams.init(5, 3, p=0.3, trainable=False)
    assert not fixed.trainable
    assert logit(0.3) == pytest.approx(math.log(0.3 / 0.7))


def test_sample_mask_modes():
    params = MaskParams.init(6, 4, p=0.7)
    params.pair_logits.data += np.random.default_rng(0).standard_normal((6, 6))
    exp = sample_mask(params, EXPECTED)
    np.testing.assert_allclose(exp.pair.data, params.pair_probs().data)
    a = sample_mask(params, STOCHASTIC, 0.67, rng=(1, 0, 3), batch=2)
    b = sample_mask(params, STOCHASTIC, 0.67, rng=mask_rng(1, 0, 3), batch=2)
    c = sample_mask(params, STOCHASTIC, 0.67, rng=(1, 0, 4), batch=2)
    np.testing.assert_array_equal(a.pair.data, b.pair.data)
    assert not np.array_equal(a.pair.data, c.pair.data)
    assert a.pair.shape == (2, 6, 6) and a.feat.shape == (2, 6, 4)
    np.testing.assert_allclose(a.pair.data, np.swapaxes(a.pair.data, 1, 2))
    assert a.dense().shape == (2, 6, 6, 4)
    dense = a.dense()
    assert dense[1, 2, 3, 0] == pytest.approx(a.pair.data[1, 2, 3] * a.feat.data[1, 3, 0])
    with pytest.raises(ValueError):
        sample_mask(params, STOCHASTIC, 0.67)
    with pytest.raises(ValueError):
        sample_mask(params, "sometimes")


def test_concrete_from_logits_matches_scalar_form(rng):
    lg = rng.standard_normal(10)
    eps = rng.random(10)
    t = concrete_from_logits(nk.Tensor(lg), eps, 0.5).data
    ref = [concrete_sample(_sigmoid(a), e, 0.5) for a, e in zip(lg, eps)]
    np.testing.assert_allclose(t, ref, atol=1e-12)
