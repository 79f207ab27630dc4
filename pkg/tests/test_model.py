import numpy as np
import pytest
from conftest import random_adjacency

from cugcn import numkernel as nk
from cugcn.errors import DomainError, FormatError, ParameterError, ShapeError
from cugcn.graph import Graph, normalize_batch, normalize_sym
from cugcn.model import (
    CuGcnModel,
    ModelConfig,
    classification_loss,
    classify,
    gcn_layer,
    gpr_readout,
    load_checkpoint,
    masked_gcn_layer,
    ppr_weights,
    save_checkpoint,
    sgc_forward,
    soft_cross_entropy,
    total_loss,
)
from cugcn.uncertainty import EXPECTED, STOCHASTIC, MaskSample


def _setup(rng, n=9, f=4, h=5, batch=3):
    adj = np.stack([random_adjacency(rng, n) for _ in range(batch)])
    return normalize_batch(adj), rng.standard_normal((batch, n, f)), rng.standard_normal((f, h))


def test_all_ones_mask_equals_plain_layer(rng):
    props, x, w = _setup(rng)
    ones = MaskSample(nk.Tensor(np.ones((9, 9))), nk.Tensor(np.ones((9, 4))), EXPECTED)
    ref = gcn_layer(props, x, w).data
    np.testing.assert_allclose(masked_gcn_layer(props, ones, x, w).data, ref, atol=1e-10)
    np.testing.assert_allclose(masked_gcn_layer(props, np.ones((3, 9, 9, 4)), x, w).data, ref, atol=1e-10)


def test_all_ones_mask_stack_equals_vanilla_stack(rng):
    props, x, _ = _setup(rng)
    ws = [rng.standard_normal((4, 6)), rng.standard_normal((6, 6)), rng.standard_normal((6, 6))]
    h_plain, h_mask = x, x
    for w in ws:
        ones = MaskSample(nk.Tensor(np.ones((9, 9))), nk.Tensor(np.ones((9, w.shape[0]))), EXPECTED)
        h_plain = gcn_layer(props, h_plain, w)
        h_mask = masked_gcn_layer(props, ones, h_mask, w)
    np.testing.assert_allclose(h_mask.data, h_plain.data, atol=1e-10)


def test_dense_and_factorised_masks_agree(rng):
    props, x, w = _setup(rng)
    pair = rng.random((3, 9, 9))
    pair = 0.5 * (pair + np.swapaxes(pair, 1, 2))
    feat = rng.random((3, 9, 4))
    sample = MaskSample(nk.Tensor(pair), nk.Tensor(feat), STOCHASTIC)
    np.testing.assert_allclose(
        masked_gcn_layer(props, sample, x, w).data,
        masked_gcn_layer(props, sample.dense(), x, w).data,
        atol=1e-12,
    )
    # entry-wise definition for one node/output
    u, j = 2, 1
    agg = sum(props[0, u, v] * pair[0, u, v] * feat[0, v, i] * x[0, v, i] * w[i, j]
              for v in range(9) for i in range(4))
    assert masked_gcn_layer(props, sample, x, w).data[0, u, j] == pytest.approx(max(agg, 0.0))


def test_gpr_unit_weight_selects_first_layer(rng):
    outs = [rng.standard_normal((3, 9, 5)) for _ in range(4)]
    np.testing.assert_allclose(gpr_readout(outs, [1.0, 0.0, 0.0, 0.0]).data, outs[0], atol=1e-10)
    alpha = rng.standard_normal(4)
    np.testing.assert_allclose(gpr_readout(outs, alpha).data, sum(a * o for a, o in zip(alpha, outs)), atol=1e-12)
    with pytest.raises(ShapeError):
        gpr_readout(outs, [1.0, 0.0])


def test_gpr_readout_through_model_first_layer(rng):
    props, x, _ = _setup(rng)
    model = CuGcnModel(ModelConfig(n_features=4, n_nodes=9, depth=3, hidden_dim=5, mask_mode="off"), seed=1)
    model.alpha.data[:] = [1.0, 0.0, 0.0]
    outs = model.node_layers(props, x)
    pooled = outs[0].data.mean(axis=1) @ model.head.data
    np.testing.assert_allclose(model.logits(props, x).data, pooled, atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_sgc_equals_explicit_propagation(rng, k):
    props, x, _ = _setup(rng)
    w = rng.standard_normal((4, 3))
    ref = np.stack([np.linalg.matrix_power(p, k) @ xi @ w for p, xi in zip(props, x)])
    np.testing.assert_allclose(sgc_forward(props, x, k, w).data, ref, atol=1e-10)
    with pytest.raises(ParameterError):
        sgc_forward(props, x, 0, w)


def test_ppr_weights():
    np.testing.assert_allclose(ppr_weights(4, 0.1), [0.1, 0.09, 0.081, 0.0729])


def test_classification_loss_values_and_mixup_linearity():
    p = np.array([0.7, 0.2, 0.1])
    assert classification_loss(p, [1, 0, 0]) == pytest.approx(-np.log(0.7))
    yi, yj, beta = np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), 0.3
    mixed = classification_loss(p, beta * yi + (1 - beta) * yj)
    assert mixed == pytest.approx(beta * classification_loss(p, yi) + (1 - beta) * classification_loss(p, yj))
    assert classification_loss(np.array([1.0, 0.0, 0.0]), [0, 1, 0]) == pytest.approx(-np.log(1e-9))
    with pytest.raises(DomainError):
        classification_loss(p, [0.5, 0.6, 0.0])
    with pytest.raises(DomainError):
        classification_loss(np.array([0.5, 0.6, 0.1]), [1, 0, 0])


def test_soft_cross_entropy_matches_numpy(rng):
    lg = rng.standard_normal((4, 3))
    y = rng.dirichlet(np.ones(3), size=4)
    lp = lg - np.log(np.exp(lg).sum(axis=1, keepdims=True))
    got = soft_cross_entropy(nk.log_softmax(nk.Tensor(lg), axis=-1), y).item()
    assert got == pytest.approx(-(y * lp).sum(axis=1).mean())


def test_total_loss():
    assert total_loss(1.5, 0.5, 2.0) == pytest.approx(2.5)
    with pytest.raises(ParameterError):
        total_loss(1.0, 1.0, -1.0)


def test_model_parameters_per_variant():
    cu = CuGcnModel(ModelConfig(n_features=5, n_nodes=8, depth=3, hidden_dim=4), seed=0)
    names = set(cu.parameters())
    assert {"layer0.weight", "layer2.weight", "head.weight", "gpr_alpha", "layer1.pair_logits"} <= names
    fixed = CuGcnModel(ModelConfig(n_features=5, n_nodes=8, mask_mode="fixed", fixed_p=0.3), seed=0)
    assert not any("logits" in k for k in fixed.parameters())
    np.testing.assert_allclose(fixed.masks[0].pair_probs().data, 0.3)
    vg = CuGcnModel(ModelConfig(n_features=5, variant="vgcn"), seed=0)
    assert vg.alpha is None and not vg.masks and vg.edge_loss().item() == 0.0
    sgc = CuGcnModel(ModelConfig(n_features=5, variant="sgc"), seed=0)
    assert list(sgc.parameters()) == ["sgc.weight"]
    with pytest.raises(ParameterError):
        ModelConfig(n_features=5, variant="gat")
    with pytest.raises(ParameterError):
        ModelConfig(n_features=5, fixed_p=1.0)


def test_model_is_seed_deterministic(rng):
    props, x, _ = _setup(rng, n=8)
    cfg = ModelConfig(n_features=4, n_nodes=8, depth=2, hidden_dim=6)
    a, b = CuGcnModel(cfg, seed=3), CuGcnModel(cfg, seed=3)
    np.testing.assert_array_equal(a.predict_proba(props, x), b.predict_proba(props, x))
    la = a.logits(props, x, mode=STOCHASTIC, seed=1, step=2).data
    lb = b.logits(props, x, mode=STOCHASTIC, seed=1, step=2).data
    np.testing.assert_array_equal(la, lb)
    probs = a.predict_proba(props, x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_input_shape_checks(rng):
    props, x, _ = _setup(rng, n=8)
    model = CuGcnModel(ModelConfig(n_features=3, n_nodes=8), seed=0)
    with pytest.raises(ShapeError):
        model.predict_proba(props, x)
    model = CuGcnModel(ModelConfig(n_features=4, n_nodes=10), seed=0)
    with pytest.raises(ShapeError):
        model.predict_proba(props, x)


def test_classify_single_graph(rng):
    a = random_adjacency(rng, 8)
    x = rng.standard_normal((8, 4))
    model = CuGcnModel(ModelConfig(n_features=4, n_nodes=8), seed=0)
    single = classify(model, Graph(a, x))
    batched = model.predict_proba(normalize_sym(a).matrix[None], x[None])[0]
    np.testing.assert_allclose(single, batched, atol=1e-12)


def test_composite_model_gradient(rng):
    props, x, _ = _setup(rng, n=6)
    model = CuGcnModel(ModelConfig(n_features=4, n_nodes=6, depth=2, hidden_dim=3, mask_init_p=0.6), seed=2)
    y = np.eye(3)[[0, 2, 1]]

    def loss():
        lp = model.log_probs(props, x, mode=STOCHASTIC, seed=0, step=0)
        return total_loss(soft_cross_entropy(lp, y), model.edge_loss(), 0.1)

    assert nk.gradcheck(loss, model.parameters()) < 1e-4


def test_checkpoint_roundtrip(tmp_path, rng):
    props, x, _ = _setup(rng, n=8)
    model = CuGcnModel(ModelConfig(n_features=4, n_nodes=8, depth=2, hidden_dim=6), seed=4)
    model.alpha.data[:] = [0.3, 0.7]
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, model, extra={"note": "x"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "x"} and loaded.seed == 4 and loaded.config == model.config
    np.testing.assert_array_equal(loaded.predict_proba(props, x), model.predict_proba(props, x))


def test_checkpoint_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    other = tmp_path / "other.npz"
    np.savez(other, a=np.zeros(2))
    with pytest.raises(FormatError):
        load_checkpoint(other)
