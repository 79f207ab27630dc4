import math

import numpy as np
import pytest

from cugcn import numkernel as nk
from cugcn.data import generate_synthetic, make_split
from cugcn.errors import DivergenceError, ParameterError
from cugcn.graph import normalize_batch
from cugcn.model import CuGcnModel, ModelConfig
from cugcn.train import (
    CONTINUE,
    STOP,
    TrainConfig,
    TrainState,
    adam_update,
    clip_global_norm,
    cosine_lr,
    early_stop_check,
    fit,
    predict,
)


@pytest.fixture(scope="module")
def small():
    ds = generate_synthetic(samples_per_class=12, seed=1).with_adjacency("dist", sigma=0.85)
    return ds, make_split(ds, seed=0)


def _model(ds, **kw):
    return CuGcnModel(ModelConfig(n_features=ds.n_features, n_nodes=ds.n_nodes, hidden_dim=8, **kw), seed=0)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 0.01) == pytest.approx(0.01)
    assert cosine_lr(50, 100, 0.01) == pytest.approx(0.005)
    assert cosine_lr(100, 100, 0.01) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(25, 100, 0.01) == pytest.approx(0.005 * (1 + math.cos(math.pi / 4)))
    with pytest.raises(ParameterError):
        cosine_lr(101, 100, 0.01)


def test_early_stopping_counts_non_improving_epochs():
    state = TrainState()
    verdicts = [early_stop_check(state, v, patience=2) for v in (1.0, 0.9, 0.9, 0.95)]
    assert verdicts == [CONTINUE, CONTINUE, CONTINUE, STOP]
    assert state.best_val_loss == 0.9
    with pytest.raises(ParameterError):
        early_stop_check(state, float("nan"))


def test_adam_first_step_is_signed_lr():
    p = nk.parameter([1.0, -2.0, 0.5])
    state = TrainState(step=1)
    adam_update({"p": p}, {"p": np.array([0.3, -4.0, 0.0])}, state, lr=0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9, 0.5], atol=1e-6)


def test_adam_matches_reference_recursion():
    g_seq = [np.array([0.5]), np.array([-1.0]), np.array([2.0])]
    p = nk.parameter([0.0])
    state = TrainState()
    m = v = 0.0
    ref = 0.0
    for t, g in enumerate(g_seq, start=1):
        state.step = t
        adam_update({"p": p}, {"p": g}, state, lr=0.01)
        m = 0.9 * m + 0.1 * g[0]
        v = 0.999 * v + 0.001 * g[0] ** 2
        ref -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p.data[0] == pytest.approx(ref, rel=1e-12)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert clipped["a"][0] == pytest.approx(0.6) and clipped["b"][0] == pytest.approx(0.8)
    same, _ = clip_global_norm(grads, 10.0)
    assert same["a"][0] == 3.0


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(lr_init=0.1)
    with pytest.raises(ParameterError):
        TrainConfig(batch_size=0)


def test_fit_history_and_restores_best(small):
    ds, sp = small
    model, hist = fit(_model(ds), ds, sp, TrainConfig(epochs=6, batch_size=8, early_stop_patience=3))
    assert 1 <= len(hist) <= 6
    assert set(hist.records[0]) == {"epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"}
    lrs = hist.column("lr")
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    probs = predict(model, normalize_batch(ds.adjacency[sp.val]), ds.features[sp.val])
    val_loss = -np.mean(np.log(probs[np.arange(sp.val.size), ds.labels[sp.val]]))
    assert val_loss == pytest.approx(min(hist.column("val_loss")), rel=1e-12)
    assert hist.column("val_loss")[hist.best_epoch] == min(hist.column("val_loss"))


def test_fit_is_deterministic(small):
    ds, sp = small
    cfg = TrainConfig(epochs=3, batch_size=8, seed=4)
    _, h1 = fit(_model(ds), ds, sp, cfg)
    _, h2 = fit(_model(ds), ds, sp, cfg)
    assert h1.records == h2.records


@pytest.mark.parametrize("variant,mode", [("vgcn", "off"), ("sgc", "off"), ("cugcn", "fixed")])
def test_fit_runs_for_every_variant(small, variant, mode):
    ds, sp = small
    _, hist = fit(_model(ds, variant=variant, mask_mode=mode), ds, sp, TrainConfig(epochs=2, batch_size=8, mixup=False))
    assert len(hist) == 2


def test_fit_rejects_oversized_batch(small):
    ds, sp = small
    with pytest.raises(ParameterError):
        fit(_model(ds), ds, sp, TrainConfig(batch_size=sp.train.size + 1))


def test_divergence_carries_snapshot(small):
    ds, sp = small
    bad = ds.subset(np.arange(len(ds)))
    bad.features = bad.features.copy()
    bad.features[sp.train[0], 0, 0] = np.nan
    with pytest.raises(DivergenceError) as err:
        fit(_model(bad), bad, sp, TrainConfig(epochs=2, batch_size=len(sp.train), mixup=False))
    assert err.value.snapshot["epoch"] == 0
    assert "head.weight" in err.value.snapshot["param_norms"]
