"""Experiment runners: evaluation reports, depth sweeps, ablations, filter curves, gradient suite."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numkernel as nk
from .augment import mixup_batch
from .data import generate_synthetic, make_split
from .errors import ParameterError
from .graph import build_random_adjacency, gpr_filter_response, normalize_batch
from .model import (
    CuGcnModel,
    ModelConfig,
    gcn_layer,
    gpr_readout,
    masked_gcn_layer,
    sgc_forward,
    soft_cross_entropy,
)
from .train import TrainConfig, fit, predict, training_objective
from .uncertainty import STOCHASTIC, MaskParams, bernoulli_entropy, edge_predictor_loss, sample_mask

# Gaussian kernel width (grid units) of the benchmark's distance graph.
BENCHMARK_SIGMA = 0.85
FIXED_P_GRID = (0.3, 0.5, 0.7, 0.9)
SWEEP_VARIANTS = ("vgcn", "sgc", "cugcn", "cugcn-noep")
SWEEP_DEPTHS = (2, 4, 6, 8)
ADJACENCY_TOGGLES = ("adjacency=dist", "adjacency=coh", "adjacency=random")

# name -> (variant, mask_mode)
MODEL_PRESETS = {
    "vgcn": ("vgcn", "off"),
    "sgc": ("sgc", "off"),
    "cugcn": ("cugcn", "adaptive"),
    "cugcn-noep": ("cugcn", "off"),
}


def benchmark_dataset(label_noise_rate=0.0, seed=0, adjacency="dist", **overrides):
    """The frozen synthetic benchmark: C=3, 62 nodes, 5 bands, 300 samples."""
    ds = generate_synthetic(label_noise_rate=label_noise_rate, seed=seed, **overrides)
    return ds.with_adjacency(adjacency, sigma=BENCHMARK_SIGMA, seed=seed)


def model_config_for(preset, dataset, depth=2, **kw):
    if preset not in MODEL_PRESETS:
        raise ParameterError(f"unknown model preset {preset!r}; choose from {tuple(MODEL_PRESETS)}")
    variant, mask_mode = MODEL_PRESETS[preset]
    kw.setdefault("mask_mode", mask_mode)
    return ModelConfig(
        n_features=dataset.n_features,
        n_nodes=dataset.n_nodes,
        n_classes=dataset.n_classes,
        depth=depth,
        variant=variant,
        **kw,
    )


# ------------------------------------------------------------------ reports


@dataclass
class RunReport:
    accuracy: float
    accuracy_mean: float
    accuracy_std: float
    group_by: str
    group_accuracy: dict
    confusion_matrix: list
    precision: list
    recall: list
    class_names: list
    n_test: int
    seed: int = None
    config: dict = field(default_factory=dict)
    accuracy_true_labels: float = None
    wall_clock: float = None

    def to_dict(self):
        d = asdict(self)
        if d["wall_clock"] is None:
            del d["wall_clock"]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def check(self):
        """Raise if the confusion-matrix identities do not hold."""
        cm = np.asarray(self.confusion_matrix)
        if cm.sum() != self.n_test:
            raise ValueError("confusion matrix total differs from the test count")
        if not np.isclose(np.trace(cm) / max(self.n_test, 1), self.accuracy, rtol=0, atol=1e-12):
            raise ValueError("accuracy differs from trace / total")
        return True


def confusion_matrix(y_true, y_pred, n_classes):
    """Counts with rows indexed by the true class and columns by the prediction."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def precision_recall(cm):
    """Per-class precision and recall; an empty denominator gives 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    return precision, recall


def report_from_predictions(y_true, y_pred, class_names, groups=None, group_by="subject",
                            seed=None, config=None, y_clean=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ParameterError("cannot evaluate an empty test split")
    C = len(class_names)
    cm = confusion_matrix(y_true, y_pred, C)
    precision, recall = precision_recall(cm)
    correct = y_pred == y_true
    groups = np.zeros_like(y_true) if groups is None else np.asarray(groups)
    group_acc = {str(g): float(np.mean(correct[groups == g])) for g in np.unique(groups)}
    per = np.array(list(group_acc.values()))
    return RunReport(
        accuracy=float(np.trace(cm) / y_true.size),
        accuracy_mean=float(per.mean()),
        accuracy_std=float(per.std()),
        group_by=group_by,
        group_accuracy=group_acc,
        confusion_matrix=cm.tolist(),
        precision=[float(v) for v in precision],
        recall=[float(v) for v in recall],
        class_names=list(class_names),
        n_test=int(y_true.size),
        seed=seed,
        config=config or {},
        accuracy_true_labels=None if y_clean is None else float(np.mean(y_pred == np.asarray(y_clean))),
    )


def evaluate(model, dataset, split, config=None, seed=None):
    """Expected-mode inference on ``split.test``; accuracy mean/std is taken across subjects."""
    idx = np.asarray(split.test, dtype=np.int64)
    if idx.size == 0:
        raise ParameterError("cannot evaluate an empty test split")
    probs = predict(model, normalize_batch(dataset.adjacency[idx]), dataset.features[idx])
    return report_from_predictions(
        dataset.labels[idx],
        np.argmax(probs, axis=1),
        dataset.class_names,
        groups=dataset.subject_ids[idx],
        seed=seed,
        config=config,
        y_clean=dataset.true_labels[idx],
    )


def train_and_evaluate(dataset, split, model_config, train_config, log=None, record_time=False):
    """One seeded cell: build, fit, evaluate. Returns ``(model, history, report)``."""
    start = time.perf_counter()
    model = CuGcnModel(model_config, seed=train_config.seed)
    model, history = fit(model, dataset, split, train_config, log=log)
    echo = {"model": asdict(model_config), "train": asdict(train_config), "split": split.protocol,
            "dataset": _json_safe(dataset.meta)}
    report = evaluate(model, dataset, split, config=echo, seed=train_config.seed)
    if record_time:
        report.wall_clock = time.perf_counter() - start
    return model, history, report


def _json_safe(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def _summary(accs):
    a = np.asarray(accs, dtype=np.float64)
    return float(a.mean()), float(a.std())


# ------------------------------------------------------------------ sweeps


def depth_sweep(dataset, split, variants=SWEEP_VARIANTS, depths=SWEEP_DEPTHS, seeds=(0, 1, 2),
                train_config=None, hidden_dim=32, log=None):
    """Mean/std test accuracy for every (variant, depth) cell over ``seeds``."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ParameterError("depth_sweep needs at least 3 seeds")
    base = train_config or TrainConfig()
    rows = []
    for variant in variants:
        for depth in depths:
            accs = []
            for s in seeds:
                mc = model_config_for(variant, dataset, depth=depth, hidden_dim=hidden_dim)
                _, _, rep = train_and_evaluate(dataset, split, mc, replace(base, seed=s))
                accs.append(rep.accuracy)
            mean, std = _summary(accs)
            row = {"variant": variant, "depth": int(depth), "mean": mean, "std": std,
                   "accuracies": accs, "seeds": seeds}
            rows.append(row)
            if log is not None:
                log(row)
    return rows


def parse_toggle(toggle):
    """``full``, ``no-mixup``, ``fixed-p=<p>``, ``adjacency=<kind>`` or ``variant=<preset>``."""
    if toggle in ("full", "no-mixup"):
        return toggle, None
    key, sep, value = toggle.partition("=")
    if not sep or key not in ("fixed-p", "adjacency", "variant"):
        raise ParameterError(f"unknown ablation toggle {toggle!r}")
    if key == "fixed-p":
        p = float(value)
        if not 0.0 < p < 1.0:
            raise ParameterError(f"fixed-p must lie in (0, 1), got {p}")
        return key, p
    if key == "adjacency" and value not in ("dist", "coh", "random"):
        raise ParameterError(f"unknown adjacency kind {value!r}")
    if key == "variant" and value not in MODEL_PRESETS:
        raise ParameterError(f"unknown variant {value!r}")
    return key, value


def ablation_run(dataset, split, toggles, seeds=(0, 1, 2, 3, 4), train_config=None, depth=2,
                 hidden_dim=32, log=None):
    """Per-toggle accuracy beside the full model, all under identical seeds.

    The full model (adaptive-mask CU-GCN with mixup) is always the first row.
    """
    for t in toggles:
        parse_toggle(t)
    base = train_config or TrainConfig()
    order = ["full"] + [t for t in toggles if t != "full"]
    rows = []
    for toggle in order:
        key, value = parse_toggle(toggle)
        ds = dataset
        tc = base
        mkw = {}
        preset = "cugcn"
        if key == "no-mixup":
            tc = replace(base, mixup=False)
        elif key == "fixed-p":
            mkw = {"mask_mode": "fixed", "fixed_p": value}
        elif key == "adjacency":
            ds = dataset.with_adjacency(value, sigma=BENCHMARK_SIGMA)
        elif key == "variant":
            preset = value
        accs = []
        for s in seeds:
            mc = model_config_for(preset, ds, depth=depth, hidden_dim=hidden_dim, **mkw)
            _, _, rep = train_and_evaluate(ds, split, mc, replace(tc, seed=s))
            accs.append(rep.accuracy)
        mean, std = _summary(accs)
        row = {"toggle": toggle, "mean": mean, "std": std, "accuracies": accs, "seeds": list(seeds)}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def filter_curves(alphas, depths, resolution=151, lam_max=1.5):
    """Rows ``(alpha, depth, lambda, response)`` over an even grid on ``[0, lam_max]``."""
    if resolution < 2:
        raise ParameterError("resolution must be >= 2")
    grid = np.linspace(0.0, lam_max, int(resolution))
    rows = []
    for a in alphas:
        for L in depths:
            resp = gpr_filter_response(a, L, grid)
            rows.extend(
                {"alpha": float(a), "depth": int(L), "lambda": float(x), "response": float(r)}
                for x, r in zip(grid, resp)
            )
    return rows


# ------------------------------------------------------------------ gradient suite


def _random_props(rng, batch, n):
    adj = np.stack([build_random_adjacency(n, 0.4, int(rng.integers(1 << 31))) for _ in range(batch)])
    w = rng.uniform(0.2, 1.0, size=adj.shape)
    w = 0.5 * (w + np.swapaxes(w, 1, 2))
    return adj * w, normalize_batch(adj * w)


def _gradient_cases(rng, n):
    """Scalar objectives over fresh parameters, keyed by name."""
    f, h, C = 3, 4, 3
    P = lambda *shape: nk.parameter(rng.standard_normal(shape))  # noqa: E731
    pos = lambda *shape: nk.parameter(rng.uniform(0.2, 2.0, size=shape))  # noqa: E731
    prob = lambda *shape: nk.parameter(rng.uniform(0.05, 0.95, size=shape))  # noqa: E731
    adj, props = _random_props(rng, 2, n)
    x = rng.standard_normal((2, n, f))
    a, b = P(n, f), P(n, f)
    c = pos(n, f)
    m, w = P(2, n, f), P(f, h)
    idx = rng.integers(0, n, size=5)
    weights = rng.standard_normal((n, f))

    cases = {
        "add": (lambda: nk.tsum((a + b) * weights), [a, b]),
        "sub": (lambda: nk.tsum((a - b) * weights), [a, b]),
        "mul": (lambda: nk.tsum(a * b), [a, b]),
        "div": (lambda: nk.tsum(a / c), [a, c]),
        "power": (lambda: nk.tsum(nk.power(c, 3) * weights), [c]),
        "relu": (lambda: nk.tsum(nk.relu(a) * weights), [a]),
        "sigmoid": (lambda: nk.tsum(nk.sigmoid(a) * weights), [a]),
        "log": (lambda: nk.tsum(nk.log(c) * weights), [c]),
        "exp": (lambda: nk.tsum(nk.exp(a) * weights), [a]),
        "mean": (lambda: nk.tsum(nk.square(nk.mean(a, axis=0))), [a]),
        "log_softmax": (lambda: nk.tsum(nk.log_softmax(a, axis=-1) * weights), [a]),
        "softmax": (lambda: nk.tsum(nk.softmax(a, axis=-1) * weights), [a]),
        "matmul": (lambda: nk.tsum(nk.square(nk.matmul(m, w))), [m, w]),
        "einsum": (lambda: nk.tsum(nk.square(nk.einsum("bnf,fh->bnh", m, w))), [m, w]),
        "getitem": (lambda: nk.tsum(nk.square(a[idx])), [a]),
        "stack": (lambda: nk.tsum(nk.square(nk.stack([a, b], axis=0)) * weights), [a, b]),
        "swapaxes": (lambda: nk.tsum(nk.matmul(a.T, b) * np.eye(f)), [a, b]),
    }

    w1, w2 = P(f, h), P(h, h)
    cases["gcn_layer"] = (lambda: nk.tsum(nk.square(gcn_layer(props, gcn_layer(props, x, w1), w2))), [w1, w2])
    ws = P(f, C)
    cases["sgc"] = (lambda: nk.tsum(nk.square(sgc_forward(props, x, 3, ws))), [ws])

    masks = MaskParams.init(n, f, p=0.7, trainable=True)
    masks.pair_logits.data += 0.5 * rng.standard_normal((n, n))
    masks.feat_logits.data += 0.5 * rng.standard_normal((n, f))
    mparams = [masks.pair_logits, masks.feat_logits, w1]

    def masked():
        z = sample_mask(masks, STOCHASTIC, 0.67, rng=(3, 0, 0), batch=2)
        return nk.tsum(nk.square(masked_gcn_layer(props, z, x, w1)))

    cases["masked_gcn_layer"] = (masked, mparams)
    al = P(3)
    outs = [P(2, n, h) for _ in range(3)]
    cases["gpr_readout"] = (lambda: nk.tsum(nk.square(gpr_readout(outs, al))), [al] + outs)
    pe, me = prob(n, f), P(f, h)
    cases["entropy"] = (lambda: nk.tsum(bernoulli_entropy(pe)), [pe])
    cases["edge_predictor_loss"] = (lambda: edge_predictor_loss([(pe, me)]), [pe, me])
    lg = P(4, C)
    y = rng.dirichlet(np.ones(C), size=4)
    cases["soft_cross_entropy"] = (lambda: soft_cross_entropy(nk.log_softmax(lg, axis=-1), y), [lg])

    model = CuGcnModel(ModelConfig(n_features=f, n_nodes=n, depth=2, hidden_dim=h, n_classes=C,
                                   mask_init_p=0.7), seed=int(rng.integers(1000)))
    for t in model.masks:
        t.pair_logits.data += 0.3 * rng.standard_normal(t.pair_logits.shape)
        t.feat_logits.data += 0.3 * rng.standard_normal(t.feat_logits.shape)
    labels = np.eye(C)[rng.integers(0, C, size=4)]
    xb = rng.standard_normal((4, n, f))
    adjb, _ = _random_props(rng, 4, n)
    xm, am, ym, _, _ = mixup_batch(xb, adjb, labels, np.random.default_rng(int(rng.integers(1 << 31))))
    propm = normalize_batch(am)
    tc = TrainConfig(seed=5, ep_scale=1.0)
    cases["composite_loss"] = (
        lambda: training_objective(model, propm, xm, ym, tc, step=0, n_train=4)[0],
        list(model.parameters().values()),
    )
    return cases


def gradient_suite(seeds=range(10), n_nodes=8, step=1e-5, cases=None):
    """Analytic vs central-difference gradients per differentiable case and seed."""
    rows = []
    for s in seeds:
        rng = np.random.default_rng([int(s), 404])
        built = _gradient_cases(rng, n_nodes)
        for name, (fn, params) in built.items():
            if cases is not None and name not in cases:
                continue
            err = nk.gradcheck(fn, params, step=step)
            rows.append({"case": name, "seed": int(s), "max_rel_error": err})
    return rows


# ------------------------------------------------------------------ records


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def default_split(dataset, protocol="subject-dependent", holdout_subject=None, seed=0):
    return make_split(dataset, protocol=protocol, holdout_subject=holdout_subject, seed=seed)
