"""Mini-batch training: mixup, mask sampling, Adam, cosine annealing, early stopping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .augment import mixup_batch
from .errors import DivergenceError, ParameterError
from .graph import normalize_batch
from .model import soft_cross_entropy, total_loss
from .uncertainty import EXPECTED, STOCHASTIC

CONTINUE = "continue"
STOP = "stop"


@dataclass
class TrainConfig:
    lr_init: float = 0.01
    epochs: int = 60
    batch_size: int = 32
    t_temperature: float = 0.67
    psi: float = 2.0
    early_stop_patience: int = 10
    seed: int = 0
    ep_scale: float = 1.0
    mixup: bool = True
    mixup_same_class: bool = False
    grad_clip: float = 5.0

    def __post_init__(self):
        if not 1e-3 <= self.lr_init <= 3e-2:
            raise ParameterError(f"lr_init must lie in [1e-3, 3e-2], got {self.lr_init}")
        for name in ("epochs", "batch_size", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not self.t_temperature > 0 or not self.psi > 0:
            raise ParameterError("t_temperature and psi must be positive")
        if self.ep_scale < 0 or self.grad_clip <= 0:
            raise ParameterError("ep_scale must be >= 0 and grad_clip > 0")


@dataclass
class TrainState:
    step: int = 0
    lr: float = 0.0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [r[key] for r in self.records]


def cosine_lr(step, total_steps, lr_init):
    """``lr_init * (1 + cos(pi * step / total)) / 2``."""
    if total_steps <= 0:
        return float(lr_init)
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr_init * (1.0 + math.cos(math.pi * step / total_steps))


def early_stop_check(state, val_loss, patience=10):
    """Record one epoch's validation loss; ``stop`` after ``patience`` epochs without strict improvement."""
    if not math.isfinite(val_loss):
        raise ParameterError("validation loss must be finite")
    if val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    return STOP if state.epochs_since_improvement >= patience else CONTINUE


def adam_update(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step, in place. ``state.step`` must already count this step."""
    t = state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def predict(model, props, features, batch=256):
    """Expected-mask class probabilities ``[S, C]``."""
    out = []
    for start in range(0, features.shape[0], batch):
        sl = slice(start, start + batch)
        out.append(model.predict_proba(props[sl], features[sl]))
    if not out:
        return np.zeros((0, model.config.n_classes))
    return np.concatenate(out, axis=0)


def _loss_acc(probs, labels):
    if labels.size == 0:
        return float("nan"), float("nan")
    ce = -np.log(np.maximum(probs[np.arange(labels.size), labels], 1e-12))
    return float(ce.mean()), float(np.mean(np.argmax(probs, axis=1) == labels))


def training_objective(model, props, x, y, config, step, n_train):
    """Graph-classification loss plus scaled edge-predictor loss for one batch."""
    mode = STOCHASTIC if model.masks else EXPECTED
    log_probs = model.log_probs(props, x, mode=mode, seed=config.seed, step=step, t=config.t_temperature)
    gc = soft_cross_entropy(log_probs, y)
    ep = model.edge_loss(reduction="mean")
    return total_loss(gc, ep, config.ep_scale / max(n_train, 1)), gc


def fit(model, dataset, split, config, log=None):
    """Train ``model`` in place on ``split.train``; returns ``(model, history)``.

    Best-validation parameters are restored at the end when a validation
    split exists.
    """
    train_idx = np.asarray(split.train, dtype=np.int64)
    val_idx = np.asarray(split.val, dtype=np.int64)
    if train_idx.size == 0:
        raise ParameterError("training split is empty")
    if config.batch_size > train_idx.size:
        raise ParameterError(f"batch_size {config.batch_size} exceeds training set size {train_idx.size}")
    if dataset.n_features != model.config.n_features:
        raise ParameterError("dataset feature width does not match the model")

    rng = np.random.default_rng([config.seed, 303])
    props_all = normalize_batch(dataset.adjacency)
    y_all = dataset.one_hot()
    labels = np.asarray(dataset.labels)
    params = model.parameters()
    steps_per_epoch = math.ceil(train_idx.size / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    state = TrainState(lr=config.lr_init)
    history = History()
    best_state = model.copy_state()

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, order.size, config.batch_size):
            b = order[start:start + config.batch_size]
            x, y = dataset.features[b], y_all[b]
            if config.mixup and b.size > 1:
                x, adj, y, _, _ = mixup_batch(x, dataset.adjacency[b], y, rng, psi=config.psi,
                                              same_class=config.mixup_same_class)
                props = normalize_batch(adj)
            else:
                props = props_all[b]
            state.lr = cosine_lr(state.step, total_steps, config.lr_init)
            try:
                loss, _ = training_objective(model, props, x, y, config, state.step, train_idx.size)
            except FloatingPointError as exc:
                raise DivergenceError(
                    f"non-finite value at epoch {epoch} step {state.step}: {exc}",
                    snapshot=_snapshot(model, epoch, state),
                ) from None
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", snapshot=_snapshot(model, epoch, state))
            grads, _ = clip_global_norm(nk.grad(loss, params), config.grad_clip)
            state.step += 1
            adam_update(params, grads, state, state.lr)
            model.project_()
            losses.append(loss.item())

        train_probs = predict(model, props_all[train_idx], dataset.features[train_idx])
        _, train_acc = _loss_acc(train_probs, labels[train_idx])
        if val_idx.size:
            val_probs = predict(model, props_all[val_idx], dataset.features[val_idx])
            val_loss, val_acc = _loss_acc(val_probs, labels[val_idx])
        else:
            val_loss, val_acc = float(np.mean(losses)), float("nan")
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_acc": train_acc,
            "val_loss": val_loss,
            "val_acc": val_acc,
            "lr": state.lr,
        }
        history.records.append(record)
        if log is not None:
            log(record)
        improved = val_loss < state.best_val_loss
        verdict = early_stop_check(state, val_loss, config.early_stop_patience)
        if improved:
            history.best_epoch = epoch
            best_state = model.copy_state()
        if verdict == STOP:
            history.stopped_early = True
            break

    if val_idx.size:
        model.load_state(best_state)
    else:
        history.best_epoch = len(history.records) - 1
    return model, history


def _snapshot(model, epoch, state):
    return {
        "epoch": epoch,
        "step": state.step,
        "lr": state.lr,
        "param_norms": {k: float(np.linalg.norm(v.data)) for k, v in model.state().items()},
    }


def config_dict(config):
    return asdict(config)
