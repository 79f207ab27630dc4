"""Edge predictor: learnable mask success rates, concrete sampling and the KL surrogate.

A layer mask is factorised as a node-pair part ``Z_uv`` (n x n) times a
feature part ``Z_f`` (n x f); the entry acting on feature ``i`` of the message
``v -> u`` is ``Z_uv[u, v] * Z_f[v, i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk

LOGIT_CLAMP = 9.2
EPS_CLAMP = 1e-6
STOCHASTIC = "stochastic"
EXPECTED = "expected"


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _clamp_open(x, eps=EPS_CLAMP):
    return np.clip(np.asarray(x, dtype=np.float64), eps, 1.0 - eps)


def concrete_sample(p, epsilon, t):
    """Relaxed Bernoulli draw ``sigmoid((logit p + logit eps) / t)``.

    Works elementwise on arrays; ``p`` and ``epsilon`` are clamped into
    ``(1e-6, 1 - 1e-6)`` first.
    """
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = (logit(_clamp_open(p)) + logit(_clamp_open(epsilon))) / t
    out = nk._sigmoid_np(np.atleast_1d(z).astype(np.float64))
    return float(out[0]) if np.ndim(z) == 0 else out.reshape(np.shape(z))


def concrete_from_logits(logits, epsilon, t):
    """Tensor version of :func:`concrete_sample` taking success-rate logits."""
    noise = logit(_clamp_open(epsilon))
    return nk.sigmoid((logits + noise) * (1.0 / t))


def bernoulli_entropy(p):
    """Entropy in nats, with ``0 log 0 = 0``."""
    if isinstance(p, nk.Tensor):
        q = 1.0 - p
        return -(p * nk.log(p) + q * nk.log(q))
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(p < 1, (1 - p) * np.log1p(-p), 0.0)
    return float(h) if h.ndim == 0 else h


def edge_predictor_loss(layers, reduction="sum"):
    """Sum over layers of ``(1 - p)/2 * ||m||^2 - H(p)`` per retained entry.

    ``layers`` is a sequence of ``(p, m)`` pairs: success rates of the entries
    of one mask family and the mean weight matrix they gate. With
    ``reduction="mean"`` each family contributes its per-entry average.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    total = nk.Tensor(0.0)
    for p, m in layers:
        p = nk.as_tensor(p)
        m = nk.as_tensor(m)
        norm2 = nk.tsum(nk.square(m))
        per_entry = (1.0 - p) * (norm2 * 0.5) - bernoulli_entropy(p)
        term = nk.tsum(per_entry)
        if reduction == "mean":
            term = term * (1.0 / p.size)
        total = total + term
    return total


@dataclass
class MaskParams:
    """Per-layer logit tables for the pair and feature mask parts."""

    pair_logits: nk.Tensor
    feat_logits: nk.Tensor

    @classmethod
    def init(cls, n_nodes, n_features, p=0.9, trainable=True, name=""):
        lg = float(logit(p))
        make = nk.parameter if trainable else nk.Tensor
        return cls(
            pair_logits=make(np.full((n_nodes, n_nodes), lg), name=f"{name}pair_logits"),
            feat_logits=make(np.full((n_nodes, n_features), lg), name=f"{name}feat_logits"),
        )

    @property
    def trainable(self):
        return self.pair_logits.requires_grad

    def symmetric_pair_logits(self):
        return (self.pair_logits + self.pair_logits.T) * 0.5

    def pair_probs(self):
        return nk.sigmoid(self.symmetric_pair_logits())

    def feat_probs(self):
        return nk.sigmoid(self.feat_logits)

    def clamp_(self):
        """Project logits back into ``[-9.2, 9.2]`` and re-symmetrise the pair table."""
        pl = self.pair_logits.data
        pl[...] = np.clip(0.5 * (pl + pl.T), -LOGIT_CLAMP, LOGIT_CLAMP)
        np.clip(self.feat_logits.data, -LOGIT_CLAMP, LOGIT_CLAMP, out=self.feat_logits.data)

    def layer_mean_p(self):
        """Mean pair and feature success rates, the per-layer ``p_l`` summary."""
        return float(self.pair_probs().data.mean()), float(self.feat_probs().data.mean())


@dataclass
class MaskSample:
    """Pair and feature mask factors; stochastic draws carry a leading batch axis."""

    pair: nk.Tensor
    feat: nk.Tensor
    mode: str

    def dense(self):
        """Materialise the n x n x f mask (per batch element when batched)."""
        pair = self.pair.data
        feat = self.feat.data
        return pair[..., :, :, None] * feat[..., None, :, :]

    @property
    def values(self):
        return self.dense()


def mask_rng(seed, layer, step):
    """Counter-style stream keyed by ``(seed, layer, step)``."""
    return np.random.default_rng([int(seed), int(layer), int(step)])


def _symmetric_uniform(rng, shape):
    u = rng.random(shape)
    upper = np.triu(u)
    return upper + np.swapaxes(np.triu(u, 1), -1, -2)


def sample_mask(params, mode=STOCHASTIC, t=0.67, rng=None, batch=None):
    """Draw a layer mask.

    ``stochastic``: relaxed concrete draws with fresh uniform noise per pair
    entry (symmetric) and per feature entry. ``expected``: the success
    probabilities themselves. ``batch`` adds a leading axis of independent draws.
    """
    if mode == EXPECTED:
        return MaskSample(pair=params.pair_probs(), feat=params.feat_probs(), mode=EXPECTED)
    if mode != STOCHASTIC:
        raise ValueError(f"unknown mask mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic sampling needs an rng")
    if isinstance(rng, (tuple, list)):
        rng = mask_rng(*rng)
    lead = () if batch is None else (int(batch),)
    n = params.pair_logits.shape[0]
    eps_pair = _symmetric_uniform(rng, lead + (n, n))
    eps_feat = rng.random(lead + params.feat_logits.shape)
    pair = concrete_from_logits(params.symmetric_pair_logits(), eps_pair, t)
    feat = concrete_from_logits(params.feat_logits, eps_feat, t)
    return MaskSample(pair=pair, feat=feat, mode=STOCHASTIC)


def entropy_fixed_point_steps(probs, steps=200, lr=1.0):
    """Plain gradient descent on the entropy-only edge loss (``m = 0``).

    Returns the success-rate trajectory end point; used to illustrate the
    drift of every rate toward 0.5.
    """
    logits = nk.parameter(logit(_clamp_open(probs)))
    zero = np.zeros((1, 1))
    for _ in range(steps):
        loss = edge_predictor_loss([(nk.sigmoid(logits), zero)])
        (g,) = nk.grad(loss, [logits])
        logits.data -= lr * g
    return nk._sigmoid_np(logits.data.reshape(-1)).reshape(logits.shape)


def concrete_limit(p, epsilon):
    """Zero-temperature limit of :func:`concrete_sample`: 1 when ``logit p + logit eps > 0``."""
    return 1.0 if math.log(p / (1 - p)) + math.log(epsilon / (1 - epsilon)) > 0 else 0.0
