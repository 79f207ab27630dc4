"""Graph mixup: convex interpolation of features, adjacencies and labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass
class MixupConfig:
    psi: float = 2.0
    enabled: bool = True
    same_class: bool = False

    def __post_init__(self):
        if not self.psi > 0:
            raise ParameterError(f"psi must be positive, got {self.psi}")


@dataclass
class LabeledSample:
    """One graph with its label distribution over ``C`` classes."""

    features: np.ndarray
    adjacency: np.ndarray
    label: np.ndarray

    @property
    def hard_label(self):
        return int(np.argmax(self.label))


def sample_beta(psi, seed=None, size=None, rng=None):
    """Draw from ``Beta(psi, psi)`` as a ratio of two unit-scale Gamma draws."""
    if not psi > 0:
        raise ParameterError(f"psi must be positive, got {psi}")
    if rng is None:
        rng = np.random.default_rng(seed)
    g1 = rng.gamma(psi, 1.0, size=size)
    g2 = rng.gamma(psi, 1.0, size=size)
    return g1 / (g1 + g2)


def mix_arrays(a, b, beta):
    return beta * np.asarray(a, dtype=np.float64) + (1.0 - beta) * np.asarray(b, dtype=np.float64)


def mixup_pair(sample_i, sample_j, beta):
    """Interpolate two samples with weight ``beta`` on ``sample_i``."""
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    for name in ("features", "adjacency", "label"):
        si, sj = np.shape(getattr(sample_i, name)), np.shape(getattr(sample_j, name))
        if si != sj:
            raise ShapeError(f"{name} shapes differ: {si} vs {sj}")
    adj = mix_arrays(sample_i.adjacency, sample_j.adjacency, beta)
    return LabeledSample(
        features=mix_arrays(sample_i.features, sample_j.features, beta),
        adjacency=0.5 * (adj + adj.T),
        label=mix_arrays(sample_i.label, sample_j.label, beta),
    )


def draw_partners(labels, rng, same_class=False):
    """A uniformly drawn partner index ``j != i`` within the batch for every ``i``.

    With ``same_class`` the partner shares the hard label when one exists.
    """
    labels = np.asarray(labels)
    b = labels.shape[0]
    partners = np.empty(b, dtype=np.int64)
    for i in range(b):
        pool = np.flatnonzero(labels == labels[i]) if same_class else np.arange(b)
        pool = pool[pool != i]
        if pool.size == 0:
            pool = np.arange(b)[np.arange(b) != i] if b > 1 else np.array([i])
        partners[i] = pool[rng.integers(pool.size)]
    return partners


def mixup_batch(features, adjacency, labels, rng, psi=2.0, same_class=False):
    """Mix every sample of a batch with a random partner from the same batch.

    ``features`` ``[B, n, f]``, ``adjacency`` ``[B, n, n]``, ``labels`` ``[B, C]``.
    """
    hard = np.argmax(labels, axis=1)
    partners = draw_partners(hard, rng, same_class=same_class)
    beta = sample_beta(psi, size=features.shape[0], rng=rng)
    bx = beta[:, None, None]
    x = bx * features + (1.0 - bx) * features[partners]
    a = bx * adjacency + (1.0 - bx) * adjacency[partners]
    y = beta[:, None] * labels + (1.0 - beta[:, None]) * labels[partners]
    return x, 0.5 * (a + np.swapaxes(a, 1, 2)), y, beta, partners
