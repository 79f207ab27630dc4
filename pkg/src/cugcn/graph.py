"""Graph construction, renormalised propagation and spectral diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ParameterError, ShapeError
from .numkernel import sym_eig

DEFAULT_BANDS = ("delta", "theta", "alpha", "beta", "gamma")


@dataclass
class Graph:
    """Undirected weighted graph with node features.

    ``adjacency`` carries no self-loops; they are added by :func:`normalize_sym`.
    """

    adjacency: np.ndarray
    features: np.ndarray
    band_labels: tuple = field(default=())

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ShapeError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ShapeError(f"features must be {n} x f, got {self.features.shape}")
        check_adjacency(self.adjacency)

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)


@dataclass
class NormalizedPropagator:
    """``D~^-1/2 (I + A) D~^-1/2`` together with the self-looped degrees ``D~``."""

    matrix: np.ndarray
    degrees: np.ndarray


def check_adjacency(a, atol=1e-12):
    if np.any(a < 0):
        raise ParameterError("adjacency weights must be non-negative")
    if not np.allclose(a, a.T, rtol=0.0, atol=atol):
        raise ParameterError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ParameterError("adjacency diagonal must be zero")


def pairwise_distances(positions):
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"positions must be n x d, got {p.shape}")
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def median_pairwise_distance(positions):
    d = pairwise_distances(positions)
    iu = np.triu_indices(d.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


def build_distance_adjacency(positions, sigma=None):
    """Gaussian-kernel adjacency ``exp(-d_ij^2 / (2 sigma^2))`` with zero diagonal.

    ``sigma`` defaults to the median pairwise distance.
    """
    if sigma is None:
        sigma = median_pairwise_distance(positions)
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    d = pairwise_distances(positions)
    if d.shape[0] < 1:
        raise ParameterError("need at least one node")
    a = np.exp(-(d**2) / (2.0 * sigma**2))
    np.fill_diagonal(a, 0.0)
    return 0.5 * (a + a.T)


def build_coherence_adjacency(features, threshold=0.3):
    """Absolute Pearson correlation between node feature rows, thresholded.

    Rows with zero variance correlate 0 with everything.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be n x f, got {x.shape}")
    if x.shape[1] < 2:
        raise ParameterError("coherence adjacency needs at least 2 feature columns")
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    scale = max(float(np.max(np.abs(x))), 1.0)
    live = norms > 1e-12 * scale
    unit = np.zeros_like(centered)
    unit[live] = centered[live] / norms[live, None]
    corr = np.clip(np.abs(unit @ unit.T), 0.0, 1.0)
    corr[corr <= threshold] = 0.0
    np.fill_diagonal(corr, 0.0)
    return 0.5 * (corr + corr.T)


def build_random_adjacency(n, density, seed):
    """Erdos-Renyi graph with unit weights; each unordered pair kept with ``density``."""
    if not 0.0 <= density <= 1.0:
        raise ParameterError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    keep = rng.random((n, n)) < density
    upper = np.triu(keep, k=1).astype(np.float64)
    return upper + upper.T


def normalize_sym(adjacency):
    """Renormalised symmetric propagator with self-loops."""
    a = np.asarray(adjacency, dtype=np.float64)
    looped = a + np.eye(a.shape[0])
    deg = looped.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return NormalizedPropagator(matrix=inv_sqrt[:, None] * looped * inv_sqrt[None, :], degrees=deg)


def normalize_batch(adjacency):
    """:func:`normalize_sym` over a stack of adjacencies, returning only the matrices."""
    a = np.asarray(adjacency, dtype=np.float64)
    looped = a + np.eye(a.shape[-1])
    inv_sqrt = 1.0 / np.sqrt(looped.sum(axis=-1))
    return inv_sqrt[..., :, None] * looped * inv_sqrt[..., None, :]


def laplacian_spectrum(prop):
    """Ascending eigenvalues of ``I - A_sym``."""
    m = prop.matrix if isinstance(prop, NormalizedPropagator) else np.asarray(prop)
    return sym_eig(np.eye(m.shape[0]) - m).eigenvalues


def scale_eigenvalue(lam, lambda_max=2.0):
    """Map a Laplacian eigenvalue in ``[0, lambda_max]`` onto ``[-1, 1]``."""
    return 2.0 * lam / lambda_max - 1.0


def cheb_filter_response(theta, lambda_hat):
    """``sum_k theta_k T_k(lambda_hat)`` through the three-term recurrence."""
    if abs(lambda_hat) > 1.0:
        raise DomainError(f"scaled eigenvalue must lie in [-1, 1], got {lambda_hat}")
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size == 0:
        return 0.0
    t_prev, t_cur = 1.0, float(lambda_hat)
    total = theta[0] * t_prev
    if theta.size > 1:
        total += theta[1] * t_cur
    for k in range(2, theta.size):
        t_prev, t_cur = t_cur, 2.0 * lambda_hat * t_cur - t_prev
        total += theta[k] * t_cur
    return float(total)


def gpr_filter_response(alpha, depth, lam):
    """Response ``(1 - alpha * lam) ** depth`` of depth-``depth`` scaled propagation."""
    if depth < 1:
        raise ParameterError(f"depth must be >= 1, got {depth}")
    return (1.0 - alpha * lam) ** depth


def scalp_grid_positions(n=62, width=9):
    """Deterministic 2-D layout: the ``n`` points of a ``width`` x ``width`` grid nearest its centre.

    Row order is by radius, then angle, then coordinates, so it is stable.
    """
    if n > width * width:
        raise ParameterError(f"cannot place {n} nodes on a {width}x{width} grid")
    c = (width - 1) / 2.0
    pts = [(float(i - c), float(j - c)) for i in range(width) for j in range(width)]
    pts.sort(key=lambda p: (round(p[0] ** 2 + p[1] ** 2, 9), round(np.arctan2(p[1], p[0]), 9), p))
    chosen = sorted(pts[:n], key=lambda p: (-p[1], p[0]))
    return np.array(chosen, dtype=np.float64)


def load_positions(path):
    """Read an electrode-position file: one row per node of whitespace-separated coordinates."""
    rows = []
    width = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise FormatError(f"non-numeric coordinate ({exc})", path, lineno) from None
        if width is None:
            width = len(vals)
            if width not in (2, 3):
                raise FormatError(f"expected 2 or 3 coordinates, got {width}", path, lineno)
        elif len(vals) != width:
            raise FormatError(f"expected {width} coordinates, got {len(vals)}", path, lineno)
        rows.append(vals)
    if not rows:
        raise FormatError("no positions found", path)
    return np.array(rows, dtype=np.float64)


def save_positions(path, positions):
    lines = [" ".join(repr(float(v)) for v in row) for row in np.asarray(positions)]
    Path(path).write_text("\n".join(lines) + "\n")
