"""Synthetic EEG-like datasets, feature-file ingestion and split protocols.

Feature file grammar (``cugcn-features v1``)::

    cugcn-features v1, <n_nodes>, <n_bands>, <label>
    <n_bands floats>          # node 0
    ...                       # one row per node, n_nodes rows

A manifest lists one sample per line: ``<path> <subject_id> <label>``; paths
are resolved relative to the manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import LabeledSample
from .errors import FormatError, ParameterError
from .graph import (
    DEFAULT_BANDS,
    build_coherence_adjacency,
    build_distance_adjacency,
    build_random_adjacency,
    pairwise_distances,
    scalp_grid_positions,
)

FEATURE_HEADER = "cugcn-features v1"
SUBJECT_DEPENDENT = "subject-dependent"
LOSO = "loso"
ADJACENCY_KINDS = ("dist", "coh", "random")
SEED_CLASSES = ("positive", "neutral", "negative")
SEEDIV_CLASSES = ("neutral", "sad", "fear", "happy")


@dataclass
class SyntheticConfig:
    n_nodes: int = 62
    n_bands: int = 5
    n_classes: int = 3
    samples_per_class: int = 100
    label_noise_rate: float = 0.0
    n_subjects: int = 5
    subject_shift_scale: float = 0.3
    seed: int = 0
    region_size: int = 10
    mean_shift: float = 2.8
    contrast: float = 4.0
    background_scale: float = 0.3
    background_length: float = 2.0

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ParameterError("samples_per_class must be >= 1")
        if not 0.0 <= self.label_noise_rate < 1.0:
            raise ParameterError("label_noise_rate must lie in [0, 1)")
        if self.n_classes < 2 or self.n_bands < 1 or self.n_nodes < 2 or self.n_subjects < 1:
            raise ParameterError("n_classes >= 2, n_bands >= 1, n_nodes >= 2, n_subjects >= 1 required")
        if not 1 <= self.region_size <= self.n_nodes:
            raise ParameterError("region_size must lie in 1..n_nodes")


@dataclass
class Dataset:
    """Stacked samples: ``features`` ``[S, n, f]``, ``adjacency`` ``[S, n, n]``."""

    features: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    adjacency: np.ndarray
    class_names: tuple
    band_names: tuple
    true_labels: np.ndarray = None
    positions: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.true_labels is None:
            self.true_labels = self.labels.copy()

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_nodes(self):
        return self.features.shape[1]

    @property
    def n_features(self):
        return self.features.shape[2]

    @property
    def n_classes(self):
        return len(self.class_names)

    def one_hot(self, idx=None):
        labels = self.labels if idx is None else self.labels[idx]
        return np.eye(self.n_classes)[labels]

    @property
    def samples(self):
        y = self.one_hot()
        return [LabeledSample(self.features[i], self.adjacency[i], y[i]) for i in range(len(self))]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            subject_ids=self.subject_ids[idx],
            adjacency=self.adjacency[idx],
            true_labels=self.true_labels[idx],
        )

    def with_adjacency(self, kind="dist", sigma=None, threshold=0.3, density=0.1, seed=0):
        """Copy of the dataset with every sample's adjacency rebuilt."""
        n = self.n_nodes
        if kind == "dist":
            pos = self.positions if self.positions is not None else default_positions(n)
            shared = build_distance_adjacency(pos, sigma)
            adj = np.broadcast_to(shared, (len(self), n, n)).copy()
        elif kind == "coh":
            adj = np.stack([build_coherence_adjacency(x, threshold) for x in self.features])
        elif kind == "random":
            shared = build_random_adjacency(n, density, seed)
            adj = np.broadcast_to(shared, (len(self), n, n)).copy()
        else:
            raise ParameterError(f"adjacency kind must be one of {ADJACENCY_KINDS}, got {kind!r}")
        meta = dict(self.meta, adjacency={"kind": kind, "sigma": sigma, "threshold": threshold,
                                          "density": density, "seed": seed})
        return replace(self, adjacency=adj, meta=meta)


@dataclass
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    protocol: str


def default_positions(n):
    width = max(9, int(np.ceil(np.sqrt(n))) + 1)
    return scalp_grid_positions(n, width=width)


def band_names_for(n_bands):
    if n_bands == len(DEFAULT_BANDS):
        return DEFAULT_BANDS
    return tuple(f"band{i}" for i in range(n_bands))


def class_names_for(n_classes):
    if n_classes == 3:
        return SEED_CLASSES
    if n_classes == 4:
        return SEEDIV_CLASSES
    return tuple(f"class{i}" for i in range(n_classes))


def class_bands(n_classes, n_bands):
    """Designated band per class, starting from the highest band and walking down."""
    return [(n_bands - 1 - c) % n_bands for c in range(n_classes)]


def class_regions(positions, n_classes, region_size):
    """Node subsets clustered around centres spread evenly on a ring."""
    pos = np.asarray(positions)
    centre = pos.mean(axis=0)
    radius = 0.55 * np.max(np.linalg.norm(pos - centre, axis=1))
    regions = []
    for c in range(n_classes):
        ang = 2.0 * np.pi * c / n_classes + np.pi / 2.0
        anchor = centre + radius * np.array([np.cos(ang), np.sin(ang)] + [0.0] * (pos.shape[1] - 2))
        dist = np.linalg.norm(pos - anchor, axis=1)
        regions.append(np.sort(np.argsort(dist, kind="stable")[:region_size]))
    return regions


def generate_synthetic(config=None, **overrides):
    """Planted-structure dataset.

    Each sample is ``band baseline + class pattern + subject offset + spatially
    correlated background + unit noise``. The class pattern lives in one
    designated band on the class's active region: a mean elevation plus a
    random-sign component whose sign pattern changes per sample, so part of
    the class evidence is local, high-frequency energy.
    """
    cfg = replace(config, **overrides) if config is not None else SyntheticConfig(**overrides)
    rng = np.random.default_rng([cfg.seed, 101])
    n, f, C = cfg.n_nodes, cfg.n_bands, cfg.n_classes
    pos = default_positions(n)
    regions = class_regions(pos, C, cfg.region_size)
    bands = class_bands(C, f)

    kernel = np.exp(-pairwise_distances(pos) ** 2 / (2.0 * cfg.background_length**2))
    w, v = np.linalg.eigh(kernel)
    field_root = v * np.sqrt(np.clip(w, 0.0, None))
    baseline = np.linspace(1.0, 0.2, f)
    subject_offsets = cfg.subject_shift_scale * rng.standard_normal((cfg.n_subjects, n, f))

    total = C * cfg.samples_per_class
    true_labels = np.repeat(np.arange(C), cfg.samples_per_class)
    subjects = np.concatenate(
        [np.arange(cfg.samples_per_class) % cfg.n_subjects for _ in range(C)]
    )

    features = np.empty((total, n, f))
    for s in range(total):
        c = true_labels[s]
        x = np.broadcast_to(baseline, (n, f)).copy()
        x += subject_offsets[subjects[s]]
        x += cfg.background_scale * (field_root @ rng.standard_normal((n, f)))
        x += rng.standard_normal((n, f))
        signs = rng.choice([-1.0, 1.0], size=cfg.region_size)
        x[regions[c], bands[c]] += cfg.mean_shift + cfg.contrast * signs
        features[s] = x

    labels = true_labels.copy()
    flip = rng.random(total) < cfg.label_noise_rate
    shift = rng.integers(1, C, size=total)
    labels[flip] = (true_labels[flip] + shift[flip]) % C

    ds = Dataset(
        features=features,
        labels=labels,
        subject_ids=subjects,
        adjacency=np.zeros((total, n, n)),
        class_names=class_names_for(C),
        band_names=band_names_for(f),
        true_labels=true_labels,
        positions=pos,
        meta={"synthetic": {k: v for k, v in vars(cfg).items()}},
    )
    return ds


# ------------------------------------------------------------------ files


def _resolve_bands(band_selection, band_names):
    if band_selection is None or band_selection == "all":
        return list(range(len(band_names)))
    names = [band_selection] if isinstance(band_selection, str) else list(band_selection)
    cols = []
    for name in names:
        if name not in band_names:
            raise ParameterError(f"unknown band {name!r}; known bands: {', '.join(band_names)}")
        cols.append(band_names.index(name))
    return cols


def write_feature_file(path, features, label):
    x = np.asarray(features, dtype=np.float64)
    lines = [f"{FEATURE_HEADER}, {x.shape[0]}, {x.shape[1]}, {int(label)}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in x]
    Path(path).write_text("\n".join(lines) + "\n")


def read_feature_header(path):
    """``(n_nodes, n_bands, label)`` from a feature file's first line."""
    with open(path) as fh:
        head = [tok.strip() for tok in fh.readline().split(",")]
    if len(head) != 4 or head[0] != FEATURE_HEADER:
        raise FormatError(f"header must be '{FEATURE_HEADER}, n_nodes, n_bands, label'", path, 1)
    try:
        return int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise FormatError("header counts and label must be integers", path, 1) from None


def load_feature_file(path, band_selection=None, band_names=None, expected_nodes=None):
    """Read one ``cugcn-features v1`` file; returns ``(features, label)``.

    ``band_selection`` is ``None``/``"all"``, a band name or a list of names.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read feature file ({exc.strerror})", path) from None
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty file", path, 1)
    n_nodes, n_bands, label = read_feature_header(path)
    if expected_nodes is not None and n_nodes != expected_nodes:
        raise FormatError(f"header declares {n_nodes} nodes, expected {expected_nodes}", path, 1)
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        toks = raw.split()
        if len(toks) != n_bands:
            raise FormatError(f"expected {n_bands} values, got {len(toks)}", path, lineno)
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise FormatError("non-numeric value", path, lineno) from None
        if len(rows) > n_nodes:
            raise FormatError(f"more than the expected {n_nodes} node rows", path, lineno)
    if len(rows) != n_nodes:
        raise FormatError(f"found {len(rows)} node rows, expected {n_nodes}", path, len(lines))
    x = np.array(rows, dtype=np.float64)
    names = tuple(band_names) if band_names is not None else band_names_for(n_bands)
    cols = _resolve_bands(band_selection, names)
    return x[:, cols], label


def write_manifest(path, entries):
    """``entries``: iterable of ``(file_path, subject_id, label)``."""
    Path(path).write_text("".join(f"{p} {int(s)} {int(l)}\n" for p, s, l in entries))


def load_manifest(path, band_selection=None, n_classes=None, positions=None):
    """Load every sample listed in a manifest into a :class:`Dataset` (no adjacency yet)."""
    path = Path(path)
    feats, labels, subjects = [], [], []
    n_nodes = n_bands = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 3:
            raise FormatError("manifest lines need '<path> <subject_id> <label>'", path, lineno)
        fpath = Path(toks[0])
        if not fpath.is_absolute():
            fpath = path.parent / fpath
        try:
            subject, label = int(toks[1]), int(toks[2])
        except ValueError:
            raise FormatError("subject id and label must be integers", path, lineno) from None
        x, file_label = load_feature_file(fpath, band_selection, expected_nodes=n_nodes)
        if file_label != label:
            raise FormatError(f"manifest label {label} != file label {file_label}", path, lineno)
        if n_nodes is None:
            n_nodes = x.shape[0]
            n_bands = read_feature_header(fpath)[1]
        feats.append(x)
        labels.append(label)
        subjects.append(subject)
    if not feats:
        raise FormatError("manifest lists no samples", path)
    features = np.stack(feats)
    labels = np.array(labels, dtype=np.int64)
    C = n_classes or int(labels.max()) + 1
    all_names = band_names_for(n_bands)
    band_names = tuple(all_names[i] for i in _resolve_bands(band_selection, all_names))
    return Dataset(
        features=features,
        labels=labels,
        subject_ids=np.array(subjects, dtype=np.int64),
        adjacency=np.zeros((len(feats), features.shape[1], features.shape[1])),
        class_names=class_names_for(C),
        band_names=band_names,
        positions=positions,
        meta={"manifest": str(path)},
    )


def write_dataset(dataset, directory):
    """Write every sample as a feature file plus ``manifest.txt`` and ``positions.txt``."""
    from .graph import save_positions

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(dataset)):
        name = f"sample_{i:05d}.txt"
        write_feature_file(out / name, dataset.features[i], dataset.labels[i])
        entries.append((name, dataset.subject_ids[i], dataset.labels[i]))
    write_manifest(out / "manifest.txt", entries)
    if dataset.positions is not None:
        save_positions(out / "positions.txt", dataset.positions)
    return out / "manifest.txt"


# ------------------------------------------------------------------ splits


def make_split(dataset, protocol=SUBJECT_DEPENDENT, holdout_subject=None, train_fraction=0.6,
               val_fraction=0.1, seed=0):
    """Index partition of ``dataset`` into train / validation / test.

    ``subject-dependent``: within each class the first ``train_fraction`` of
    samples (in dataset order) train, the rest test. ``loso``: every sample
    of ``holdout_subject`` tests. In both, ``val_fraction`` of each class's
    training portion is carved out at random for validation.
    """
    rng = np.random.default_rng([int(seed), 202])
    labels = np.asarray(dataset.labels)
    idx_all = np.arange(len(dataset))
    if protocol == SUBJECT_DEPENDENT:
        if not 0.0 < train_fraction < 1.0:
            raise ParameterError("train_fraction must lie in (0, 1)")
        train_pool, test = [], []
        for c in np.unique(labels):
            members = idx_all[labels == c]
            k = int(np.floor(train_fraction * members.size))
            train_pool.append(members[:k])
            test.append(members[k:])
        test = np.concatenate(test)
    elif protocol == LOSO:
        subjects = np.asarray(dataset.subject_ids)
        if holdout_subject is None or holdout_subject not in set(subjects.tolist()):
            raise ParameterError(f"unknown holdout subject {holdout_subject!r}")
        test = idx_all[subjects == holdout_subject]
        rest = idx_all[subjects != holdout_subject]
        train_pool = [rest[labels[rest] == c] for c in np.unique(labels[rest])]
    else:
        raise ParameterError(f"unknown protocol {protocol!r}")
    train, val = [], []
    for members in train_pool:
        k = int(round(val_fraction * members.size))
        if val_fraction > 0 and members.size >= 2:
            k = max(k, 1)
        chosen = np.zeros(members.size, dtype=bool)
        chosen[rng.permutation(members.size)[:k]] = True
        val.append(members[chosen])
        train.append(members[~chosen])
    return SplitPlan(
        train=np.sort(np.concatenate(train)).astype(np.int64),
        val=np.sort(np.concatenate(val)).astype(np.int64),
        test=np.sort(np.asarray(test)).astype(np.int64),
        protocol=protocol,
    )
