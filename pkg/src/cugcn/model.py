"""Graph classifiers: vanilla GCN, SGC and the uncertainty-masked GPR network.

All forward passes are batched: propagators are ``[B, n, n]`` arrays and node
features ``[B, n, f]``. Graph-level readout is a mean over nodes followed by a
linear head and softmax.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .errors import DomainError, FormatError, ParameterError, ShapeError
from .graph import Graph, NormalizedPropagator, normalize_batch, normalize_sym
from .uncertainty import EXPECTED, STOCHASTIC, MaskParams, MaskSample, edge_predictor_loss, logit, sample_mask

VARIANTS = ("vgcn", "sgc", "cugcn")
MASK_MODES = ("adaptive", "fixed", "off")
CHECKPOINT_FORMAT = "cugcn-checkpoint v1"


@dataclass
class ModelConfig:
    n_features: int
    n_nodes: int = 62
    depth: int = 2
    hidden_dim: int = 32
    n_classes: int = 3
    variant: str = "cugcn"
    mask_mode: str = "adaptive"
    fixed_p: float = 0.9
    mask_init_p: float = 0.9
    gpr_init_gamma: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mask_mode not in MASK_MODES:
            raise ParameterError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if not 1 <= self.depth <= 16:
            raise ParameterError(f"depth must lie in 1..16, got {self.depth}")
        if self.hidden_dim < 1:
            raise ParameterError("hidden_dim must be >= 1")
        if self.n_classes < 2:
            raise ParameterError("n_classes must be >= 2")
        if not 0.0 < self.gpr_init_gamma < 1.0:
            raise ParameterError("gpr_init_gamma must lie in (0, 1)")
        for name in ("fixed_p", "mask_init_p"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1)")

    @property
    def masked(self):
        return self.variant == "cugcn" and self.mask_mode != "off"


def _prop_matrix(prop):
    if isinstance(prop, NormalizedPropagator):
        return prop.matrix
    return prop


def gcn_layer(prop, h, w):
    """``relu(A_sym @ H @ W)``."""
    h, w = nk.as_tensor(h), nk.as_tensor(w)
    if h.shape[-1] != w.shape[0]:
        raise ShapeError(f"feature width {h.shape[-1]} does not match weight rows {w.shape[0]}")
    return nk.relu(nk.matmul(nk.matmul(_prop_matrix(prop), h), w))


def sgc_forward(prop, x, k, w):
    """``A_sym^K X W`` with no intermediate nonlinearity."""
    if k < 1:
        raise ParameterError(f"SGC power must be >= 1, got {k}")
    x, w = nk.as_tensor(x), nk.as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"feature width {x.shape[-1]} does not match weight rows {w.shape[0]}")
    p = _prop_matrix(prop)
    h = x
    for _ in range(k):
        h = nk.matmul(p, h)
    return nk.matmul(h, w)


def masked_gcn_layer(prop, mask, h, w):
    """Uncertainty-masked propagation.

    Column ``j`` of the output is ``relu(sum_i (A_sym * Z[:, :, i]) @ H[:, i] * W[i, j])``
    where ``A_sym`` already holds the fixed self-looped degree normalisation.
    ``mask`` is a :class:`MaskSample` (factorised) or a dense ``n x n x f`` array.
    """
    h, w = nk.as_tensor(h), nk.as_tensor(w)
    p = _prop_matrix(prop)
    if h.shape[-1] != w.shape[0]:
        raise ShapeError(f"feature width {h.shape[-1]} does not match weight rows {w.shape[0]}")
    if isinstance(mask, MaskSample):
        if mask.feat.shape[-1] != h.shape[-1]:
            raise ShapeError(f"mask feature width {mask.feat.shape[-1]} != input width {h.shape[-1]}")
        edges = nk.mul(p, mask.pair)
        return nk.relu(nk.matmul(nk.matmul(edges, nk.mul(h, mask.feat)), w))
    z = nk.as_tensor(mask)
    n = h.shape[-2]
    if z.shape[-3:] != (n, n, h.shape[-1]):
        raise ShapeError(f"dense mask must be {n} x {n} x {h.shape[-1]}, got {z.shape}")
    edges = nk.mul(np.asarray(p, dtype=np.float64)[..., None], z)
    if edges.ndim == 4:
        if h.ndim == 2:
            h = nk.reshape(h, (1,) + h.shape) * np.ones((edges.shape[0], 1, 1))
        agg = nk.einsum("buvi,bvi->bui", edges, h)
    else:
        agg = nk.einsum("uvi,vi->ui", edges, h)
    return nk.relu(nk.matmul(agg, w))


def gpr_readout(layer_outputs, alpha):
    """``sum_l alpha_l * H^(l+1)``."""
    outs = [nk.as_tensor(o) for o in layer_outputs]
    alpha = nk.as_tensor(alpha)
    if alpha.size != len(outs):
        raise ShapeError(f"{alpha.size} GPR weights for {len(outs)} layer outputs")
    shape = outs[0].shape
    stacked = nk.reshape(nk.stack(outs, axis=0), (len(outs), -1))
    combined = nk.matmul(nk.reshape(alpha, (1, len(outs))), stacked)
    return nk.reshape(combined, shape)


def ppr_weights(depth, gamma):
    """Personalised-PageRank style initial weights ``gamma * (1 - gamma)**l``."""
    return np.array([gamma * (1.0 - gamma) ** l for l in range(depth)], dtype=np.float64)


def _check_simplex(v, name, atol=1e-6):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < -atol) or np.any(np.abs(v.sum(axis=-1) - 1.0) > atol):
        raise DomainError(f"{name} is not a probability vector")


def classification_loss(pred, soft_label):
    """Cross-entropy ``-sum_c y_c log p_c`` of a predicted distribution against a (soft) label.

    Predictions are clamped at 1e-9 before the log. Batched inputs return the mean.
    """
    y = np.asarray(soft_label, dtype=np.float64)
    _check_simplex(y, "label")
    if isinstance(pred, nk.Tensor):
        _check_simplex(pred.data, "prediction")
        clamped = nk.add(pred, 1e-9)
        ce = -nk.tsum(nk.mul(y, nk.log(clamped)), axis=-1)
        return nk.mean(ce) if ce.ndim else ce
    p = np.asarray(pred, dtype=np.float64)
    _check_simplex(p, "prediction")
    ce = -(y * np.log(np.maximum(p, 1e-9))).sum(axis=-1)
    return float(np.mean(ce))


def soft_cross_entropy(log_probs, soft_labels):
    """Mean cross-entropy from log-probabilities; the training-time form."""
    return nk.mean(-nk.tsum(nk.mul(log_probs, np.asarray(soft_labels)), axis=-1))


def total_loss(gc, ep, ep_scale=1.0):
    """``L_gc + ep_scale * L_ep``."""
    if ep_scale < 0:
        raise ParameterError("ep_scale must be >= 0")
    if isinstance(gc, nk.Tensor) or isinstance(ep, nk.Tensor):
        return nk.add(gc, nk.mul(ep, float(ep_scale)))
    out = float(gc) + float(ep_scale) * float(ep)
    if not np.isfinite(out):
        raise DomainError("total loss inputs must be finite")
    return out


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class CuGcnModel:
    """Parameter container and forward pass for all three classifier variants."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 11])
        c = config
        self.weights = []
        self.masks = []
        self.alpha = None
        self.head = None
        if c.variant == "sgc":
            self.weights.append(nk.parameter(_glorot(rng, c.n_features, c.n_classes), name="sgc.weight"))
            return
        widths = [c.n_features] + [c.hidden_dim] * c.depth
        for l in range(c.depth):
            self.weights.append(nk.parameter(_glorot(rng, widths[l], widths[l + 1]), name=f"layer{l}.weight"))
        self.head = nk.parameter(_glorot(rng, c.hidden_dim, c.n_classes), name="head.weight")
        if c.variant == "cugcn":
            self.alpha = nk.parameter(ppr_weights(c.depth, c.gpr_init_gamma), name="gpr_alpha")
            if c.mask_mode != "off":
                adaptive = c.mask_mode == "adaptive"
                p0 = c.mask_init_p if adaptive else c.fixed_p
                for l in range(c.depth):
                    self.masks.append(
                        MaskParams.init(c.n_nodes, widths[l], p=p0, trainable=adaptive, name=f"layer{l}.")
                    )

    # ------------------------------------------------------------ parameters

    def state(self):
        """Ordered name -> tensor map of every stored array, trainable or not."""
        out = {w.name: w for w in self.weights}
        for l, m in enumerate(self.masks):
            out[f"layer{l}.pair_logits"] = m.pair_logits
            out[f"layer{l}.feat_logits"] = m.feat_logits
        if self.alpha is not None:
            out["gpr_alpha"] = self.alpha
        if self.head is not None:
            out["head.weight"] = self.head
        return out

    def parameters(self):
        return {k: v for k, v in self.state().items() if v.requires_grad}

    def project_(self):
        for m in self.masks:
            if m.trainable:
                m.clamp_()

    def copy_state(self):
        return {k: v.data.copy() for k, v in self.state().items()}

    def load_state(self, arrays):
        for k, v in self.state().items():
            v.data[...] = arrays[k]

    # ------------------------------------------------------------ forward

    def _check_input(self, x):
        if x.shape[-1] != self.config.n_features:
            raise ShapeError(f"graph feature width {x.shape[-1]} != model input width {self.config.n_features}")
        if self.masks and x.shape[-2] != self.config.n_nodes:
            raise ShapeError(f"graph has {x.shape[-2]} nodes, masks were built for {self.config.n_nodes}")

    def node_layers(self, props, x, mode=EXPECTED, seed=None, step=0, t=0.67):
        """Per-layer node representations ``[H^(1), ..., H^(L)]``."""
        c = self.config
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        h = nk.Tensor(x)
        batch = x.shape[0] if x.ndim == 3 else None
        outs = []
        for l, w in enumerate(self.weights):
            if self.masks:
                if mode == STOCHASTIC:
                    key = (self.seed if seed is None else seed, l, step)
                    mask = sample_mask(self.masks[l], STOCHASTIC, t, rng=key, batch=batch)
                else:
                    mask = sample_mask(self.masks[l], EXPECTED)
                h = masked_gcn_layer(props, mask, h, w)
            else:
                h = gcn_layer(props, h, w)
            outs.append(h)
        return outs

    def logits(self, props, x, mode=EXPECTED, seed=None, step=0, t=0.67):
        """Graph-level class scores, shape ``[B, C]`` (or ``[C]`` for a single graph)."""
        c = self.config
        if c.variant == "sgc":
            x = np.asarray(x, dtype=np.float64)
            self._check_input(x)
            node = sgc_forward(props, x, c.depth, self.weights[0])
            return nk.mean(node, axis=-2)
        outs = self.node_layers(props, x, mode=mode, seed=seed, step=step, t=t)
        rep = gpr_readout(outs, self.alpha) if c.variant == "cugcn" else outs[-1]
        return nk.matmul(nk.mean(rep, axis=-2, keepdims=True), self.head).reshape(
            rep.shape[:-2] + (c.n_classes,)
        )

    def log_probs(self, props, x, mode=EXPECTED, seed=None, step=0, t=0.67):
        return nk.log_softmax(self.logits(props, x, mode=mode, seed=seed, step=step, t=t), axis=-1)

    def predict_proba(self, props, x):
        """Deterministic expected-mask class probabilities as a numpy array."""
        return np.exp(self.log_probs(props, x, mode=EXPECTED).data)

    def edge_loss(self, reduction="mean"):
        """Edge-predictor loss over both mask families of every masked layer."""
        if not self.masks:
            return nk.Tensor(0.0)
        terms = []
        for m, w in zip(self.masks, self.weights):
            terms.append((m.pair_probs(), w))
            terms.append((m.feat_probs(), w))
        return edge_predictor_loss(terms, reduction=reduction)


def classify(model, graph, mode=EXPECTED, seed=None, step=0, t=0.67):
    """Class distribution for one :class:`Graph`."""
    prop = normalize_sym(graph.adjacency).matrix
    lp = model.log_probs(prop, graph.features, mode=mode, seed=seed, step=step, t=t)
    return np.exp(lp.data)


def batch_propagators(adjacencies):
    return normalize_batch(np.asarray(adjacencies, dtype=np.float64))


def save_checkpoint(path, model, extra=None):
    """Write config, seed and every parameter array to an ``.npz`` container."""
    payload = {
        "format": np.array(CHECKPOINT_FORMAT),
        "config": np.array(json.dumps(asdict(model.config), sort_keys=True)),
        "seed": np.array(model.seed, dtype=np.int64),
        "extra": np.array(json.dumps(extra or {}, sort_keys=True)),
    }
    for name, t in model.state().items():
        payload[f"param:{name}"] = t.data
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, extra)``."""
    path = Path(path)
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"not a checkpoint ({exc})", path) from None
    with z:
        if "format" not in z.files or str(z["format"]) != CHECKPOINT_FORMAT:
            raise FormatError(f"expected {CHECKPOINT_FORMAT!r} container", path)
        config = ModelConfig(**json.loads(str(z["config"])))
        model = CuGcnModel(config, seed=int(z["seed"]))
        arrays = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
        extra = json.loads(str(z["extra"]))
    missing = set(model.state()) - set(arrays)
    if missing:
        raise FormatError(f"checkpoint lacks parameters {sorted(missing)}", path)
    model.load_state(arrays)
    return model, extra


__all__ = [
    "CuGcnModel",
    "Graph",
    "ModelConfig",
    "batch_propagators",
    "classification_loss",
    "classify",
    "gcn_layer",
    "gpr_readout",
    "load_checkpoint",
    "logit",
    "masked_gcn_layer",
    "ppr_weights",
    "save_checkpoint",
    "sgc_forward",
    "soft_cross_entropy",
    "total_loss",
]
