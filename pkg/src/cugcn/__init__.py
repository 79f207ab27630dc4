"""Graph classification of EEG-like feature graphs with uncertainty-masked, GPR-augmented GCNs."""

from .data import Dataset, SyntheticConfig, generate_synthetic, load_manifest, make_split
from .errors import (
    CugcnError,
    DivergenceError,
    DomainError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    SymmetryError,
)
from .experiments import RunReport, ablation_run, depth_sweep, evaluate, filter_curves
from .graph import Graph, normalize_sym
from .model import CuGcnModel, ModelConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, fit

__version__ = "0.1.0"
