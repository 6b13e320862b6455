"""Superquantile (CVaR) based supervised learning."""
from ._backend import BACKEND
from .losses import Dataset, LossKind, Task
from .oracles import (
    DualWeights,
    Objective,
    OracleOutput,
    erm_oracle,
    minibatch_oracle,
    smoothed_dual_weights,
    smoothed_oracle,
    superquantile_subgradient,
)
from .optimizers import OptimizerConfig, RunTrace, optimize
from .tail_measures import quantile, superquantile, tail_split

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "LossKind", "Task", "DualWeights", "Objective", "OracleOutput",
    "erm_oracle", "minibatch_oracle", "smoothed_dual_weights", "smoothed_oracle",
    "superquantile_subgradient", "OptimizerConfig", "RunTrace", "optimize",
    "quantile", "superquantile", "tail_split",
]
