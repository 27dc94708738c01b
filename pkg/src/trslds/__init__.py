"""Tree-structured recurrent switching linear dynamical systems.

Generative simulation, fully-Bayesian Gibbs inference with Polya-Gamma
augmentation, multi-scale dynamics extraction, and k-step forecasting.
"""

from .tree import TreeTopology, build_comb, build_tree
from .model import (
    EmissionParams,
    HierarchyPrior,
    LatentState,
    ModelParams,
    ModelPriors,
    TrialData,
    default_params,
    from_residual,
    log_joint,
    simulate,
    to_residual,
)

__all__ = [
    "TreeTopology", "build_tree", "build_comb",
    "EmissionParams", "HierarchyPrior", "LatentState", "ModelParams",
    "ModelPriors", "TrialData", "default_params", "from_residual",
    "log_joint", "simulate", "to_residual",
]

__version__ = "0.1.0"
