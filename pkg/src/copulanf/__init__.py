"""Normalizing flows with copula-coupled base distributions."""
from .copulas import Copula, GaussianCopula, GumbelCopula, IndependenceCopula
from .coupling import PRESETS, CopulaBase, make_preset, target_distribution
from .flow import Flow
from .marginals import Laplace, Marginal1D, Normal, StudentT, Uniform
from .numerics import DomainError, Rng
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Copula", "GaussianCopula", "GumbelCopula", "IndependenceCopula",
    "PRESETS", "CopulaBase", "make_preset", "target_distribution",
    "Flow", "Laplace", "Marginal1D", "Normal", "StudentT", "Uniform",
    "DomainError", "Rng", "TrainConfig", "train",
]
