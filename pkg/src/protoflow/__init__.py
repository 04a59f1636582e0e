"""Prototype-guided flow matching for desk-scale dataset distillation."""

__version__ = "0.1.0"

from .guided_sampler import GuidanceConfig, SolverConfig, synthesize_set
from .latent_space import ClassPool, MixtureSpec, fit_standardizer, sample_mixture_dataset
from .prototypes import PrototypeSet, build_prototypes
from .velocity import OracleMixtureField, TrainableField

__all__ = [
    "ClassPool", "GuidanceConfig", "MixtureSpec", "OracleMixtureField", "PrototypeSet",
    "SolverConfig", "TrainableField", "build_prototypes", "fit_standardizer",
    "sample_mixture_dataset", "synthesize_set",
]
