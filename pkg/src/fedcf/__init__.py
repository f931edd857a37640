"""Federated implicit-feedback matrix factorization under local differential privacy."""

from .data import InteractionDataset, RawRating, SplitMode, SplitPair
from .mechanism import MechanismParams, PerturbedReport
from .mf import HyperParams

__all__ = [
    "HyperParams",
    "InteractionDataset",
    "MechanismParams",
    "PerturbedReport",
    "RawRating",
    "SplitMode",
    "SplitPair",
]
__version__ = "0.1.0"
