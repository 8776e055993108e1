"""Patch-hypergraph contrastive stain transfer, desk scale.

The package is organized bottom-up: ``tensor`` (reverse-mode autodiff),
``patches`` / ``hypergraph`` / ``weighting`` / ``losses`` (the objective
stack), ``models`` (small conv nets), ``synth`` / ``metrics`` (data and
scoring), and ``config`` / ``train`` / ``evaluate`` / ``cli`` (the
harness).  ``gradcheck`` verifies every gradient by finite differences.
"""

from .errors import ConfigError, ContractError, FormatError, ShapeError, StnhclError
from .tensor import Graph, Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Graph",
    "StnhclError",
    "ShapeError",
    "ConfigError",
    "ContractError",
    "FormatError",
    "__version__",
]
