"""Contrastive representation learning robustness lab on a numpy autodiff core."""

from .errors import (ConfigError, ContractError, DegenerateInputError, DimensionError, DomainError,
                     TrainingAborted)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DegenerateInputError", "DimensionError", "DomainError",
           "Tensor", "TrainingAborted", "__version__"]
