"""Variable annuity valuation with rough Heston equity, Volterra mortality
and deep-signature least-squares Monte Carlo for the surrender decision."""

__version__ = "0.1.0"

from .equity import MarketParams
from .exceptions import (
    ConfigError,
    InputError,
    NumericalError,
    RoughVAError,
    SolverError,
    TrainingError,
)
from .grid import TimeGrid
from .lsmc import ContractSpec, backward_induction, evaluate_policy, no_surrender_price
from .mortality import MortalityParams
from .paths import simulate_bundle

__all__ = [
    "__version__",
    "MarketParams",
    "MortalityParams",
    "ContractSpec",
    "TimeGrid",
    "simulate_bundle",
    "backward_induction",
    "evaluate_policy",
    "no_surrender_price",
    "RoughVAError",
    "InputError",
    "ConfigError",
    "NumericalError",
    "TrainingError",
    "SolverError",
]
