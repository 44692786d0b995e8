"""Numerical experiments for random transcendental dynamics.

Submodules: ``driving`` (base dynamics), ``maps`` (fiber families),
``nevanlinna`` (value distribution), ``julia`` (backward-orbit clouds),
``transfer`` (grid transfer operators), ``gibbs`` (conformal measures and
invariant densities), ``cones`` (cone contraction), ``stats``
(correlations and CLT) and ``cli`` (the ``randtrans`` runner).
"""
from .config import ExperimentConfig, load_config
from .errors import ConfigError, RandTransError

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "load_config", "ConfigError", "RandTransError", "__version__"]
