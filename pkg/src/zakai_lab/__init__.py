"""Particle Zakai filters for correlated-noise systems and numerical checks of
the measure-valued Fokker-Planck and martingale-problem formulations."""

__version__ = "0.1.0"

from .errors import (CoefficientSingularityError, ConfigError, DivergenceError, FactorizationError,  # noqa: F401
                     MissingArtifactError, RiccatiBlowupError, UnsupportedInputError, ZakaiLabError,
                     ZeroMassError)
