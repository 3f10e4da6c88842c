"""Python access to the obsmhe estimator core."""

from ._obsmhe import (
    CONVERGED,
    CertificationError,
    ConfigError,
    min_T,
    min_horizon,
    run_cli,
    simulate,
)

__all__ = [
    "CONVERGED",
    "CertificationError",
    "ConfigError",
    "min_T",
    "min_horizon",
    "run_cli",
    "simulate",
]
