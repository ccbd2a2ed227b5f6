"""Magnetoelastic shallow shells: 3D energies, the thin-shell limit and the tools used to compare them."""

from magshell.errors import (
    ConfigError,
    DomainError,
    IntegrationError,
    MagshellError,
    NonInvertibleError,
    NumericalError,
    ProjectionError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "IntegrationError",
    "MagshellError",
    "NonInvertibleError",
    "NumericalError",
    "ProjectionError",
]
