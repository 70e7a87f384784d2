"""Bolthausen-Sznitman coalescent: block-counting chain, branch lengths,
the index-1 stable limit law and Monte Carlo convergence diagnostics."""

__version__ = "0.1.0"

from bscoal.errors import (
    DataError,
    DomainError,
    InvariantError,
    QuadratureError,
    ResourceError,
)

__all__ = [
    "__version__",
    "DataError",
    "DomainError",
    "InvariantError",
    "QuadratureError",
    "ResourceError",
]
