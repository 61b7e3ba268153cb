"""Numerical experiments on approximate cloaking of thin cylinders and small balls
for the Helmholtz equation with a sound-soft (Dirichlet) boundary."""

from .errors import (AccuracyError, CertificateError, CloakLabError, ConfigurationError,
                     DomainError, InterfaceError, SingularityError)

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "CertificateError",
    "CloakLabError",
    "ConfigurationError",
    "DomainError",
    "InterfaceError",
    "SingularityError",
    "__version__",
]
