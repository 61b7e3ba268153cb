"""Exception hierarchy shared by every cloaklab module."""


class CloakLabError(Exception):
    """Base class for all errors raised by cloaklab."""


class ConfigurationError(CloakLabError, ValueError):
    """Invalid parameters, sizes or options."""


class DomainError(CloakLabError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation at a source point or other pole."""


class InterfaceError(DomainError):
    """Evaluation on a measure-zero interface where a Jacobian is undefined."""


class AccuracyError(CloakLabError, RuntimeError):
    """A quadrature or refinement loop failed to stabilize."""


class CertificateError(CloakLabError, RuntimeError):
    """A solver residual certificate exceeded its gate.

    The offending model (or report) is attached so callers can still inspect
    or write it out.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
