"""Exception hierarchy shared by the solver modules."""


class NlpcmError(Exception):
    """Base class for all package errors."""


class KernelError(NlpcmError, ValueError):
    """Inadmissible kernel parameters or a singular kernel evaluation."""


class GridError(NlpcmError, ValueError):
    """Grid construction failed or a query referenced an invalid point."""


class UnisolvencyError(NlpcmError):
    """Quadrature constraints could not be met for a stencil."""


class CoefficientError(NlpcmError, ValueError):
    """A diffusion coefficient left its admissible range (0, inf)."""


class SolverError(NlpcmError):
    """A linear solve failed to converge or the system lost definiteness."""


class ConfigError(NlpcmError, ValueError):
    """Invalid experiment configuration."""
