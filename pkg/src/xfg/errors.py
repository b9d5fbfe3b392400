"""Exception hierarchy shared by every module."""

import numpy as np


class XfgError(Exception):
    pass


class ArgumentError(XfgError, ValueError):
    pass


class DomainError(XfgError, ValueError):
    pass


class ConfigError(XfgError, ValueError):
    pass


class ResolutionError(XfgError, ValueError):
    pass


class NonConvexityError(XfgError, RuntimeError):
    pass


class IndefiniteSystemError(XfgError, RuntimeError):
    pass


class SingularityError(XfgError, ArithmeticError):
    """Raised when the vector fields are linearly dependent at a point."""

    def __init__(self, point, sigma_min=None):
        self.point = np.asarray(point, dtype=float)
        self.sigma_min = sigma_min
        msg = f"vector fields are linearly dependent at x={self.point.tolist()}"
        if sigma_min is not None:
            msg += f" (smallest singular value {sigma_min:.3e})"
        super().__init__(msg)
