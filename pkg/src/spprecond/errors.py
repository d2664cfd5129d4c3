"""Exception types raised across the solver stack."""


class ShiftResonant(ValueError):
    """The shift sits on (or too close to) an eigenvalue of the discrete Laplacian."""


class InvalidMedia(ValueError):
    """Media parameters that do not define a valid coefficient field."""


class IndivisibleGrid(ValueError):
    """Leaf boxes of width ``b`` do not tile a grid of size ``n``."""


class DegenerateGram(ArithmeticError):
    """The least-squares Gram matrix of a stencil fit is numerically zero."""


class SingularMatrix(ArithmeticError):
    """A frontal pivot block is numerically singular."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class MaxIterExceeded(RuntimeError):
    """GMRES did not reach the requested tolerance.

    The best iterate and the iteration report are attached so callers can
    still inspect a failed run.
    """

    def __init__(self, message, x, report):
        super().__init__(message)
        self.x = x
        self.report = report
