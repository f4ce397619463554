"""Exception hierarchy shared by all hamts modules."""


class HamtsError(Exception):
    """Base class for every error raised by the library."""


class TimeScaleError(HamtsError, ValueError):
    """Malformed cells, points outside the time scale, bad ranges."""


class SturmianViolation(TimeScaleError):
    """The jump operators fail to commute at ``t``."""

    def __init__(self, t, sigma_rho, rho_sigma):
        self.t = t
        self.sigma_rho = sigma_rho
        self.rho_sigma = rho_sigma
        super().__init__(
            f"Sturmian condition violated at t={t!r}: "
            f"sigma(rho(t))={sigma_rho!r} but rho(sigma(t))={rho_sigma!r}"
        )


class NotInTimeScale(TimeScaleError):
    def __init__(self, t, what="point"):
        self.t = t
        super().__init__(f"{what} t={t!r} does not belong to the time scale")


class ExprSyntaxError(HamtsError, ValueError):
    def __init__(self, message, text, pos):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at offset {pos} in {text!r}")


class EvaluationError(HamtsError, ArithmeticError):
    """Raised for division by zero inside an expression."""


class CoefficientError(HamtsError, ValueError):
    """Non-Hermitian block, indefinite weight or singular I - nu*A."""


class BoundaryError(HamtsError, ValueError):
    """Boundary matrices violate rank, normalization or isotropy."""


class NumericalError(HamtsError, RuntimeError):
    """Propagation failure, divergent root polish, singular disk radius."""


class DefinitenessError(NumericalError):
    """The weighted Gram matrix never becomes positive definite."""


class ClassificationInconclusive(NumericalError):
    """Eigenvalue tracks of F22 neither settle nor clearly diverge."""


class ConfigError(HamtsError, ValueError):
    """Problem configuration could not be parsed or validated."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
