"""Exception hierarchy shared across the package."""


class SpecbootError(Exception):
    """Base class for all errors raised by specboot."""


class DimensionError(SpecbootError, ValueError):
    pass


class DataError(SpecbootError, ValueError):
    """Input data is malformed (non-finite entries, ragged CSV rows, ...)."""


class NumericalError(SpecbootError, ArithmeticError):
    """A covariance could not be made positive definite, or output went non-finite."""


class EmptyComponentError(SpecbootError):
    """A mixture component received (almost) no responsibility mass."""

    def __init__(self, component, mass, threshold):
        self.component = component
        self.mass = mass
        self.threshold = threshold
        super().__init__(
            f"component {component} is empty: n_g={mass:.3g} < {threshold:.3g}"
        )


class UndefinedStatisticError(SpecbootError, ValueError):
    pass


class BootstrapError(SpecbootError):
    """Too many consecutive degenerate bootstrap samples."""


class EstimationSpaceError(SpecbootError, ValueError):
    """Attempt to compare fits estimated in different data spaces."""
