"""Exception types shared across the package."""


class InvalidParamsError(ValueError):
    """Parameters violate their invariants; ``violations`` lists every failure."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidDimensionError(ValueError):
    pass


class NumericalInvariantError(RuntimeError):
    """A density matrix or ensemble left its valid set during integration."""


class NonFiniteIncrementError(ValueError):
    pass


class RecordMismatchError(ValueError):
    """A measurement record does not match the model it is fed to."""


class DegenerateEnsembleError(RuntimeError):
    """All particle weights vanished; the caller may reinitialise the filter."""


class GridMismatchError(ValueError):
    pass


class ConfigError(ValueError):
    """Configuration file problems; ``violations`` lists all of them."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))
