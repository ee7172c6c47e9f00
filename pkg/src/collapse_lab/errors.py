"""Exception hierarchy."""


class CollapseLabError(Exception):
    """Base class for all package errors."""


class ZeroVector(CollapseLabError, ValueError):
    pass


class DimensionMismatch(CollapseLabError, ValueError):
    pass


class NonHermitianLeak(CollapseLabError, ArithmeticError):
    """An expectation value picked up an imaginary part."""


class VanishingBranch(CollapseLabError, ArithmeticError):
    """The measurement operator annihilated the state (impossible readout)."""


class NonPositive(CollapseLabError, ArithmeticError):
    pass


class InconsistentInput(CollapseLabError, ValueError):
    """State and derivative are not a norm-preserving pair."""


class DuplicateTime(CollapseLabError, ValueError):
    pass


class GridTooNarrow(CollapseLabError, ValueError):
    pass


class NotInKernel(CollapseLabError, ValueError):
    pass


class DegenerateEndpoint(CollapseLabError, ValueError):
    pass


class OutsideWorkedCase(CollapseLabError, ValueError):
    pass


class AllWeightsVanish(CollapseLabError, ArithmeticError):
    pass


class ConfigError(CollapseLabError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InvalidValue(ConfigError):
    pass


class UnknownFlag(ConfigError):
    pass
