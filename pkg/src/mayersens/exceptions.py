"""Exception hierarchy. CLI exit codes key off these classes."""


class MayerSensError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(MayerSensError, ValueError):
    pass


class InvalidDynamicsError(MayerSensError, ValueError):
    """F(x) is empty or malformed (negative radius, f > g, ...)."""


class DomainError(MayerSensError, ValueError):
    """A query, stencil or schedule leaves the domain of a function or field."""


class CFLError(MayerSensError, ValueError):
    pass


class NumericalError(MayerSensError, RuntimeError):
    """A numerical stage failed (domain exit, pathology, breakdown)."""


class DomainExitError(NumericalError):
    """Characteristics or trajectories left the padded domain."""


class DichotomyError(NumericalError):
    """A dual arc that started nonzero vanished during integration."""


class SubgradientError(NumericalError):
    """The computable subgradient set is empty."""


class NoDifferentiabilityPointsError(NumericalError):
    pass


class ConfigError(MayerSensError, ValueError):
    """Malformed problem or run configuration; carries an optional location."""

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        loc = ""
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "")
            if source:
                loc = f"{source}: {loc}"
            loc += ": "
        super().__init__(loc + message)
