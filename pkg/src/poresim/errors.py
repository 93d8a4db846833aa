"""Exception hierarchy shared by the simulation modules."""


class PoresimError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PoresimError):
    """Invalid user input: files, scenario settings, CLI values."""


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfigError):
    pass


class DomainError(ConfigError, ValueError):
    pass


class EmptyNetworkError(ConfigError):
    pass


class NoWaterError(ConfigError):
    pass


class TooManySpots(ConfigError):
    pass


class ZeroProfile(PoresimError, ValueError):
    pass


class NumericalError(PoresimError):
    """Failures of the time integration or the linear solver."""


class BacktrackRequired(NumericalError):
    """Negativity after a step exceeded ``p_neg`` times the species total."""

    def __init__(self, message, species=None):
        self.species = species
        super().__init__(message)


class RepairOverdraw(BacktrackRequired):
    """Proportional debit during mass reallocation would overdraw a donor."""


class StepCollapse(NumericalError):
    pass


class SolverDivergence(NumericalError):
    pass


class NonFiniteEncountered(NumericalError):
    pass


class DimensionMismatch(PoresimError, ValueError):
    pass
