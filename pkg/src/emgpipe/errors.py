"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EmgpipeError(Exception):
    exit_code = 1


class ConfigError(EmgpipeError, ValueError):
    exit_code = 2


class ArgumentError(EmgpipeError, ValueError):
    """Bad argument to a library call (out-of-range parameter, wrong shape)."""

    exit_code = 2


class DesignError(ArgumentError):
    """Filter design request that cannot be realized (e.g. cutoff above Nyquist)."""


class DependencyError(EmgpipeError):
    exit_code = 3


class DataError(EmgpipeError, ValueError):
    exit_code = 4


class ValidationError(DataError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    pass


class FormatError(DataError):
    pass


class UnsupportedFeatureError(FormatError):
    pass


class CorruptStreamError(FormatError):
    pass


class VariableLookupError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegenerateError(DataError):
    pass


class FeatureError(DataError):
    pass


class StratificationError(DataError):
    pass


class SelectionError(DataError):
    def __init__(self, message, scores=None):
        super().__init__(message)
        self.scores = scores


class ContractError(EmgpipeError):
    """Model used with an input schema it was not trained on."""

    exit_code = 4


class VersionError(FormatError):
    pass


class IntegrityError(FormatError):
    pass


class NumericalError(EmgpipeError, ArithmeticError):
    exit_code = 5


class DivergenceError(NumericalError):
    pass
