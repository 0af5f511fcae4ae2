"""Exception hierarchy shared across the package."""


class MMFallError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MMFallError, ValueError):
    pass


class ConfigError(MMFallError, ValueError):
    pass


class ContractError(MMFallError, ValueError):
    """A caller violated a documented precondition."""


class GraphReuseError(MMFallError, RuntimeError):
    pass


class NumericError(MMFallError, FloatingPointError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class DegenerateBatchError(MMFallError, ValueError):
    pass


class ParseError(MMFallError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class LabelingError(MMFallError, ValueError):
    pass


class AlignmentError(MMFallError, ValueError):
    pass


class ImputationError(MMFallError, ValueError):
    pass


class NormalizationError(MMFallError, RuntimeError):
    pass


class SplitError(MMFallError, ValueError):
    pass


class RebalanceError(MMFallError, ValueError):
    pass


class UndefinedMetricError(MMFallError, ValueError):
    pass


class CheckpointError(MMFallError, ValueError):
    pass
