"""Exception hierarchy shared by every module of the package."""


class EmodaError(Exception):
    """Base class for all package errors."""


class DimensionError(EmodaError, ValueError):
    pass


class SequenceTooShortError(DimensionError):
    def __init__(self, length, minimum, what="sequence"):
        super().__init__(f"{what} has length {length}; at least {minimum} frames are required")
        self.length = length
        self.minimum = minimum


class ParameterError(EmodaError, ValueError):
    pass


class DomainError(EmodaError, ValueError):
    """Raised when a math op is evaluated outside its domain (e.g. log of 0)."""


class ContractError(EmodaError, ValueError):
    pass


class LabelError(EmodaError, ValueError):
    pass


class MissingClassError(EmodaError, ValueError):
    def __init__(self, label, name=None):
        what = f"{label} ({name})" if name else str(label)
        super().__init__(f"emotion class {what} has no samples in the source training pool")
        self.label = label


class IngestionError(EmodaError, OSError):
    pass


class SplitError(EmodaError, ValueError):
    pass


class ConfigError(EmodaError, ValueError):
    pass


class DivergenceError(EmodaError, FloatingPointError):
    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class PhaseContractError(EmodaError, AssertionError):
    pass
