from homwb.types import ExitCode


class HomError(Exception):
    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message
        self.exit_code: int = ExitCode.INPUT_ERROR


class ParameterError(HomError):
    pass


class ResolutionError(ParameterError):
    def __init__(self, message: str = "time step too coarse"):
        super().__init__(message)


class RangeError(ParameterError):
    pass


class ModelValidityError(ParameterError):
    pass


class OverlapAmbiguityError(ParameterError):
    pass


class DomainError(HomError):
    pass


class NormalizationError(HomError):
    pass


class UndefinedVisibilityError(NormalizationError):
    def __init__(self, message: str = "visibility undefined: zero denominator"):
        super().__init__(message)


class DegenerateHeraldError(NormalizationError):
    def __init__(self, message: str = "herald has zero probability (alpha*delta = beta*gamma = 0)"):
        super().__init__(message)


class InputError(HomError):
    pass


class StreamFormatError(InputError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(HomError):
    pass


class OutputError(HomError):
    def __init__(self, message: str):
        super().__init__(message)
        self.exit_code = ExitCode.IO_ERROR
