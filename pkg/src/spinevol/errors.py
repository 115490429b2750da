"""Exception hierarchy. CLI exit codes key off the base classes."""


class SpinevolError(Exception):
    exit_code = 1


class InvalidInputError(SpinevolError, ValueError):
    exit_code = 2


class DomainError(InvalidInputError):
    """Argument outside the domain of an operation (e.g. pixel out of bounds)."""


class RangeError(InvalidInputError):
    """Query outside the sampled range; no extrapolation is performed."""


class AlgorithmError(SpinevolError):
    exit_code = 3


class NotFoundError(AlgorithmError):
    """Feature (marker blob, bright line) absent from the image."""


class UnreliableEstimateError(AlgorithmError):
    def __init__(self, message, correlation=None):
        super().__init__(message)
        self.correlation = correlation


class NoContourError(AlgorithmError):
    pass


class BundleIOError(SpinevolError, OSError):
    exit_code = 4

    def __init__(self, message, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


class FrameDecodeError(BundleIOError):
    def __init__(self, message, index, path=None):
        super().__init__(f"frame {index}: {message}", path)
        self.index = index
