"""Exception hierarchy for the DP-GP-LVM package."""


class DPGPLVMError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DPGPLVMError, ValueError):
    pass


class InputError(DPGPLVMError, ValueError):
    """Invalid user input (shapes, ranges, simplex violations, ...)."""


class StructuralError(InputError):
    """A flat parameter vector does not match the layout implied by the config."""


class NumericError(DPGPLVMError, FloatingPointError):
    """Non-finite values where finite ones are required."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SingularKernelError(NumericError):
    """Cholesky factorization failed.

    ``minor`` is the 1-based order of the leading minor that is not
    positive definite, as reported by LAPACK ``potrf``.
    """

    def __init__(self, message, minor=None, block=None):
        super().__init__(message, block=block)
        self.minor = minor


class InitializationError(DPGPLVMError, ValueError):
    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank
