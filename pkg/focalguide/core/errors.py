from __future__ import unicode_literals


class FocalGuideException(Exception):
    '''
    Base class for all errors raised by focalguide. `exit_code` is the status
    the `fg` command exits with when the error reaches it.
    '''
    exit_code = 1


class ConfigError(FocalGuideException, ValueError):
    """
    Raised when a configuration, record or command line value is invalid.
    """
    exit_code = 2


class ContractError(FocalGuideException):
    """
    Raised when an operation is called outside its contract, e.g. applying the
    attention cache to a layer that is not semantic-weak.
    """
    exit_code = 2


class NumericError(FocalGuideException, ArithmeticError):
    """
    Raised when a computation produces or receives non-finite or degenerate values.
    """
    exit_code = 3

    def __init__(self, message, step=None):
        self.message = message
        self.step = step
        super(NumericError, self).__init__(message)

    def __str__(self):
        if self.step is not None:
            return "{} (step {})".format(self.message, self.step)
        return self.message


class DegenerateVectorError(NumericError):
    pass


class DivergenceError(NumericError):
    pass


class StorageError(FocalGuideException, IOError):
    """
    Raised when reading or writing an artifact fails.
    """
    exit_code = 4


class TensorFormatError(StorageError):
    pass
