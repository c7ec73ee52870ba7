"""Exception hierarchy shared by every module."""


class BayesCNNError(Exception):
    """Base class for all package errors."""


class InputError(BayesCNNError, ValueError):
    """Bad user input: malformed data, out-of-range values, empty splits."""


class DimensionError(InputError):
    """Tensor shapes do not compose."""


class ContractError(BayesCNNError, RuntimeError):
    """A caller violated an API precondition."""


class NumericError(BayesCNNError, ArithmeticError):
    """Non-finite values or a solver that failed to converge."""


class CheckpointError(BayesCNNError):
    """A checkpoint file is malformed, truncated, or of the wrong version."""
