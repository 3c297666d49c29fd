"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class DataError(ValidationError):
    """A panel file or dataset is malformed."""


class NumericalError(FloatingPointError):
    """A computation produced non-finite intermediate values."""


class InitializationError(RuntimeError):
    """No finite starting point could be found for a sampler chain."""
