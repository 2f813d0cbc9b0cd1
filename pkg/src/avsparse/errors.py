"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an argument violates a value-level precondition."""


class ShapeError(ValueError):
    """Raised when array shapes or lengths are inconsistent."""
