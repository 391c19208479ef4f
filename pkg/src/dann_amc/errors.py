class ShapeError(ValueError):
    """Array dimensions do not match what a layer or dataset expects."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DataError(ValueError):
    """Malformed input data (unparseable cell, unknown label, non-finite value)."""
