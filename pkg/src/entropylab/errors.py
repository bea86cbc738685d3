"""Exception types shared across the toolkit."""


class EntropyLabError(Exception):
    """Base class for toolkit errors."""


class StructureError(EntropyLabError, ValueError):
    """Shapes, dimensions or depths of the inputs do not fit together."""


class DomainError(EntropyLabError, ValueError):
    """A parameter lies outside the range where the quantity is defined."""


class DegenerateInputError(EntropyLabError, ValueError):
    """Input is well formed but degenerate (e.g. a weight with zero mass)."""
