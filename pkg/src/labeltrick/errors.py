class NumericalIntegrityError(ArithmeticError):
    """A quantity that must be non-negative or bounded came out wrong."""


class DenseModeRequired(ValueError):
    """Operation needs a materialized propagation matrix."""


class EnumerationTooLarge(ValueError):
    """Exact split enumeration was requested for too many training nodes."""
