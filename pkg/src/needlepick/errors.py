"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration values (unknown shapes, bad bounds)."""


class ProtocolError(RuntimeError):
    """Raised when an API is driven out of contract (e.g. step after done)."""


class TrainingFault(RuntimeError):
    """Raised when a loss term turns non-finite; names the offending term."""

    def __init__(self, term: str, value=None):
        self.term = term
        self.value = value
        super().__init__(f"non-finite training loss in term '{term}' (value={value})")
