"""Exception hierarchy shared across the package."""


class RefgameError(Exception):
    """Base class for all package errors."""


class SchemaError(RefgameError):
    """A file or record does not match the canonical schema."""


class IntegrityError(RefgameError):
    """Structurally valid data violates a corpus invariant (dangling id,
    overlapping spans, referent outside the speaker's view, ...)."""


class GenerationError(RefgameError):
    """Rejection sampling exhausted its attempt budget."""


class DivergenceError(RefgameError):
    """Training produced a non-finite loss or gradient."""


class GameAbortedError(RefgameError):
    """A selfplay game could not be completed."""
