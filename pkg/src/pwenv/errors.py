"""Exception types shared across the package."""


class PwenvError(Exception):
    """Base class for all errors raised by pwenv."""


class ParseError(PwenvError):
    """Scenario or table file is not valid JSON."""


class ValidationError(PwenvError):
    """Input violates a type invariant.

    ``field`` holds a dotted path to the offending value, e.g. ``walls[2].id``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class BackFaceHit(PwenvError):
    """A ray reached a tile from behind; signals a geometry or routing bug."""


class BudgetTooSmall(PwenvError):
    pass


class NoPathError(PwenvError):
    """An objective cannot be satisfied on the current tile graph."""


class EmptyObject(PwenvError):
    pass


class PartitionError(PwenvError):
    """A command target is unreachable from the representative tile."""


class HashMismatch(PwenvError):
    """A report was produced for a different scenario file."""
