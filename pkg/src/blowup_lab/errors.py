"""Exception types raised by the lab's numerical routines."""


class BlowupLabError(Exception):
    """Base class for all domain errors."""


class PreconditionError(BlowupLabError, ValueError):
    """An operation was called outside its documented domain."""


class NonpositiveE(BlowupLabError):
    """The profile numerator E(y, s) is not positive at some point."""

    def __init__(self, y, s, value):
        self.y = y
        self.s = s
        self.value = value
        super().__init__(f"E(y={y}, s={s}) = {value!r} <= 0 (delta or s too small)")


class NonpositiveBracket(BlowupLabError):
    """The bracket of the initial data is not positive at some point."""

    def __init__(self, y, value):
        self.y = y
        self.value = value
        super().__init__(f"initial-data bracket = {value!r} <= 0 at y={y} (s0 too small)")


class DivergesAtOrigin(BlowupLabError):
    """The final profile u* is infinite at a = 0."""


class OutOfHull(BlowupLabError):
    """A requested point lies outside the region where a field is known."""


class IntegrationOverflow(BlowupLabError):
    """Time integration left the regime where the solution is controlled."""

    def __init__(self, s, sup):
        self.s = s
        self.sup = sup
        super().__init__(f"sup|w| = {sup:.3e} at s = {s:.6f} exceeds the overflow guard")
