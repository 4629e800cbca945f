"""Exception types raised across the library.

Everything derives from ValueError so callers that only care about
"bad input" can catch one type, while tests and the CLI can pin the
specific failure.
"""


class InvalidRangeError(ValueError):
    """A numeric argument is outside its documented range."""


class DimensionMismatchError(ValueError):
    """Array shapes are inconsistent with each other or with a config."""


class OrderingError(ValueError):
    """Timestep arguments violate the required ordering for a step."""


class DegenerateScheduleError(ValueError):
    """The noise schedule is numerically degenerate at the requested point."""


class NonMonotoneSpliceError(ValueError):
    """Splicing two timestep grids broke strict monotonicity.

    ``index`` is the first position whose value fails to decrease.
    """

    def __init__(self, index: int, value: float, next_value: float):
        self.index = index
        super().__init__(
            f"spliced timestep sequence is not strictly decreasing at index "
            f"{index}: {value:.6g} -> {next_value:.6g}"
        )


class PlanMismatchError(ValueError):
    """Two objects built against different timestep plans were combined."""


class ZeroRowError(ValueError):
    """A fused attention row summed to (numerically) zero."""


class ZeroVectorError(ValueError):
    """A zero vector was passed where a direction is required."""


class UnknownLayerError(ValueError):
    """A layer tag is absent from the active layer policy."""
