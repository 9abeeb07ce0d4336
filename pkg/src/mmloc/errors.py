"""Exception hierarchy shared by every stage of the toolkit."""

from __future__ import annotations


class MmlocError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(MmlocError, ValueError):
    """Degenerate directions, coincident points or parallel rays."""


class ConfigurationError(MmlocError, ValueError):
    """Invalid scenario/run files or mismatched array dimensions."""


class EstimationError(MmlocError, ValueError):
    """Channel estimation or path selection could not produce a value."""


class SolverError(MmlocError, ValueError):
    """A positioning or calibration problem is ill-posed for the given data."""


class NoDataError(MmlocError, ValueError):
    """An evaluation was requested over an empty data set."""


class StageError(MmlocError):
    """Failure of one pipeline stage, tagged with the stage name."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
