"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class GeometryError(Exception):
    """Base class for all errors raised by srwalks."""


class OutOfDomain(GeometryError):
    """A point lies outside the chart domain of a structure."""


class PoleProximity(OutOfDomain):
    """A point on the ellipsoid chart came too close to a pole."""


class SingularFrame(GeometryError):
    """The full frame (horizontal + complement) is numerically singular."""


class NotHorizontal(GeometryError):
    """A tangent vector expected to be horizontal is not."""


class NotCompatibleInput(GeometryError):
    """A connection expected to be H-compatible failed the predicate."""


class StepSizeInvalid(GeometryError):
    """Integration horizon or step size is not positive and finite."""


class HorizonExceeded(GeometryError):
    """A time-scaled sample was requested beyond the recorded walk."""


class LeftDomain(GeometryError):
    """An integration or walk left the chart domain.

    Carries the time of exit and the last state that was still valid.
    """

    def __init__(self, message: str, exit_time: float | None = None, last_state=None):
        super().__init__(message)
        self.exit_time = exit_time
        self.last_state = None if last_state is None else np.asarray(last_state)
