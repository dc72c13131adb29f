"""Geodesic random walks on sub-Riemannian structures given in chart coordinates.

Modules: ``srgeom`` (frames, cometric, sub-Laplacian), ``connections``,
``geodesics`` (RK4 flows), ``retractions``, ``walker``, ``models`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    GeometryError,
    HorizonExceeded,
    LeftDomain,
    NotCompatibleInput,
    NotHorizontal,
    OutOfDomain,
    PoleProximity,
    SingularFrame,
    StepSizeInvalid,
)

__all__ = [
    "GeometryError", "HorizonExceeded", "LeftDomain", "NotCompatibleInput", "NotHorizontal",
    "OutOfDomain", "PoleProximity", "SingularFrame", "StepSizeInvalid", "__version__",
]
