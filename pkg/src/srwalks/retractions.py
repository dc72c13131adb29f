"""Explicit second-order retractions and the order-verification harness."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import srgeom
from .connections import AffineConnection, RiemannianMetric
from .errors import GeometryError, LeftDomain
from .geodesics import (
    affine_geodesic,
    affine_rhs,
    hamiltonian_endpoint_masked,
    hamiltonian_rhs,
    rk4_integrate,
)
from .srgeom import SubRiemannianStructure

Array = np.ndarray

EIG_FLOOR = 1e-14
ERROR_FLOOR = 1e-12
DEFAULT_T_GRID = tuple(10.0 ** -e for e in (1.0, 1.5, 2.0, 2.5, 3.0))


class RetractionKind(str, enum.Enum):
    EXACT = "exact"
    RET1 = "ret1"
    RET2 = "ret2"
    RET3 = "ret3"
    RET3_PRIME = "ret3prime"

    @property
    def carries_frame(self) -> bool:
        return self in (RetractionKind.RET3, RetractionKind.RET3_PRIME)


@dataclass(frozen=True)
class RetractionSpec:
    """What to evaluate: the kind plus the geometry it needs.

    ``connection`` is required for Ret2/Ret3/Ret3' (and for transporting a
    frame with the exact kind); ``metric`` for Ret3/Ret3'; ``anisotropy`` for
    Ret3'.  ``dt`` is the RK4 step used by the exact kind.
    """

    kind: RetractionKind
    structure: SubRiemannianStructure
    connection: Optional[AffineConnection] = None
    metric: Optional[RiemannianMetric] = None
    anisotropy: Optional[Array] = None
    dt: float = 1e-3

    def __post_init__(self):
        kind = RetractionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (RetractionKind.RET2, RetractionKind.RET3, RetractionKind.RET3_PRIME) and self.connection is None:
            raise ValueError(f"{kind.value} needs a connection")
        if kind.carries_frame and self.metric is None:
            raise ValueError(f"{kind.value} needs a Riemannian metric")
        if kind is RetractionKind.RET3_PRIME:
            if self.anisotropy is None:
                raise ValueError("ret3prime needs an anisotropy matrix")
            A = np.asarray(self.anisotropy, dtype=float)
            if abs(np.linalg.det(A)) < 1e-12:
                raise ValueError("anisotropy matrix is singular")
            object.__setattr__(self, "anisotropy", A)

    @property
    def label(self) -> str:
        if self.connection is None:
            return self.kind.value
        return f"{self.kind.value}[{self.connection.label}]"


def gamma_of(G: Array, u: Array) -> Array:
    """Index-free Christoffel matrix ``Gamma(u)[k, j] = u^i Gamma^k_{ij}``."""
    return np.einsum("...kij,...i->...kj", G, u)


def gamma_dot(G: Array, dG: Array, u: Array) -> Array:
    """``d/dt Gamma(x'(t))`` at 0 along the geodesic:
    ``u^a u^b (d_b Gamma^k_{aj} - Gamma^i_{ab} Gamma^k_{ij})``."""
    term1 = np.einsum("...kajb,...a,...b->...kj", dG, u, u)
    term2 = np.einsum("...iab,...a,...b,...kij->...kj", G, u, u, G)
    return term1 - term2


def spd_sqrt(M: Array):
    """Symmetric square root and its inverse via eigendecomposition."""
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w, V = np.linalg.eigh(M)
    if np.any(w < EIG_FLOOR):
        raise GeometryError(f"polar step: eigenvalue {np.min(w):.3g} below floor {EIG_FLOOR:g}")
    r = np.sqrt(w)
    S = np.einsum("...ia,...a,...ja->...ij", V, r, V)
    Sinv = np.einsum("...ia,...a,...ja->...ij", V, 1.0 / r, V)
    return S, Sinv


def _ret1(S, x, u, t):
    p = srgeom._flat_horizontal(S, x, u)
    g = srgeom._cometric(S, x)
    G = srgeom._dual_christoffels(S, x)
    gp = np.einsum("...ij,...j->...i", g, p)
    a = 2.0 * np.einsum("...ijk,...j,...k->...i", G, p, gp)
    q = np.einsum("...ljk,...l,...j->...k", G, p, p)
    b = np.einsum("...ik,...k->...i", g, q)
    t = np.asarray(t, dtype=float)[..., None]
    return x + t * gp + 0.5 * t * t * (a - b)


def _ret2_point(G, x, u, t):
    t = np.asarray(t, dtype=float)[..., None]
    return x + t * u - 0.5 * t * t * np.einsum("...ijk,...j,...k->...i", G, u, u)


def _ret3(R: RetractionSpec, x, u, t, F0):
    conn = R.connection
    G = conn(x)
    dG = conn.gamma_derivative(x)
    xt = _ret2_point(G, x, u, t)
    Gu = gamma_of(G, u)
    n = x.shape[-1]
    tt = np.asarray(t, dtype=float)[..., None, None]
    P = np.eye(n) - tt * Gu + 0.5 * tt * tt * (Gu @ Gu - gamma_dot(G, dG, u))
    A = R.anisotropy if R.kind is RetractionKind.RET3_PRIME else None
    E = P @ F0 if A is None else P @ F0 @ np.linalg.inv(A)
    gt = R.metric(xt)
    _, Sinv = spd_sqrt(np.swapaxes(E, -1, -2) @ gt @ E)
    Ft = E @ Sinv
    if A is not None:
        Ft = Ft @ A
    return xt, Ft


def step(R: RetractionSpec, x: Array, u: Array, t, frame: Optional[Array] = None):
    """Batch evaluation without raising on domain exit.

    Returns ``(x_new, frame_new, ok)``; ``ok`` marks results that stayed in the
    chart domain (for the exact kind: along the whole integrated geodesic).
    """
    S = R.structure
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    kind = R.kind
    Fn = None
    with np.errstate(all="ignore"):
        if kind is RetractionKind.EXACT:
            if np.all(np.asarray(t) == 0):
                return x.copy(), None if frame is None else np.array(frame, dtype=float), S.contains(x)
            if frame is None:
                p = srgeom._flat_horizontal(S, x, u)
                xn, _, ok = hamiltonian_endpoint_masked(S, x, p, float(t), R.dt)
            else:
                if R.connection is None:
                    raise ValueError("transporting a frame with the exact kind needs a connection")
                path = affine_geodesic(R.connection, x, np.asarray(t) * u, 1.0, R.dt / float(t),
                                       frame=frame, record=False)
                xn, Fn = path.x[-1], path.frames[-1]
                ok = np.all(np.isfinite(xn), axis=-1)
        elif kind is RetractionKind.RET1:
            xn = _ret1(S, x, u, t)
        elif kind is RetractionKind.RET2:
            xn = _ret2_point(R.connection(x), x, u, t)
        else:
            if frame is None:
                raise ValueError(f"{kind.value} needs an initial frame")
            xn, Fn = _ret3(R, x, u, t, np.asarray(frame, dtype=float))
        if kind is not RetractionKind.EXACT or frame is not None:
            ok = np.all(np.isfinite(xn), axis=-1) & S.contains(xn)
    return xn, Fn, ok


def evaluate(R: RetractionSpec, x: Array, u: Array, t, frame: Optional[Array] = None):
    """Point ``Ret_x(t u)``; returns ``(point, frame)`` when a frame is supplied
    (Ret3/Ret3' or exact transport).  ``t = 0`` gives ``x`` exactly."""
    x = srgeom.check_domain(R.structure, x)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    xn, Fn, ok = step(R, x, u, t, frame)
    if not np.all(ok):
        raise LeftDomain(f"{R.label} left the domain of {R.structure.name}", exit_time=float(np.max(t)),
                         last_state=x)
    if frame is not None:
        return xn, Fn
    return xn


class OrderResult(NamedTuple):
    slope: float            # fixed-effects log-log slope pooled over samples
    min_slope: float        # worst per-sample slope
    sample_slopes: Array
    errors: Array           # (samples, len(t_grid))
    t_grid: Array


def _fit_slopes(errors: Array, t_grid: Array, floor: float):
    logt = np.log(t_grid)
    slopes = []
    num = den = 0.0
    for e in errors:
        keep = e > floor
        if keep.sum() < 2:
            slopes.append(np.nan)
            continue
        lt, le = logt[keep], np.log(e[keep])
        dt_, de = lt - lt.mean(), le - le.mean()
        slopes.append(float(dt_ @ de / (dt_ @ dt_)))
        num += dt_ @ de
        den += dt_ @ dt_
    pooled = num / den if den > 0 else np.nan
    return float(pooled), np.array(slopes)


def order_test(R: RetractionSpec, oracle: Callable, samples, t_grid=DEFAULT_T_GRID,
               floor: float = ERROR_FLOOR) -> OrderResult:
    """Measure how fast ``Ret`` approaches ``oracle`` as ``t -> 0``.

    ``samples`` is ``(x, u)`` or ``(x, u, F0)`` with leading batch axes;
    ``oracle(x, u, t[, F0])`` returns the reference point (or point and frame).
    Errors are max-norms in chart coordinates, frame errors joined by max.
    Grid points with error at or below ``floor`` are left out of the fit.
    """
    x, u = np.asarray(samples[0], dtype=float), np.asarray(samples[1], dtype=float)
    F0 = None if len(samples) < 3 or samples[2] is None else np.asarray(samples[2], dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    errs = {}
    for t in sorted(t_grid):
        if F0 is None:
            got = evaluate(R, x, u, t)
            ref = oracle(x, u, t)
            err = np.abs(got - ref).max(axis=-1)
        else:
            got, Fg = evaluate(R, x, u, t, frame=F0)
            ref, Fr = oracle(x, u, t, F0)
            err = np.maximum(np.abs(got - ref).max(axis=-1),
                             np.abs(Fg - Fr).reshape(Fg.shape[:-2] + (-1,)).max(axis=-1))
        errs[t] = err
    errors = np.stack([errs[t] for t in t_grid], axis=-1).reshape(-1, len(t_grid))
    pooled, per = _fit_slopes(errors, t_grid, floor)
    return OrderResult(pooled, float(np.nanmin(per)) if np.any(np.isfinite(per)) else np.nan, per, errors, t_grid)


def frame_orthonormality_residual(metric: RiemannianMetric, x: Array, F: Array,
                                  A: Optional[Array] = None) -> float:
    """``||F^T g F - Id||_inf``, or the same for ``F A^{-1}`` (membership in ``F_A``)."""
    F = np.asarray(F, dtype=float)
    if A is not None:
        F = F @ np.linalg.inv(np.asarray(A, dtype=float))
    g = metric(np.asarray(x, dtype=float))
    M = np.swapaxes(F, -1, -2) @ g @ F
    return float(np.max(np.abs(M - np.eye(F.shape[-1]))))


class _ContinuedOracle:
    """Fine-step reference flow that reuses work across an increasing t-grid.

    Calls with the same initial data and a larger ``t`` continue the RK4 sweep
    from the previous endpoint instead of restarting at zero.
    """

    def __init__(self, rhs, dt):
        self.rhs = rhs
        self.dt = dt
        self._key = None
        self._t = 0.0
        self._y = None

    def advance(self, key, y0, t):
        if key != self._key or t < self._t:
            self._key, self._t, self._y = key, 0.0, y0
        if t > self._t:
            self._y = rk4_integrate(self.rhs, self._y, t - self._t, self.dt)
            self._t = t
        return self._y


def exact_oracle(S: SubRiemannianStructure, dt: float = 1e-5) -> Callable:
    """Normal geodesic endpoint with a fine RK4 step, for :func:`order_test`."""
    flow = _ContinuedOracle(hamiltonian_rhs(S), dt)
    n = S.n

    def oracle(x, u, t):
        x = srgeom.check_domain(S, x)
        u = np.asarray(u, dtype=float)
        key = (x.tobytes(), u.tobytes())
        y0 = np.concatenate([x, srgeom.flat_horizontal(S, x, u)], axis=-1)
        return flow.advance(key, y0, float(t))[..., :n].copy()

    return oracle


def transport_oracle(conn: AffineConnection, dt: float = 1e-5) -> Callable:
    """Affine geodesic plus parallel-transported frame with a fine RK4 step."""
    cache = {}

    def oracle(x, u, t, F0):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        flow = cache.setdefault(n, _ContinuedOracle(affine_rhs(conn, n, True), dt))
        key = (x.tobytes(), np.asarray(u).tobytes(), np.asarray(F0).tobytes())
        y0 = np.concatenate([x, np.broadcast_to(u, x.shape),
                             np.broadcast_to(F0, x.shape[:-1] + (n, n)).reshape(x.shape[:-1] + (n * n,))], axis=-1)
        y = flow.advance(key, y0, float(t))
        return y[..., :n].copy(), y[..., 2 * n:].reshape(x.shape[:-1] + (n, n)).copy()

    return oracle
