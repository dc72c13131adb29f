"""Affine connections stored as coordinate Christoffel tables.

Index convention: ``gamma[..., i, j, k] = Gamma^i_{jk}`` with
``nabla_{d_j} d_k = Gamma^i_{jk} d_i``.  Derivative tables use
``dgamma[..., i, j, k, b] = d_b Gamma^i_{jk}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import srgeom
from .errors import NotCompatibleInput
from .srgeom import (
    FD_STEP_SECOND,
    SubRiemannianStructure,
    VectorFieldSpec,
    check_domain,
    fd_jacobian,
    frame_jacobians,
    frame_matrix,
)

Array = np.ndarray

COMPAT_TOL = 1e-8
COMPAT_TOL_FD = 1e-5


@dataclass(frozen=True)
class AffineConnection:
    christoffels: Callable[[Array], Array]
    label: str = "connection"
    derivative: Optional[Callable[[Array], Array]] = None

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.christoffels(np.asarray(x, dtype=float)), dtype=float)

    def gamma_derivative(self, x: Array) -> Array:
        """``d_b Gamma^i_{jk}``; analytic when available, else central FD (step 1e-4)."""
        x = np.asarray(x, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(x), dtype=float)
        return fd_jacobian(self.christoffels, x, h=FD_STEP_SECOND)


def flat_connection(n: int) -> AffineConnection:
    def christoffels(x):
        return np.zeros(np.shape(x)[:-1] + (n, n, n))

    def derivative(x):
        return np.zeros(np.shape(x)[:-1] + (n, n, n, n))

    return AffineConnection(christoffels, "flat", derivative)


def torsion(conn: AffineConnection, x: Array) -> Array:
    """``T^i_{jk} = Gamma^i_{jk} - Gamma^i_{kj}`` (coordinate fields commute)."""
    G = conn(x)
    return G - np.swapaxes(G, -1, -2)


def torsion_on(conn: AffineConnection, x: Array, X: Array, Y: Array) -> Array:
    return np.einsum("...ijk,...j,...k->...i", torsion(conn, x), X, Y)


def adjoint(conn: AffineConnection) -> AffineConnection:
    """``nabla^_X Y = nabla_X Y - T(X, Y)``, i.e. swap the two lower indices."""
    if getattr(conn, "_adjoint_of", None) is not None:
        return conn._adjoint_of

    def christoffels(x):
        return np.swapaxes(conn(x), -1, -2)

    def derivative(x):
        return np.swapaxes(conn.derivative(x), -2, -3)

    label = conn.label[:-len("^adj")] if conn.label.endswith("^adj") else conn.label + "^adj"
    adj = AffineConnection(christoffels, label, derivative if conn.derivative is not None else None)
    object.__setattr__(adj, "_adjoint_of", conn)
    return adj


def covariant_derivative(conn: AffineConnection, x: Array, X: VectorFieldSpec, Y: VectorFieldSpec) -> Array:
    """``(nabla_X Y)^i = X^j d_j Y^i + Gamma^i_{jk} X^j Y^k``."""
    x = np.asarray(x, dtype=float)
    Xv = X(x)
    return (np.einsum("...ij,...j->...i", Y.jac(x), Xv)
            + np.einsum("...ijk,...j,...k->...i", conn(x), Xv, Y(x)))


def _frame_covariant(conn, S, x):
    """Frame coefficients of ``nabla_{d_j} E_a``: ``C[..., j, a, b]`` (b over full frame)."""
    W = frame_matrix(S, x)
    Winv = np.linalg.inv(W)
    EH = W[..., :, : S.k]
    JH = frame_jacobians(S, x)[..., :, : S.k, :]  # (..., i, a, j)
    D = JH + np.einsum("...ijk,...ka->...iaj", conn(x), EH)  # (..., i, a, j)
    return np.einsum("...bi,...iaj->...jab", Winv, D)


class PredicateResult(NamedTuple):
    holds: bool
    residual: float


def compatibility_residual(conn: AffineConnection, S: SubRiemannianStructure, x: Array) -> Array:
    """Worst violation per point of the two compatibility conditions.

    (i) ``nabla_{d_j} E_a`` has no complement component; (ii) its horizontal
    coefficients are skew, ``h(nabla E_a, E_b) + h(E_a, nabla E_b) = 0``.
    """
    C = _frame_covariant(conn, S, np.asarray(x, dtype=float))
    k = S.k
    vert = np.abs(C[..., k:]).reshape(C.shape[:-3] + (-1,)).max(axis=-1, initial=0.0)
    Ch = C[..., :k]
    skew = np.abs(Ch + np.swapaxes(Ch, -1, -2)).reshape(Ch.shape[:-3] + (-1,)).max(axis=-1)
    return np.maximum(vert, skew)


def is_compatible(conn: AffineConnection, S: SubRiemannianStructure, sample_points: Array,
                  tol: float = COMPAT_TOL) -> PredicateResult:
    pts = check_domain(S, sample_points)
    r = float(np.max(compatibility_residual(conn, S, pts)))
    return PredicateResult(r <= tol, r)


def is_normal(conn: AffineConnection, S: SubRiemannianStructure, sample_points: Array,
              tol: float = COMPAT_TOL) -> PredicateResult:
    """Normal iff the adjoint connection is compatible."""
    return is_compatible(adjoint(conn), S, sample_points, tol)


def normality_dynamic_residual(conn: AffineConnection, S: SubRiemannianStructure,
                               x0: Array, p0: Array, T: float = 0.5, dt: float = 1e-3) -> float:
    """Integrate autoparallel covector curves and compare to the Hamiltonian flow.

    Autoparallel means ``nabla_{alpha^sharp} alpha = 0``, i.e.
    ``x' = g p`` and ``p_k' = Gamma^i_{jk} x'^j p_i``.
    """
    from .geodesics import hamiltonian_flow, rk4_integrate

    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    n = S.n

    def rhs(y):
        x, p = y[..., :n], y[..., n:]
        v = np.einsum("...ij,...j->...i", srgeom._cometric(S, x), p)
        dp = np.einsum("...ijk,...j,...i->...k", conn(x), v, p)
        return np.concatenate([v, dp], axis=-1)

    y_end = rk4_integrate(rhs, np.concatenate([x0, p0], axis=-1), T, dt)
    ref = hamiltonian_flow(S, x0, p0, T, dt, record=False)
    return float(max(np.abs(y_end[..., :n] - ref.x[-1]).max(), np.abs(y_end[..., n:] - ref.p[-1]).max()))


def vertical_torsion_residual(conn: AffineConnection, S: SubRiemannianStructure, x: Array) -> Array:
    """Largest horizontal frame coefficient of ``T(E_a, E_b)`` per point."""
    x = np.asarray(x, dtype=float)
    W = frame_matrix(S, x)
    EH = W[..., :, : S.k]
    T = torsion(conn, x)
    TEE = np.einsum("...ijk,...ja,...kb->...abi", T, EH, EH)
    coeff = np.einsum("...ci,...abi->...abc", np.linalg.inv(W), TEE)[..., : S.k]
    return np.abs(coeff).reshape(coeff.shape[:-3] + (-1,)).max(axis=-1)


def has_vertical_torsion(conn: AffineConnection, S: SubRiemannianStructure, sample_points: Array,
                         tol: float = COMPAT_TOL) -> PredicateResult:
    """Predicate ``T(H, H) subset V``."""
    pts = check_domain(S, sample_points)
    r = float(np.max(vertical_torsion_residual(conn, S, pts)))
    return PredicateResult(r <= tol, r)


def frame_parallel_connection(S: SubRiemannianStructure) -> AffineConnection:
    """The connection for which every full-frame field is parallel.

    With ``d_k = c^a_k W_a`` and ``c = W^{-1}``: ``Gamma[:, j, :] = -(d_j W) W^{-1}``.
    """

    def christoffels(x):
        x = np.asarray(x, dtype=float)
        Winv = np.linalg.inv(frame_matrix(S, x))
        dW = frame_jacobians(S, x)  # (..., i, a, j)
        return -np.einsum("...iaj,...ak->...ijk", dW, Winv)

    return AffineConnection(christoffels, "frame-parallel")


def kappa_tensor(S: SubRiemannianStructure, ref: AffineConnection, x: Array) -> Array:
    """``K[..., A, b, c] = h(kappa(W_A) E_b, E_c)`` for full-frame ``W_A``, horizontal ``b, c``."""
    x = np.asarray(x, dtype=float)
    k = S.k
    W = frame_matrix(S, x)
    Winv = np.linalg.inv(W)
    T = torsion(ref, x)
    # tau[A, b, c]: horizontal coefficient c of T'(W_A, W_b)
    TWW = np.einsum("...ijk,...jA,...kB->...ABi", T, W, W)
    tau = np.einsum("...ci,...ABi->...ABc", Winv, TWW)[..., :k]
    tH = tau[..., :, :k, :]  # (A, b, c)
    K = -tH + np.swapaxes(tH, -1, -2)
    pad = np.zeros_like(tH)
    pad[..., :k, :, :] = np.moveaxis(tau[..., :k, :k, :], -1, -3)  # tau[b, c, A] placed at [A, b, c]
    return 0.5 * (K + pad)


def kappa_correction(S: SubRiemannianStructure, ref: AffineConnection, sample_points: Optional[Array] = None,
                     tol: float = COMPAT_TOL) -> AffineConnection:
    """Correct a compatible connection so that its torsion maps ``H x H`` into ``V``.

    ``nabla = nabla' + kappa~`` where ``kappa~`` acts by the skew map ``kappa``
    on horizontal arguments and by zero on the complement.
    """
    if sample_points is not None:
        res = is_compatible(ref, S, sample_points, tol)
        if not res.holds:
            raise NotCompatibleInput(f"reference connection {ref.label!r} is not compatible "
                                     f"(residual {res.residual:.3g})")
    k = S.k

    def christoffels(x):
        x = np.asarray(x, dtype=float)
        W = frame_matrix(S, x)
        Winv = np.linalg.inv(W)
        K = kappa_tensor(S, ref, x)
        corr = np.einsum("...Aj,...bm,...Abc,...ic->...ijm", Winv, Winv[..., :k, :], K, W[..., :, :k])
        return ref(x) + corr

    return AffineConnection(christoffels, ref.label + "+kappa")


@dataclass(frozen=True)
class RiemannianMetric:
    """Metric tensor ``g_ij`` with analytic first and second derivatives.

    ``jacobian(x)[..., i, j, k] = d_k g_ij``;
    ``hessian(x)[..., i, j, k, l] = d_k d_l g_ij``.
    """

    metric: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    hessian: Optional[Callable[[Array], Array]] = None

    def __call__(self, x):
        return np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)


def levi_civita(metric: RiemannianMetric) -> AffineConnection:
    """Torsion-free metric connection, with an analytic derivative table if the
    metric supplies second derivatives."""

    def lowered(dg):
        # C[l, j, k] = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
        return 0.5 * (np.einsum("...lkj->...ljk", dg) + dg - np.einsum("...jkl->...ljk", dg))

    def christoffels(x):
        x = np.asarray(x, dtype=float)
        ginv = np.linalg.inv(metric(x))
        return np.einsum("...il,...ljk->...ijk", ginv, lowered(metric.jacobian(x)))

    def derivative(x):
        x = np.asarray(x, dtype=float)
        ginv = np.linalg.inv(metric(x))
        dg = metric.jacobian(x)
        d2g = metric.hessian(x)  # (i, j, k, b)
        C = lowered(dg)
        dC = 0.5 * (np.einsum("...lkjb->...ljkb", d2g) + d2g - np.einsum("...jklb->...ljkb", d2g))
        dginv = -np.einsum("...ip,...pqb,...ql->...ilb", ginv, dg, ginv)
        return (np.einsum("...ilb,...ljk->...ijkb", dginv, C)
                + np.einsum("...il,...ljkb->...ijkb", ginv, dC))

    return AffineConnection(christoffels, "levi-civita",
                           derivative if metric.hessian is not None else None)


def metric_compatibility_residual(conn: AffineConnection, metric: RiemannianMetric, x: Array) -> Array:
    """``max |nabla_k g_ij|`` per point; zero for a metric connection."""
    x = np.asarray(x, dtype=float)
    g = metric(x)
    G = conn(x)
    ng = (metric.jacobian(x)
          - np.einsum("...lki,...lj->...ijk", G, g)
          - np.einsum("...lkj,...il->...ijk", G, g))
    return np.abs(ng).reshape(ng.shape[:-3] + (-1,)).max(axis=-1)
