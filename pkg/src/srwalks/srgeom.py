"""Chart-based sub-Riemannian structures.

A structure lives on a single chart of dimension ``n`` and is given by an
h-orthonormal horizontal frame ``E_1..E_k`` together with a complement frame
``V_1..V_{n-k}``.  The metric ``h`` on ``H`` is implicit in the frame.

All field callables are vectorised: they accept points of shape ``(..., n)``
and return arrays with the same leading batch shape.  Every operation below
inherits that broadcasting, which the walker relies on to advance many
replicas at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NotHorizontal, OutOfDomain, SingularFrame

FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4
COND_LIMIT = 1e12
TOL_SPAN = 1e-9

Array = np.ndarray


def _solve(a: Array, b: Array) -> Array:
    """Batched ``a @ x = b`` for vectors ``b`` of shape ``(..., n)``."""
    return np.linalg.solve(a, b[..., None])[..., 0]


def fd_jacobian(func: Callable[[Array], Array], x: Array, h: float = FD_STEP) -> Array:
    """Central-difference jacobian, entry ``(..., i, j) = d_j func_i``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for j in range(n):
        step = np.zeros(n)
        step[j] = h
        cols.append((np.asarray(func(x + step)) - np.asarray(func(x - step))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class VectorFieldSpec:
    """A vector field on the chart with an optional analytic jacobian."""

    value: Callable[[Array], Array]
    jacobian: Optional[Callable[[Array], Array]] = None

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def jac(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return fd_jacobian(self.value, x)

    @classmethod
    def constant(cls, vec: Sequence[float]) -> "VectorFieldSpec":
        vec = np.asarray(vec, dtype=float)

        def value(x):
            return np.broadcast_to(vec, np.shape(x)).copy()

        def jacobian(x):
            return np.zeros(np.shape(x) + (vec.size,))

        return cls(value, jacobian)


@dataclass(frozen=True)
class ScalarFieldSpec:
    """A scalar test function with optional analytic gradient and hessian."""

    value: Callable[[Array], Array]
    gradient: Optional[Callable[[Array], Array]] = None
    hessian: Optional[Callable[[Array], Array]] = None
    name: str = "f"

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return fd_jacobian(self.value, x)

    def hess(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        if self.gradient is not None:
            H = fd_jacobian(self.gradient, x)
        else:
            H = _fd_hessian(self.value, x, FD_STEP_SECOND)
        return 0.5 * (H + np.swapaxes(H, -1, -2))


def _fd_hessian(func, x, h):
    n = x.shape[-1]
    H = np.empty(x.shape + (n,))
    eye = np.eye(n) * h
    for i in range(n):
        for j in range(i, n):
            v = (func(x + eye[i] + eye[j]) - func(x + eye[i] - eye[j])
                 - func(x - eye[i] + eye[j]) + func(x - eye[i] - eye[j])) / (4 * h * h)
            H[..., i, j] = v
            H[..., j, i] = v
    return H


def _always(x):
    return np.ones(np.shape(x)[:-1], dtype=bool)


@dataclass(frozen=True)
class SubRiemannianStructure:
    """Horizontal orthonormal frame plus complement frame on one chart.

    ``domain`` maps points ``(..., n)`` to a boolean mask; ``wrap`` (optional)
    maps points back into a canonical range of a periodic chart.
    """

    n: int
    horizontal: tuple
    complement: tuple = ()
    domain: Callable[[Array], Array] = _always
    name: str = "structure"
    wrap: Optional[Callable[[Array], Array]] = None
    domain_error: type = OutOfDomain

    def __post_init__(self):
        object.__setattr__(self, "horizontal", tuple(self.horizontal))
        object.__setattr__(self, "complement", tuple(self.complement))
        if not 1 <= self.k <= self.n:
            raise ValueError(f"horizontal rank {self.k} not in [1, {self.n}]")
        if self.k + len(self.complement) != self.n:
            raise ValueError("horizontal and complement frames must span n fields")

    @property
    def k(self) -> int:
        return len(self.horizontal)

    @property
    def frame(self) -> tuple:
        return self.horizontal + self.complement

    def contains(self, x: Array) -> Array:
        return np.asarray(self.domain(np.asarray(x, dtype=float)), dtype=bool)


def check_domain(S: SubRiemannianStructure, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != S.n:
        raise ValueError(f"point has dimension {x.shape[-1]}, structure {S.name} needs {S.n}")
    if not np.all(np.isfinite(x)):
        raise OutOfDomain("non-finite chart coordinates")
    if not np.all(S.contains(x)):
        raise S.domain_error(f"point outside the chart domain of {S.name}")
    return x


def horizontal_matrix(S: SubRiemannianStructure, x: Array) -> Array:
    """Columns ``E_1(x)..E_k(x)``; shape ``(..., n, k)``. No domain checks."""
    return np.stack([E(x) for E in S.horizontal], axis=-1)


def frame_matrix(S: SubRiemannianStructure, x: Array) -> Array:
    """Full frame without checks (hot path)."""
    return np.stack([W(x) for W in S.frame], axis=-1)


def frame_jacobians(S: SubRiemannianStructure, x: Array) -> Array:
    """``dW[..., i, a, j] = d_j W_a^i`` for every full-frame field ``W_a``."""
    return np.stack([W.jac(x) for W in S.frame], axis=-2)


def full_frame_matrix(S: SubRiemannianStructure, x: Array) -> Array:
    x = check_domain(S, x)
    W = frame_matrix(S, x)
    cond = np.linalg.cond(W)
    if not np.all(np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularFrame(f"frame condition number {np.max(cond):.3g} exceeds {COND_LIMIT:g}")
    return W


def frame_coefficients(S: SubRiemannianStructure, x: Array, w: Array) -> Array:
    """Coefficients of ``w`` in the full frame ``E_1..E_k, V_1..V_{n-k}``."""
    try:
        return _solve(frame_matrix(S, x), np.asarray(w, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SingularFrame(str(exc)) from exc


def cometric(S: SubRiemannianStructure, x: Array) -> Array:
    x = check_domain(S, x)
    return _cometric(S, x)


def _cometric(S, x):
    EH = horizontal_matrix(S, x)
    return np.einsum("...ia,...ja->...ij", EH, EH)


def sharp(S: SubRiemannianStructure, x: Array, alpha: Array) -> Array:
    x = check_domain(S, x)
    return np.einsum("...ij,...j->...i", _cometric(S, x), np.asarray(alpha, dtype=float))


def flat_horizontal(S: SubRiemannianStructure, x: Array, u: Array, tol: float = TOL_SPAN) -> Array:
    """Covector ``alpha_u`` with ``alpha_u(E_i) = h(u, E_i)`` and ``alpha_u(V_j) = 0``."""
    x = check_domain(S, x)
    return _flat_horizontal(S, x, np.asarray(u, dtype=float), tol)


def _flat_horizontal(S, x, u, tol=TOL_SPAN):
    W = frame_matrix(S, x)
    try:
        c = _solve(W, u)
    except np.linalg.LinAlgError as exc:
        raise SingularFrame(str(exc)) from exc
    k = S.k
    resid = np.abs(c[..., k:]).max(axis=-1, initial=0.0) if k < S.n else np.zeros(c.shape[:-1])
    scale = np.maximum(1.0, np.abs(u).max(axis=-1))
    if np.any(resid > tol * scale):
        raise NotHorizontal(f"vector has complement component {np.max(resid):.3g}")
    rhs = np.zeros_like(c)
    rhs[..., :k] = c[..., :k]
    return _solve(np.swapaxes(W, -1, -2), rhs)


def dual_christoffels(S: SubRiemannianStructure, x: Array) -> Array:
    """``G[..., i, j, k] = 1/2 d_k g^{ij}``, exactly symmetric in ``(i, j)``."""
    x = check_domain(S, x)
    return _dual_christoffels(S, x)


def _dual_christoffels(S, x):
    EH = horizontal_matrix(S, x)
    JH = np.stack([E.jac(x) for E in S.horizontal], axis=-3)  # (..., a, i, k)
    P = np.einsum("...aik,...ja->...ijk", JH, EH)
    return 0.5 * (P + np.swapaxes(P, -3, -2))


def project_horizontal(S: SubRiemannianStructure, x: Array, w: Array) -> Array:
    x = check_domain(S, x)
    c = frame_coefficients(S, x, w)
    return np.einsum("...ia,...a->...i", horizontal_matrix(S, x), c[..., : S.k])


def lie_bracket(S: SubRiemannianStructure, x: Array, X: VectorFieldSpec, Y: VectorFieldSpec) -> Array:
    """``[X, Y](x) = DY X - DX Y``."""
    x = check_domain(S, x)
    return _bracket(x, X, Y)


def _bracket(x, X, Y):
    return (np.einsum("...ij,...j->...i", Y.jac(x), X(x))
            - np.einsum("...ij,...j->...i", X.jac(x), Y(x)))


def horizontal_divergence(S: SubRiemannianStructure, x: Array, Y: VectorFieldSpec) -> Array:
    """``div^V(Y) = -sum_i h(pr_H [Y, E_i], E_i)``."""
    x = check_domain(S, x)
    total = 0.0
    for i, E in enumerate(S.horizontal):
        c = frame_coefficients(S, x, _bracket(x, Y, E))
        total = total - c[..., i]
    return total


def sub_laplacian(S: SubRiemannianStructure, x: Array, f: ScalarFieldSpec) -> Array:
    """Sum of squares ``E_j(E_j f)`` plus the drift ``div^V(E_j) E_j f``."""
    x = check_domain(S, x)
    grad = f.grad(x)
    hess = f.hess(x)
    total = 0.0
    for E in S.horizontal:
        e = E(x)
        Ef = np.einsum("...i,...i->...", grad, e)
        EEf = (np.einsum("...i,...ij,...j->...", e, hess, e)
               + np.einsum("...i,...ij,...j->...", grad, E.jac(x), e))
        total = total + EEf + horizontal_divergence(S, x, E) * Ef
    return total


def horizontal_gradient_field(S: SubRiemannianStructure, f: ScalarFieldSpec) -> VectorFieldSpec:
    """The field ``x -> (df)^sharp(x)`` with an analytic jacobian."""

    def value(x):
        return np.einsum("...ij,...j->...i", _cometric(S, x), f.grad(x))

    def jacobian(x):
        dg = 2.0 * _dual_christoffels(S, x)
        return (np.einsum("...ijk,...j->...ik", dg, f.grad(x))
                + np.einsum("...ij,...jk->...ik", _cometric(S, x), f.hess(x)))

    return VectorFieldSpec(value, jacobian)


def sub_laplacian_literal(S: SubRiemannianStructure, x: Array, f: ScalarFieldSpec,
                          analytic: bool = True) -> Array:
    """``div^V((df)^sharp)`` evaluated directly; cross-check for :func:`sub_laplacian`."""
    Y = horizontal_gradient_field(S, f)
    if not analytic:
        Y = VectorFieldSpec(Y.value)
    return horizontal_divergence(S, x, Y)


def horizontal_norm(S: SubRiemannianStructure, x: Array, u: Array) -> Array:
    """``||u||_h`` read off the horizontal frame coefficients."""
    c = frame_coefficients(S, x, u)
    return np.linalg.norm(c[..., : S.k], axis=-1)
