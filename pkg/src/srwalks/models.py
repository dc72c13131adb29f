"""Built-in geometries with analytic derivatives and the model registry."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.stats import qmc

from . import connections as conn_mod
from .connections import AffineConnection, RiemannianMetric
from .errors import PoleProximity
from .srgeom import ScalarFieldSpec, SubRiemannianStructure, VectorFieldSpec

Array = np.ndarray

TWIST_MU = 0.3
POLE_MARGIN = 0.05
ELLIPSOID_C = 1.5
DEFAULT_ANISOTROPY = np.diag([4.0, 0.25])


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    structure: SubRiemannianStructure
    connections: Dict[str, AffineConnection]
    domain_description: str
    box: tuple                      # (low, high) for sampling interior points
    start: Array
    base_points: Array              # default probe points for generator tests
    analytic_frame: bool = True
    metric: Optional[RiemannianMetric] = None
    anisotropy: Optional[Array] = None
    expected: Dict[str, Dict[str, bool]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.structure.n

    @property
    def k(self) -> int:
        return self.structure.k

    @property
    def is_frame_bundle(self) -> bool:
        return self.anisotropy is not None

    def sample_points(self, m: int = 100, seed: int = 0) -> Array:
        """Scrambled Halton points in the model's sampling box."""
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        pts = qmc.Halton(d=lo.size, scramble=True, seed=seed).random(m)
        return lo + (hi - lo) * pts

    def initial_frame(self, x: Optional[Array] = None) -> Array:
        """Gram-Schmidt of the coordinate frame against ``g``, then right-multiplied by ``A``."""
        if self.metric is None:
            raise ValueError(f"model {self.name} has no Riemannian metric")
        x = self.start if x is None else np.asarray(x, dtype=float)
        return orthonormal_coordinate_frame(self.metric(x)) @ (
            np.eye(self.n) if self.anisotropy is None else self.anisotropy)


def orthonormal_coordinate_frame(g: Array) -> Array:
    n = g.shape[-1]
    F = np.zeros((n, n))
    for j in range(n):
        v = np.eye(n)[j]
        for i in range(j):
            v = v - (F[:, i] @ g @ v) * F[:, i]
        F[:, j] = v / np.sqrt(v @ g @ v)
    return F


def _field(value, jacobian):
    return VectorFieldSpec(value, jacobian)


def _jac_with(x, n, entries):
    J = np.zeros(np.shape(x) + (n,))
    for (i, j), val in entries.items():
        J[..., i, j] = val
    return J


def euclidean(n: int = 2) -> ModelDescriptor:
    if n < 1:
        raise ValueError("n must be >= 1")
    frame = [VectorFieldSpec.constant(np.eye(n)[i]) for i in range(n)]
    S = SubRiemannianStructure(n, frame, (), name=f"euclidean{n}")
    flat = conn_mod.flat_connection(n)

    def metric(x):
        return np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy()

    g = RiemannianMetric(metric, lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n)),
                         lambda x: np.zeros(np.shape(x)[:-1] + (n, n, n, n)))
    base = 0.5 * np.array([np.eye(n)[i % n] * (-1) ** i for i in range(4)] + [np.zeros(n)])
    truth = {"compatible": True, "normal": True, "vertical_torsion": True}
    return ModelDescriptor(
        name=f"euclidean{n}", structure=S,
        connections={"flat": flat, "frame-parallel": flat, "levi-civita": flat, "kappa-corrected": flat},
        domain_description="R^n", box=(-np.ones(n), np.ones(n)), start=np.zeros(n),
        base_points=base, metric=g, expected={"flat": truth, "flat^adj": truth})


def heisenberg() -> ModelDescriptor:
    E1 = _field(lambda x: np.stack(np.broadcast_arrays(1.0, 0.0, -0.5 * x[..., 1]), axis=-1),
                lambda x: _jac_with(x, 3, {(2, 1): -0.5}))
    E2 = _field(lambda x: np.stack(np.broadcast_arrays(0.0, 1.0, 0.5 * x[..., 0]), axis=-1),
                lambda x: _jac_with(x, 3, {(2, 0): 0.5}))
    V = VectorFieldSpec.constant([0.0, 0.0, 1.0])
    S = SubRiemannianStructure(3, (E1, E2), (V,), name="heisenberg")
    fp = conn_mod.frame_parallel_connection(S)
    kc = conn_mod.kappa_correction(S, fp)
    base = np.array([[0, 0, 0], [0.5, 0, 0], [0, -0.5, 0.2], [0.3, 0.4, -0.1], [-0.6, 0.2, 0.5]], dtype=float)
    return ModelDescriptor(
        name="heisenberg", structure=S,
        connections={"frame-parallel": fp, "kappa-corrected": kc, "flat": conn_mod.flat_connection(3)},
        domain_description="R^3", box=(-np.ones(3), np.ones(3)), start=np.zeros(3), base_points=base,
        expected={
            "frame-parallel": {"compatible": True, "normal": False, "vertical_torsion": True},
            "frame-parallel^adj": {"compatible": False, "normal": True, "vertical_torsion": True},
            "kappa-corrected": {"compatible": True, "normal": False, "vertical_torsion": True},
            "flat": {"compatible": False, "normal": False, "vertical_torsion": True},
        })


def twisted(mu: float = TWIST_MU) -> ModelDescriptor:
    E1 = VectorFieldSpec.constant([1.0, 0.0, 0.0])
    E2 = _field(lambda x: np.stack(np.broadcast_arrays(0.0, 1.0 + mu * x[..., 0], x[..., 0]), axis=-1),
                lambda x: _jac_with(x, 3, {(1, 0): mu, (2, 0): 1.0}))
    V = VectorFieldSpec.constant([0.0, 0.0, 1.0])

    def domain(x):
        return np.abs(x[..., 0]) < 1.0 / mu

    S = SubRiemannianStructure(3, (E1, E2), (V,), domain=domain, name="twisted")
    fp = conn_mod.frame_parallel_connection(S)
    kc = conn_mod.kappa_correction(S, fp)
    lim = 0.5 / mu
    base = np.array([[0, 0, 0], [0.5, 0, 0], [-0.5, 0.3, 0.2], [0.3, -0.4, -0.1], [1.0, 0.2, 0.5]], dtype=float)
    return ModelDescriptor(
        name="twisted", structure=S,
        connections={"frame-parallel": fp, "kappa-corrected": kc, "flat": conn_mod.flat_connection(3)},
        domain_description=f"|x| < {1.0 / mu:.4g}",
        box=(np.array([-lim, -1.0, -1.0]), np.array([lim, 1.0, 1.0])), start=np.zeros(3), base_points=base,
        expected={
            "frame-parallel": {"compatible": True, "normal": False, "vertical_torsion": False},
            "frame-parallel^adj": {"compatible": False, "normal": True, "vertical_torsion": False},
            "kappa-corrected": {"compatible": True, "normal": False, "vertical_torsion": True},
            "kappa-corrected^adj": {"compatible": False, "normal": True, "vertical_torsion": True},
            "flat": {"compatible": False, "normal": False, "vertical_torsion": True},
        })


def ellipsoid_metric(c: float = ELLIPSOID_C) -> RiemannianMetric:
    """Induced metric of ``(cos s sin t, sin s sin t, c cos t)`` in coordinates ``(s, t)``:
    ``g_ss = sin^2 t``, ``g_tt = cos^2 t + c^2 sin^2 t``, ``g_st = 0``."""
    a = c * c - 1.0

    def metric(x):
        t = x[..., 1]
        g = np.zeros(np.shape(x)[:-1] + (2, 2))
        g[..., 0, 0] = np.sin(t) ** 2
        g[..., 1, 1] = 1.0 + a * np.sin(t) ** 2
        return g

    def jacobian(x):
        t = x[..., 1]
        dg = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
        dg[..., 0, 0, 1] = np.sin(2 * t)
        dg[..., 1, 1, 1] = a * np.sin(2 * t)
        return dg

    def hessian(x):
        t = x[..., 1]
        d2 = np.zeros(np.shape(x)[:-1] + (2, 2, 2, 2))
        d2[..., 0, 0, 1, 1] = 2 * np.cos(2 * t)
        d2[..., 1, 1, 1, 1] = 2 * a * np.cos(2 * t)
        return d2

    return RiemannianMetric(metric, jacobian, hessian)


def ellipsoid_embedding(x: Array, c: float = ELLIPSOID_C) -> Array:
    s, t = x[..., 0], x[..., 1]
    return np.stack([np.cos(s) * np.sin(t), np.sin(s) * np.sin(t), c * np.cos(t)], axis=-1)


def _ellipsoid_structure(c: float, name: str) -> SubRiemannianStructure:
    a = c * c - 1.0

    def e1(x):
        t = x[..., 1]
        return np.stack(np.broadcast_arrays(1.0 / np.sin(t), 0.0), axis=-1)

    def e1_jac(x):
        t = x[..., 1]
        return _jac_with(x, 2, {(0, 1): -np.cos(t) / np.sin(t) ** 2})

    def e2(x):
        t = x[..., 1]
        return np.stack(np.broadcast_arrays(0.0, (1.0 + a * np.sin(t) ** 2) ** -0.5), axis=-1)

    def e2_jac(x):
        t = x[..., 1]
        gtt = 1.0 + a * np.sin(t) ** 2
        return _jac_with(x, 2, {(1, 1): -0.5 * gtt ** -1.5 * a * np.sin(2 * t)})

    def domain(x):
        t = x[..., 1]
        return (t > POLE_MARGIN) & (t < np.pi - POLE_MARGIN)

    def wrap(x):
        out = np.array(x, dtype=float, copy=True)
        out[..., 0] = np.mod(out[..., 0], 2 * np.pi)
        return out

    return SubRiemannianStructure(2, (_field(e1, e1_jac), _field(e2, e2_jac)), (), domain=domain,
                                  name=name, wrap=wrap, domain_error=PoleProximity)


def ellipsoid_surface(c: float = ELLIPSOID_C) -> ModelDescriptor:
    S = _ellipsoid_structure(c, "ellipsoid")
    g = ellipsoid_metric(c)
    lc = conn_mod.levi_civita(g)
    base = np.array([[0.0, np.pi / 2], [1.0, 1.0], [2.0, 2.0], [4.0, 1.3], [5.5, 2.4]])
    truth = {"compatible": True, "normal": True, "vertical_torsion": True}
    return ModelDescriptor(
        name="ellipsoid" if c == ELLIPSOID_C else f"ellipsoid(c={c:g})", structure=S,
        connections={"levi-civita": lc, "flat": conn_mod.flat_connection(2),
                     "frame-parallel": conn_mod.frame_parallel_connection(S)},
        domain_description=f"s mod 2pi, t in ({POLE_MARGIN}, pi - {POLE_MARGIN})",
        box=(np.array([0.0, 0.3]), np.array([2 * np.pi, np.pi - 0.3])),
        start=np.array([0.0, np.pi / 2]), base_points=base, metric=g,
        expected={"levi-civita": truth})


def ellipsoid_frame_bundle(A: Optional[Array] = None, c: float = ELLIPSOID_C) -> ModelDescriptor:
    """Ellipsoid with an anisotropy matrix; walks carry frames in ``F_A``."""
    A = DEFAULT_ANISOTROPY if A is None else np.asarray(A, dtype=float)
    if A.shape != (2, 2) or abs(np.linalg.det(A)) < 1e-12:
        raise ValueError("anisotropy must be an invertible 2x2 matrix")
    base = ellipsoid_surface(c)
    return ModelDescriptor(
        name="ellipsoid-frames", structure=base.structure, connections=base.connections,
        domain_description=base.domain_description, box=base.box, start=base.start,
        base_points=base.base_points, metric=base.metric, anisotropy=A, expected=base.expected)


def gaussian_curvature(conn: AffineConnection, metric: RiemannianMetric, x: Array) -> Array:
    """``K = R_{1212} / det g`` for a surface, from Christoffels and their derivatives."""
    x = np.asarray(x, dtype=float)
    G = conn(x)
    dG = conn.gamma_derivative(x)  # [i, j, k, b] = d_b Gamma^i_{jk}
    # R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma^i_{km} Gamma^m_{lj} - Gamma^i_{lm} Gamma^m_{kj}
    R = (np.einsum("...iljk->...ijkl", dG) - np.einsum("...ikjl->...ijkl", dG)
         + np.einsum("...ikm,...mlj->...ijkl", G, G) - np.einsum("...ilm,...mkj->...ijkl", G, G))
    g = metric(x)
    R1212 = np.einsum("...m,...m->...", g[..., 0, :], R[..., :, 1, 0, 1])
    return R1212 / np.linalg.det(g)


def metric_preserving_residual(S: SubRiemannianStructure, x: Array) -> Array:
    """``max |(L^V_V h)(E_a, E_b)|`` over complement fields ``V``; zero iff the
    complement is metric-preserving (the frame is orthonormal, so ``V(h(E_a,E_b)) = 0``)."""
    from .srgeom import _bracket, frame_coefficients

    x = np.asarray(x, dtype=float)
    worst = np.zeros(x.shape[:-1])
    k = S.k
    for Vf in S.complement:
        C = np.stack([frame_coefficients(S, x, _bracket(x, Vf, E))[..., :k] for E in S.horizontal], axis=-2)
        L = -(C + np.swapaxes(C, -1, -2))
        worst = np.maximum(worst, np.abs(L).reshape(L.shape[:-2] + (-1,)).max(axis=-1))
    return worst


# Probe functions for generator tests -------------------------------------------------------------

def quad_xy() -> ScalarFieldSpec:
    def value(x):
        return x[..., 0] ** 2 + x[..., 1] ** 2

    def gradient(x):
        g = np.zeros_like(x)
        g[..., 0] = 2 * x[..., 0]
        g[..., 1] = 2 * x[..., 1]
        return g

    def hessian(x):
        H = np.zeros(np.shape(x) + (np.shape(x)[-1],))
        H[..., 0, 0] = 2.0
        H[..., 1, 1] = 2.0
        return H

    return ScalarFieldSpec(value, gradient, hessian, name="quad_xy")


def coord_z() -> ScalarFieldSpec:
    def value(x):
        return x[..., -1] * 1.0

    def gradient(x):
        g = np.zeros_like(x)
        g[..., -1] = 1.0
        return g

    def hessian(x):
        return np.zeros(np.shape(x) + (np.shape(x)[-1],))

    return ScalarFieldSpec(value, gradient, hessian, name="coord_z")


def bump(radius: float = 2.0) -> ScalarFieldSpec:
    """``exp(1 - 1/(1 - |x|^2/R^2))`` inside the ball of radius ``R``, zero outside."""
    r2 = radius * radius

    def value(x):
        q = np.sum(x * x, axis=-1) / r2
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(q < 1, np.exp(1.0 - 1.0 / np.maximum(1.0 - q, 1e-300)), 0.0)

    def gradient(x):
        q = np.sum(x * x, axis=-1) / r2
        inside = q < 1
        d = np.maximum(1.0 - q, 1e-300)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            coef = np.where(inside, -value(x) / d**2 * 2.0 / r2, 0.0)
        return coef[..., None] * x

    return ScalarFieldSpec(value, gradient, None, name="bump")


PROBES: Dict[str, Callable[[], ScalarFieldSpec]] = {"quad_xy": quad_xy, "coord_z": coord_z, "bump": bump}


# Registry --------------------------------------------------------------------------------------

_REGISTRY: Dict[str, Callable[[], ModelDescriptor]] = {
    "heisenberg": heisenberg,
    "twisted": twisted,
    "ellipsoid": ellipsoid_surface,
    "ellipsoid-frames": ellipsoid_frame_bundle,
}
_CACHE: Dict[str, ModelDescriptor] = {}


def registry_names() -> list:
    return ["euclidean<n>"] + sorted(_REGISTRY)


def get_model(name: str) -> ModelDescriptor:
    if name in _CACHE:
        return _CACHE[name]
    m = re.fullmatch(r"euclidean(\d+)", name)
    if m:
        model = euclidean(int(m.group(1)))
    elif name in _REGISTRY:
        model = _REGISTRY[name]()
    else:
        raise KeyError(f"unknown model {name!r}; registry entries: {', '.join(registry_names())}")
    _CACHE[name] = model
    return model
