"""Fixed-step RK4 integration of normal geodesics, affine geodesics and frame
parallel transport, plus the closed-form Heisenberg geodesic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import srgeom
from .connections import AffineConnection
from .errors import LeftDomain, StepSizeInvalid
from .srgeom import SubRiemannianStructure, check_domain

Array = np.ndarray


@dataclass
class GeodesicPath:
    """Recorded trajectory; arrays are indexed ``[time, ..., component]``."""

    times: Array
    x: Array
    p: Optional[Array] = None
    v: Optional[Array] = None
    frames: Optional[Array] = None
    hamiltonian_drift: Optional[float] = None

    @property
    def end(self) -> Array:
        return self.x[-1]


def _n_steps(T: float, dt: float) -> int:
    if not (np.isfinite(T) and np.isfinite(dt)) or T <= 0 or dt <= 0:
        raise StepSizeInvalid(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    return max(1, math.ceil(T / dt - 1e-9))


def rk4_step(rhs: Callable[[Array], Array], y: Array, h: float) -> Array:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(rhs, y0, T, dt, record=False, check=None):
    """Classical RK4 over ``[0, T]`` with ``N = ceil(T/dt)`` equal steps of ``T/N``.

    ``check(y)`` may raise to abort; with ``record`` the whole trajectory
    ``(N+1, ...)`` and the time grid are returned.
    """
    N = _n_steps(T, dt)
    h = T / N
    y = np.asarray(y0, dtype=float)
    traj = [y] if record else None
    for _ in range(N):
        y = rk4_step(rhs, y, h)
        if check is not None:
            check(y, _ + 1, h)
        if record:
            traj.append(y)
    if record:
        return np.linspace(0.0, T, N + 1), np.stack(traj)
    return y


def hamiltonian_rhs(S: SubRiemannianStructure):
    """Right-hand side of ``x' = g p``, ``p_i' = -Gamma^{jk}_i p_j p_k``.

    With ``g = sum_a E_a E_a^T`` the momentum equation factors as
    ``p_i' = -sum_a (p.E_a)(p.d_i E_a)``, which avoids the n^3 table.
    """
    n = S.n

    def rhs(y):
        x, p = y[..., :n], y[..., n:]
        EH = srgeom.horizontal_matrix(S, x)                       # (..., n, k)
        JH = np.stack([E.jac(x) for E in S.horizontal], axis=-3)  # (..., k, j, i) = d_i E_a^j
        c = (p[..., None, :] @ EH)[..., 0, :]
        dx = (EH @ c[..., None])[..., 0]
        pJ = (p[..., None, None, :] @ JH)[..., 0, :]             # (..., k, n)
        dp = -(c[..., None, :] @ pJ)[..., 0, :]
        return np.concatenate([dx, dp], axis=-1)

    return rhs


def hamiltonian(S: SubRiemannianStructure, x: Array, p: Array) -> Array:
    g = srgeom._cometric(S, np.asarray(x, dtype=float))
    return 0.5 * np.einsum("...i,...ij,...j->...", p, g, p)


def _domain_check(S, n):
    def check(y, step, h):
        x = y[..., :n]
        if not (np.all(np.isfinite(x)) and np.all(S.contains(x))):
            raise LeftDomain(f"trajectory left the domain of {S.name}", exit_time=step * h)
    return check


def hamiltonian_flow(S: SubRiemannianStructure, x0: Array, p0: Array, T: float, dt: float,
                     record: bool = True) -> GeodesicPath:
    """Normal geodesic from covector initial data ``(x0, p0)``."""
    x0 = check_domain(S, x0)
    p0 = np.asarray(p0, dtype=float)
    n = S.n
    y0 = np.concatenate(np.broadcast_arrays(x0, p0), axis=-1)
    last = {"y": y0}
    inner = _domain_check(S, n)

    def check(y, step, h):
        try:
            inner(y, step, h)
        except LeftDomain as exc:
            exc.last_state = last["y"]
            raise
        last["y"] = y

    if record:
        times, traj = rk4_integrate(hamiltonian_rhs(S), y0, T, dt, record=True, check=check)
    else:
        yT = rk4_integrate(hamiltonian_rhs(S), y0, T, dt, check=check)
        times, traj = np.array([0.0, T]), np.stack([y0, yT])
    H = hamiltonian(S, traj[..., :n], traj[..., n:])
    drift = float(np.max(np.abs(H - H[0])))
    return GeodesicPath(times, traj[..., :n], p=traj[..., n:], hamiltonian_drift=drift)


def normal_geodesic_horizontal(S: SubRiemannianStructure, x: Array, u: Array, T: float, dt: float,
                               record: bool = True) -> GeodesicPath:
    p0 = srgeom.flat_horizontal(S, x, u)
    return hamiltonian_flow(S, x, p0, T, dt, record=record)


def hamiltonian_endpoint_masked(S: SubRiemannianStructure, x: Array, p: Array, T: float, dt: float):
    """Batch endpoint without raising: returns ``(x_T, p_T, ok)`` where ``ok`` marks
    trajectories that stayed inside the domain at every step."""
    n = S.n
    ok = np.ones(x.shape[:-1], dtype=bool)

    def check(y, step, h):
        xs = y[..., :n]
        ok[...] &= np.all(np.isfinite(xs), axis=-1) & S.contains(xs)

    with np.errstate(all="ignore"):
        y = rk4_integrate(hamiltonian_rhs(S), np.concatenate([x, p], axis=-1), T, dt, check=check)
    return y[..., :n], y[..., n:], ok


def affine_rhs(conn: AffineConnection, n: int, with_frame: bool):
    def rhs(y):
        x, v = y[..., :n], y[..., n : 2 * n]
        G = conn(x)
        acc = -np.einsum("...ijk,...j,...k->...i", G, v, v)
        parts = [v, acc]
        if with_frame:
            F = y[..., 2 * n :].reshape(y.shape[:-1] + (n, n))
            dF = -np.einsum("...kij,...i,...jm->...km", G, v, F)
            parts.append(dF.reshape(y.shape[:-1] + (n * n,)))
        return np.concatenate(parts, axis=-1)

    return rhs


def affine_geodesic(conn: AffineConnection, x: Array, u: Array, T: float, dt: float,
                    frame: Optional[Array] = None, structure: Optional[SubRiemannianStructure] = None,
                    record: bool = True) -> GeodesicPath:
    """``x'' = -Gamma(x)(x', x')``; with ``frame`` the matrix ``F`` is transported
    along by ``F' + Gamma(x') F = 0`` in the same RK4 sweep."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = x.shape[-1]
    parts = list(np.broadcast_arrays(x, u))
    if frame is not None:
        F0 = np.broadcast_to(np.asarray(frame, dtype=float), x.shape[:-1] + (n, n))
        parts.append(F0.reshape(x.shape[:-1] + (n * n,)))
    y0 = np.concatenate(parts, axis=-1)
    check = _domain_check(structure, n) if structure is not None else None
    if structure is not None:
        check_domain(structure, x)
    rhs = affine_rhs(conn, n, frame is not None)
    if record:
        times, traj = rk4_integrate(rhs, y0, T, dt, record=True, check=check)
    else:
        times, traj = np.array([0.0, T]), np.stack([y0, rk4_integrate(rhs, y0, T, dt, check=check)])
    frames = None
    if frame is not None:
        frames = traj[..., 2 * n :].reshape(traj.shape[:-1] + (n, n))
    return GeodesicPath(times, traj[..., :n], v=traj[..., n : 2 * n], frames=frames)


def parallel_transport_frame(conn: AffineConnection, path, F0: Array, times: Optional[Array] = None) -> Array:
    """Transport ``F0`` along a curve by RK4 on ``F' + Gamma(x') F = 0``.

    ``path`` is either a :class:`GeodesicPath` with velocities (midpoints come
    from cubic Hermite interpolation) or a callable ``t -> (x, x')`` evaluated
    on ``times``.  Returns the frames at every grid time.
    """
    F = np.asarray(F0, dtype=float)

    def dF(x, v, F):
        return -np.einsum("...kij,...i,...jm->...km", conn(x), v, F)

    if callable(path):
        ts = np.asarray(times, dtype=float)
        states = [path(t) for t in ts]
        mids = [path(0.5 * (a + b)) for a, b in zip(ts[:-1], ts[1:])]
    else:
        if path.v is None:
            raise ValueError("path must carry velocities")
        ts = path.times
        states = list(zip(path.x, path.v))
        mids = []
        for i in range(len(ts) - 1):
            h = ts[i + 1] - ts[i]
            (x0, v0), (x1, v1) = states[i], states[i + 1]
            xm = 0.5 * (x0 + x1) + h * (v0 - v1) / 8.0
            vm = 1.5 * (x1 - x0) / h - 0.25 * (v0 + v1)
            mids.append((xm, vm))
    out = [F]
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        (x0, v0), (xm, vm), (x1, v1) = states[i], mids[i], states[i + 1]
        k1 = dF(x0, v0, F)
        k2 = dF(xm, vm, F + 0.5 * h * k1)
        k3 = dF(xm, vm, F + 0.5 * h * k2)
        k4 = dF(x1, v1, F + h * k3)
        F = F + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(F)
    return np.stack(out)


def heisenberg_exact_geodesic(x0: Array, p0: Array, t) -> Array:
    """Closed-form normal geodesic of the Heisenberg structure
    ``E_1 = dx - y/2 dz``, ``E_2 = dy + x/2 dz``.

    ``p_z = c`` is conserved; the horizontal velocity ``a = h_1 + i h_2`` rotates
    as ``a e^{ict}`` so ``w = x + iy`` moves on a circle and ``z`` accumulates
    half the swept area ``1/2 Im(conj(w) w')``.
    """
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    t = np.asarray(t, dtype=float)
    X, Y, Z = x0[..., 0], x0[..., 1], x0[..., 2]
    px, py, c = p0[..., 0], p0[..., 1], p0[..., 2]
    w0 = X + 1j * Y
    a = (px - 0.5 * Y * c) + 1j * (py + 0.5 * X * c)
    ct = c * t
    small = np.abs(ct) < 1e-3
    safe_c = np.where(small, 1.0, c)
    # phi = (e^{ict} - 1) / (ic),  psi = (t - sin(ct)/c) / c
    phi_series = t * (1 + 1j * ct / 2 - ct**2 / 6 - 1j * ct**3 / 24 + ct**4 / 120)
    psi_series = t * (ct / 6 - ct**3 / 120 + ct**5 / 5040) * t
    phi = np.where(small, phi_series, (np.exp(1j * ct) - 1) / (1j * safe_c))
    psi = np.where(small, psi_series, (t - np.sin(ct) / safe_c) / safe_c)
    w = w0 + a * phi
    z = Z + 0.5 * (np.imag(np.conj(w0) * a * phi) + np.abs(a) ** 2 * psi)
    return np.stack(np.broadcast_arrays(np.real(w), np.imag(w), z), axis=-1)
