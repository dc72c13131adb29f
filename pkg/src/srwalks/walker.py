"""Retraction-based random walks, transition/generator operators and statistics.

Replicas advance in lock-step batches.  Each replica owns a Philox stream
derived from ``(seed, replica)``, and batch composition depends only on
``CHUNK_SIZE``, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from . import srgeom
from .errors import HorizonExceeded
from .retractions import RetractionSpec, evaluate, step
from .srgeom import ScalarFieldSpec, SubRiemannianStructure

Array = np.ndarray

CHUNK_SIZE = 256
DRAW_BLOCK = 1024
GENERATOR_FLOOR = 1e-12

RNG_METADATA = {
    "bit_generator": "numpy.random.Philox (4x64, counter-based)",
    "stream_derivation": "SeedSequence(entropy=seed, spawn_key=(replica,))",
    "variates": "Generator.standard_normal, drawn per replica in blocks of "
                f"{DRAW_BLOCK} steps x sample dimension",
    "numpy_version": np.__version__,
}


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.Philox(ss))


def sample_horizontal_unit(S: SubRiemannianStructure, x: Array, rng: np.random.Generator) -> Array:
    """Uniform unit vector in ``H_x`` (normalised Gaussian frame coefficients)."""
    x = srgeom.check_domain(S, x)
    c = rng.standard_normal(x.shape[:-1] + (S.k,))
    c /= np.linalg.norm(c, axis=-1, keepdims=True)
    return np.einsum("...ia,...a->...i", srgeom.horizontal_matrix(S, x), c)


@dataclass(frozen=True)
class WalkConfig:
    retraction: RetractionSpec
    epsilon: float
    steps: int
    initial: Array
    seed: int = 0
    replicas: int = 1
    record_every: int = 1
    initial_frame: Optional[Array] = None
    structure_id: str = ""
    workers: int = 1

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if int(self.replicas) < 1 or int(self.record_every) < 1:
            raise ValueError("replicas and record_every must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def frame_walk(self) -> bool:
        return self.initial_frame is not None


@dataclass
class WalkPath:
    replica: int
    steps: Array                    # recorded step indices
    points: Array                   # (m, n)
    frames: Optional[Array] = None  # (m, n, n)
    status: str = "completed"
    exit_step: Optional[int] = None

    @property
    def censored(self) -> bool:
        return self.status != "completed"


def step_time(config: WalkConfig, S: SubRiemannianStructure) -> float:
    """``eps sqrt(k)`` for horizontal walks, ``eps sqrt(n)`` on the frame bundle."""
    dim = S.n if config.frame_walk else S.k
    return config.epsilon * math.sqrt(dim)


def _run_chunk(S: SubRiemannianStructure, config: WalkConfig, replicas: Sequence[int]) -> List[WalkPath]:
    R = config.retraction
    nrep = len(replicas)
    gens = [replica_rng(config.seed, r) for r in replicas]
    dim = S.n if config.frame_walk else S.k
    t_step = step_time(config, S)
    x = np.tile(np.asarray(config.initial, dtype=float), (nrep, 1))
    F = None
    if config.frame_walk:
        F = np.tile(np.asarray(config.initial_frame, dtype=float), (nrep, 1, 1))
    alive = np.ones(nrep, dtype=bool)
    exit_step = np.full(nrep, -1)
    rec_steps = [0]
    rec_x = [x.copy()]
    rec_F = [F.copy()] if F is not None else None
    rec_alive = [alive.copy()]
    done = 0
    while done < config.steps:
        block = min(DRAW_BLOCK, config.steps - done)
        normals = np.stack([g.standard_normal((block, dim)) for g in gens], axis=1)
        for b in range(block):
            s = done + b + 1
            idx = np.flatnonzero(alive)
            if idx.size:
                c = normals[b, idx]
                c = c / np.linalg.norm(c, axis=-1, keepdims=True)
                xa = x[idx]
                if F is None:
                    u = (srgeom.horizontal_matrix(S, xa) @ c[..., None])[..., 0]
                    xn, _, ok = step(R, xa, u, t_step)
                else:
                    Fa = F[idx]
                    u = (Fa @ c[..., None])[..., 0]
                    xn, Fn, ok = step(R, xa, u, t_step, Fa)
                if S.wrap is not None:
                    xn = S.wrap(xn)
                good = idx[ok]
                x[good] = xn[ok]
                if F is not None:
                    F[good] = Fn[ok]
                bad = idx[~ok]
                alive[bad] = False
                exit_step[bad] = s
            if s % config.record_every == 0 or s == config.steps:
                rec_steps.append(s)
                rec_x.append(x.copy())
                rec_alive.append(alive.copy())
                if F is not None:
                    rec_F.append(F.copy())
        done += block
    steps_arr = np.asarray(rec_steps)
    X = np.stack(rec_x, axis=1)
    FF = np.stack(rec_F, axis=1) if F is not None else None
    A = np.stack(rec_alive, axis=1)
    paths = []
    for i, r in enumerate(replicas):
        m = A[i]
        paths.append(WalkPath(
            replica=int(r), steps=steps_arr[m], points=X[i][m],
            frames=None if FF is None else FF[i][m],
            status="completed" if alive[i] else "left_domain",
            exit_step=None if alive[i] else int(exit_step[i])))
    return paths


def walk(S: SubRiemannianStructure, config: WalkConfig) -> List[WalkPath]:
    """Run ``config.replicas`` independent walks; one :class:`WalkPath` each.

    Every step samples a unit direction and moves by
    ``Ret_x(eps sqrt(k) u)``; frame walks use ``u = F(u_bar)`` with
    ``u_bar`` uniform on ``S^{n-1}`` and time ``eps sqrt(n)``.  Replicas that
    leave the chart are censored (``status == "left_domain"``), not raised.
    """
    srgeom.check_domain(S, config.initial)
    reps = list(range(int(config.replicas)))
    chunks = [reps[i : i + CHUNK_SIZE] for i in range(0, len(reps), CHUNK_SIZE)]
    if config.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda ch: _run_chunk(S, config, ch), chunks))
    else:
        results = [_run_chunk(S, config, ch) for ch in chunks]
    return [p for chunk in results for p in chunk]


@dataclass(frozen=True)
class Quadrature:
    """``deterministic`` with ``m`` circle nodes (k = 2) or the two-point rule
    (k = 1); ``montecarlo`` with ``N`` uniform directions from ``seed``."""

    kind: str = "deterministic"
    m: int = 32
    N: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("deterministic", "montecarlo"):
            raise ValueError(f"unknown quadrature {self.kind!r}")
        if self.kind == "deterministic" and self.m < 8:
            raise ValueError("deterministic quadrature needs m >= 8")
        if self.kind == "montecarlo" and self.N < 10_000:
            raise ValueError("Monte Carlo quadrature needs N >= 1e4")


def sphere_nodes(k: int, quad: Quadrature):
    """Unit coefficient vectors on ``S^{k-1}`` and equal weights."""
    if quad.kind == "deterministic":
        if k == 1:
            return np.array([[1.0], [-1.0]])
        if k == 2:
            th = 2 * np.pi * np.arange(quad.m) / quad.m
            return np.stack([np.cos(th), np.sin(th)], axis=-1)
        raise ValueError("deterministic quadrature is available for k <= 2 only; use montecarlo")
    c = np.random.Generator(np.random.Philox(quad.seed)).standard_normal((quad.N, k))
    return c / np.linalg.norm(c, axis=-1, keepdims=True)


def transition_operator(S: SubRiemannianStructure, R: RetractionSpec, f: ScalarFieldSpec, x: Array,
                        epsilon: float, quadrature: Quadrature = Quadrature(), return_stderr: bool = False):
    """``(U^eps f)(x)``: average of ``f(Ret_x(sqrt(k) eps u))`` over unit ``u`` in ``H_x``."""
    x = srgeom.check_domain(S, x)
    f0 = float(f(x))
    inc, se = _mean_increment(S, R, f, x, f0, epsilon, quadrature)
    return (f0 + inc, se) if return_stderr else f0 + inc


def _mean_increment(S, R, f, x, f0, epsilon, quadrature):
    """Average of ``f(Ret) - f(x)``; differencing before averaging limits cancellation."""
    if epsilon == 0:
        return 0.0, 0.0
    nodes = sphere_nodes(S.k, quadrature)
    xs = np.broadcast_to(x, (len(nodes), S.n))
    u = nodes @ srgeom.horizontal_matrix(S, x).T
    pts = evaluate(R, xs, u, epsilon * math.sqrt(S.k))
    d = f(pts) - f0
    se = float(np.std(d, ddof=1) / math.sqrt(len(d))) if quadrature.kind == "montecarlo" else 0.0
    return float(np.mean(d)), se


@dataclass(frozen=True)
class GeneratorProbe:
    f: ScalarFieldSpec
    base_points: Array
    epsilons: Sequence[float] = (0.2, 0.1, 0.05, 0.025, 0.0125)
    quadrature: Quadrature = Quadrature()

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if eps.size < 2 or np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
            raise ValueError("epsilon grid must be positive and strictly decreasing")


@dataclass
class GeneratorTable:
    epsilons: Array
    values: Array          # (len(eps), points): L^eps f
    targets: Array         # (points,)
    errors: Array          # (len(eps), points)
    slope: float           # log-log slope of max-over-points error vs eps
    point_slopes: Array
    exact: bool            # every error at or below the floor

    def rows(self):
        for i, e in enumerate(self.epsilons):
            for j in range(self.values.shape[1]):
                yield float(e), j, float(self.values[i, j]), float(self.targets[j]), float(self.errors[i, j])


def _loglog_slope(eps, err, floor):
    keep = err > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)[0])


def generator_estimate(S: SubRiemannianStructure, R: RetractionSpec, probe: GeneratorProbe,
                       target_scale: float = 1.0, floor: float = GENERATOR_FLOOR) -> GeneratorTable:
    """``L^eps f = (U^eps f - f) / eps^2`` on a grid of ``eps`` against
    ``target_scale * Delta^V f`` from :func:`srgeom.sub_laplacian`."""
    pts = np.atleast_2d(np.asarray(probe.base_points, dtype=float))
    eps = np.asarray(probe.epsilons, dtype=float)
    targets = target_scale * np.asarray(srgeom.sub_laplacian(S, pts, probe.f), dtype=float)
    f0 = probe.f(pts)
    vals = np.empty((eps.size, len(pts)))
    for i, e in enumerate(eps):
        for j, p in enumerate(pts):
            inc, _ = _mean_increment(S, R, probe.f, srgeom.check_domain(S, p), f0[j], e, probe.quadrature)
            vals[i, j] = inc / (e * e)
    errors = np.abs(vals - targets)
    worst = errors.max(axis=1)
    return GeneratorTable(
        epsilons=eps, values=vals, targets=targets, errors=errors,
        slope=_loglog_slope(eps, worst, floor),
        point_slopes=np.array([_loglog_slope(eps, errors[:, j], floor) for j in range(len(pts))]),
        exact=bool(np.all(errors <= floor)))


def time_scaled_sample(path: WalkPath, epsilon: float, t: float) -> Array:
    """``X^eps_t = x_{floor(t / eps^2)}``."""
    idx = int(math.floor(t / (epsilon * epsilon) + 1e-9))
    if t < 0:
        raise ValueError("t must be non-negative")
    hit = np.flatnonzero(path.steps == idx)
    if hit.size == 0:
        if idx > (path.steps[-1] if len(path.steps) else -1):
            raise HorizonExceeded(f"step {idx} beyond the recorded walk (last {int(path.steps[-1])})")
        raise HorizonExceeded(f"step {idx} was not recorded (record_every too coarse)")
    return path.points[hit[0]]


@dataclass
class MomentTable:
    functions: List[str]
    times: Array
    means: Array           # (functions, times)
    variances: Array
    stderr: Array
    used: int
    excluded: int


def moment_statistics(paths: Sequence[WalkPath], fs: Sequence[Union[ScalarFieldSpec, Callable]],
                      ts: Sequence[float], epsilon: float) -> MomentTable:
    """Mean, variance and standard error (std / sqrt(replicas)) of ``f(X_t)``
    over uncensored replicas."""
    kept = [p for p in paths if not p.censored]
    if len(kept) < 2:
        raise ValueError(f"need at least 2 uncensored replicas, have {len(kept)}")
    ts = np.asarray(ts, dtype=float)
    names = [getattr(f, "name", getattr(f, "__name__", f"f{i}")) for i, f in enumerate(fs)]
    means = np.empty((len(fs), ts.size))
    var = np.empty_like(means)
    for j, t in enumerate(ts):
        X = np.stack([time_scaled_sample(p, epsilon, t) for p in kept])
        for i, f in enumerate(fs):
            v = np.asarray(f(X), dtype=float)
            means[i, j] = v.mean()
            var[i, j] = v.var(ddof=1)
    se = np.sqrt(var / len(kept))
    return MomentTable(names, ts, means, var, se, len(kept), len(paths) - len(kept))
