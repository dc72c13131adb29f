"""Acceptance criteria, one test (and one PASS/FAIL summary line) per criterion."""

import json
import time

import jsonschema
import numpy as np
import pytest

from srwalks import cli, geodesics as geo, models, srgeom, walker
from srwalks import retractions as rt
from srwalks.retractions import ERROR_FLOOR, RetractionSpec
from srwalks.walker import GeneratorProbe, Quadrature, WalkConfig

from conftest import unit_horizontal

T_GRID = rt.DEFAULT_T_GRID
FIGURE1_SEED = 35


def order_gate(res, threshold=2.9):
    """Slope gate; errors all at or below the floor count as exact agreement."""
    exact = bool(np.all(res.errors <= ERROR_FLOOR))
    ok = exact or res.slope >= threshold
    if exact:
        txt = f"exact to round-off (max err {res.errors.max():.1e}; horizontal normal geodesics are lines here)"
    else:
        txt = f"slope {res.slope:.3f} (worst sample {res.min_slope:.3f})"
    return ok, txt


def horizontal_samples(model, m=20, seed=0):
    x = model.sample_points(m, seed=seed)
    return x, unit_horizontal(model, x, np.random.default_rng(seed))


def test_criterion_1_ret1_order_heisenberg(heis, report):
    t0 = time.perf_counter()
    x, u = horizontal_samples(heis)
    res = rt.order_test(RetractionSpec("ret1", heis.structure), rt.exact_oracle(heis.structure, dt=1e-5), (x, u),
                        T_GRID)
    runtime = time.perf_counter() - t0
    ok, txt = order_gate(res)
    report(1, ok and runtime < 10, f"ret1/heisenberg {txt}, runtime {runtime:.1f} s (< 10 s)")


@pytest.mark.parametrize("name", ["heisenberg", "twisted"])
def test_criterion_2_ret2_kappa_order(name, report):
    m = models.get_model(name)
    x, u = horizontal_samples(m)
    R = RetractionSpec("ret2", m.structure, m.connections["kappa-corrected"])
    res = rt.order_test(R, rt.exact_oracle(m.structure, dt=1e-5), (x, u), T_GRID)
    ok, txt = order_gate(res)
    report(f"2.{name}", ok, f"ret2[kappa]/{name} {txt}")


@pytest.mark.parametrize("model_name,kind", [("ellipsoid", "ret3"), ("ellipsoid-frames", "ret3prime")])
def test_criterion_3_ret3_frames(model_name, kind, report):
    m = models.get_model(model_name)
    t0 = time.perf_counter()
    x = m.sample_points(20, seed=0)
    F0 = np.stack([m.initial_frame(p) for p in x])
    ub = np.random.default_rng(0).standard_normal((20, 2))
    ub /= np.linalg.norm(ub, axis=-1, keepdims=True)
    u = (F0 @ ub[..., None])[..., 0]
    lc = m.connections["levi-civita"]
    A = m.anisotropy if kind == "ret3prime" else None
    R = RetractionSpec(kind, m.structure, lc, m.metric, A)
    res = rt.order_test(R, rt.transport_oracle(lc, dt=1e-5), (x, u, F0), T_GRID)
    resid = max(rt.frame_orthonormality_residual(m.metric, *rt.evaluate(R, x, u, t, frame=F0), A) for t in T_GRID)
    runtime = time.perf_counter() - t0
    ok, txt = order_gate(res)
    report(f"3.{kind}", ok and resid <= 1e-9 and runtime < 30,
           f"{kind}/ellipsoid joint point+frame {txt}, frame residual {resid:.1e} (<= 1e-9), "
           f"runtime {runtime:.1f} s (< 30 s)")


@pytest.mark.parametrize("kind,conn", [("exact", None), ("ret1", None), ("ret2", "kappa-corrected")])
def test_criterion_4_generator_convergence(heis, kind, conn, report):
    t0 = time.perf_counter()
    R = RetractionSpec(kind, heis.structure, heis.connections[conn] if conn else None)
    probe = GeneratorProbe(models.quad_xy(), heis.base_points, (0.2, 0.1, 0.05, 0.025, 0.0125),
                           Quadrature("deterministic", m=32))
    table = walker.generator_estimate(heis.structure, R, probe)
    runtime = time.perf_counter() - t0
    terminal = float(table.errors[-1].max())
    slope_ok = table.exact or table.slope >= 0.8
    ok = terminal <= 0.4 and slope_ok and runtime < 60
    report(f"4.{kind}", ok,
           f"{R.label}: terminal |L f - 4| = {terminal:.3g} (<= 0.4), slope {table.slope:.3f} (>= 0.8), "
           f"L f = {table.values[-1].mean():.6f}, runtime {runtime:.1f} s")


def test_criterion_5_frame_parallel_geodesics_are_normal(heis, report):
    S = heis.structure
    x, u = horizontal_samples(heis, seed=5)
    aff = geo.affine_geodesic(heis.connections["frame-parallel"], x, u, 1.0, 1e-3)
    ham = geo.hamiltonian_flow(S, x, srgeom.flat_horizontal(S, x, u), 1.0, 1e-3)
    dist = float(np.max(np.abs(aff.x - ham.x)))
    report(5, dist <= 1e-6, f"sup path distance {dist:.2e} (<= 1e-6) over 20 initial conditions")


@pytest.mark.parametrize("name", ["heisenberg", "twisted"])
def test_criterion_6_connection_algebra(name, report):
    m = models.get_model(name)
    matrix = cli.connection_matrix(m)
    bad = []
    worst = 0.0
    for label, preds in matrix.items():
        for pred, r in preds.items():
            want = m.expected[label][pred]
            if r.holds != want:
                bad.append(f"{label}.{pred}")
            if want:
                worst = max(worst, r.residual)
    report(f"6.{name}", not bad and worst <= 1e-8,
           f"{name}: {len(matrix)} connections, mismatches {bad or 'none'}, worst holding residual {worst:.1e}")


def test_criterion_7_process_moments(heis, report):
    t0 = time.perf_counter()
    f = models.quad_xy()
    stats = {}
    for kind, seed in (("exact", 2024), ("ret1", 2025)):
        R = RetractionSpec(kind, heis.structure)
        cfg = WalkConfig(R, 0.02, 625, np.zeros(3), seed=seed, replicas=2000, record_every=625)
        tab = walker.moment_statistics(walker.walk(heis.structure, cfg), [f], [0.25], 0.02)
        stats[kind] = (tab.means[0, 0], tab.stderr[0, 0], tab.excluded)
    runtime = time.perf_counter() - t0
    (me, se_e, _), (m1, se_1, _) = stats["exact"], stats["ret1"]
    within = [bool(abs(m - 1.0) <= 3 * s) for m, s in ((me, se_e), (m1, se_1))]
    agree = bool(abs(me - m1) <= 3 * np.hypot(se_e, se_1))
    report(7, all(within) and agree and runtime < 300,
           f"E[x^2+y^2] exact {me:.4f} +- {se_e:.4f}, ret1 {m1:.4f} +- {se_1:.4f} (target 1.0 within 3 SE: "
           f"{within}), two-sample agree {agree}, runtime {runtime:.0f} s")


def test_criterion_8_figure1_regime(ellf, report):
    lc = ellf.connections["levi-civita"]
    R = RetractionSpec("ret3prime", ellf.structure, lc, ellf.metric, ellf.anisotropy)
    cfg = WalkConfig(R, 0.05, 20_000, ellf.start, seed=FIGURE1_SEED, record_every=1,
                     initial_frame=ellf.initial_frame())
    t0 = time.perf_counter()
    (p,) = walker.walk(ellf.structure, cfg)
    runtime = time.perf_counter() - t0
    drift = rt.frame_orthonormality_residual(ellf.metric, p.points, p.frames, ellf.anisotropy)
    report(8, (not p.censored) and runtime <= 30 and drift <= 1e-9,
           f"20000 ret3' steps, seed {FIGURE1_SEED}: status {p.status}, {runtime:.1f} s (<= 30 s), "
           f"F_A drift {drift:.1e} (<= 1e-9)")


def test_criterion_9_determinism(tmp_path, monkeypatch, report):
    monkeypatch.setattr(walker, "CHUNK_SIZE", 4)
    runs = [
        ["walk", "--model", "heisenberg", "--retraction", "exact", "--epsilon", "0.05", "--steps", "100",
         "--replicas", "10", "--seed", "7", "--out-paths", "p.jsonl", "--out-summary", "s.json"],
        ["walk", "--model", "ellipsoid-frames", "--retraction", "ret3prime", "--steps", "300", "--replicas", "6",
         "--seed", "3", "--out-paths", "p.jsonl", "--out-summary", "s.json"],
        ["retraction-order", "--model", "twisted", "--retraction", "ret1", "--samples", "4",
         "--out-table", "p.jsonl", "--out-summary", "s.json"],
        ["generator-test", "--model", "twisted", "--retraction", "ret1", "--out-table", "p.jsonl",
         "--out-summary", "s.json"],
    ]
    same = []
    for i, argv in enumerate(runs):
        outs = []
        for workers in ("1", "4"):
            d = tmp_path / f"{i}_{workers}"
            d.mkdir()
            monkeypatch.chdir(d)
            cli.main(argv + ["--workers", workers])
            jsonschema.validate(json.loads((d / "s.json").read_text()), cli.summary_schema())
            lines = [ln for ln in (d / "s.json").read_text().splitlines() if '"runtime_seconds"' not in ln]
            outs.append(((d / "p.jsonl").read_bytes(), lines))
        same.append(outs[0] == outs[1])
    report(9, all(same), f"byte-identical reruns (1 vs 4 threads, timing excluded) per command: {same}")
