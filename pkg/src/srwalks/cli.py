"""Command-line front end.

Subcommands: ``walk``, ``generator-test``, ``retraction-order``,
``connection-check``.  Settings come from ``--config FILE`` (TOML, keys equal
to the long flag names with ``-`` or ``_``) and are overridden by flags.

Exit codes: 0 ok, 2 config error, 3 all replicas censored, 4 I/O error,
5 acceptance threshold not met.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from importlib import resources
from typing import Dict, List, Optional

import numpy as np

from . import __version__, connections as conn_mod, models, srgeom, walker
from .errors import GeometryError
from .retractions import (
    ERROR_FLOOR,
    RetractionKind,
    RetractionSpec,
    evaluate,
    exact_oracle,
    frame_orthonormality_residual,
    order_test,
    transport_oracle,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_CENSORED, EXIT_IO, EXIT_THRESHOLD = 0, 2, 3, 4, 5

DEFAULTS = {
    "model": "heisenberg",
    "retraction": "exact",
    "connection": None,
    "epsilon": 0.05,
    "steps": 100,
    "replicas": 1,
    "seed": 0,
    "record_every": 1,
    "out_paths": None,
    "out_summary": None,
    "out_table": None,
    "probe": "quad_xy",
    "eps_grid": [0.2, 0.1, 0.05, 0.025, 0.0125],
    "threshold": None,
    "quadrature_m": 32,
    "mc_samples": 100_000,
    "samples": 20,
    "target": "laplacian",
    "workers": 1,
    "dt": 1e-3,
}
THRESHOLDS = {"generator-test": 0.8, "retraction-order": 2.9}
TARGET_SCALE = {"laplacian": 1.0, "half-laplacian": 0.5}
TIMING_KEYS = ("runtime_seconds",)
EXECUTION_KEYS = ("workers",)  # affect speed only, left out of the config echo


class ConfigError(Exception):
    pass


def _float_list(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with defaults; flags win")
    common.add_argument("--model", help=f"registry name ({', '.join(models.registry_names())})")
    common.add_argument("--retraction", choices=[k.value for k in RetractionKind])
    common.add_argument("--connection", help="frame-parallel | kappa-corrected | levi-civita | flat (append ^adj for the adjoint)")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--steps", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--record-every", dest="record_every", type=int)
    common.add_argument("--out-paths", dest="out_paths")
    common.add_argument("--out-summary", dest="out_summary")
    common.add_argument("--out-table", dest="out_table", help="CSV table (default: stdout)")
    common.add_argument("--probe", choices=sorted(models.PROBES))
    common.add_argument("--eps-grid", dest="eps_grid", type=_float_list, help="comma separated, decreasing")
    common.add_argument("--threshold", type=float)
    common.add_argument("--quadrature-m", dest="quadrature_m", type=int)
    common.add_argument("--mc-samples", dest="mc_samples", type=int)
    common.add_argument("--samples", type=int, help="random (x, u) pairs for retraction-order")
    common.add_argument("--target", choices=sorted(TARGET_SCALE), help="generator-test limit")
    common.add_argument("--workers", type=int, help="threads for replica chunks")
    common.add_argument("--dt", type=float, help="RK4 step of the exact retraction")

    p = argparse.ArgumentParser(prog="srwalks", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("walk", parents=[common], help="simulate retraction walks")
    sub.add_parser("generator-test", parents=[common], help="L^eps f against the sub-Laplacian")
    sub.add_parser("retraction-order", parents=[common], help="local order of a retraction")
    sub.add_parser("connection-check", parents=[common], help="compatibility / normality / torsion matrix")
    return p


def resolve_config(args: argparse.Namespace) -> Dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from exc
        for key, val in data.items():
            k = key.replace("-", "_")
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[k] = val
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["eps_grid"] = _float_list(cfg["eps_grid"])
    if cfg["threshold"] is None:
        cfg["threshold"] = THRESHOLDS.get(args.command)
    return cfg


def load_model(cfg) -> models.ModelDescriptor:
    try:
        return models.get_model(cfg["model"])
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from exc


def resolve_connection(model: models.ModelDescriptor, name: str) -> conn_mod.AffineConnection:
    base, adj = (name[:-4], True) if name.endswith("^adj") else (name, False)
    if base not in model.connections:
        raise ConfigError(f"model {model.name} has no connection {base!r}; "
                          f"available: {', '.join(sorted(model.connections))}")
    c = model.connections[base]
    return conn_mod.adjoint(c) if adj else c


def build_retraction(model, cfg) -> RetractionSpec:
    try:
        kind = RetractionKind(cfg["retraction"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    conn_name = cfg["connection"]
    if conn_name is None and (kind in (RetractionKind.RET2,) or kind.carries_frame
                              or (kind is RetractionKind.EXACT and model.is_frame_bundle)):
        conn_name = "levi-civita" if "levi-civita" in model.connections else "kappa-corrected"
    conn = resolve_connection(model, conn_name) if conn_name else None
    try:
        return RetractionSpec(kind, model.structure, connection=conn, metric=model.metric,
                              anisotropy=model.anisotropy if kind is RetractionKind.RET3_PRIME else None,
                              dt=float(cfg["dt"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _open(path, mode="w"):
    return open(path, mode, newline="", encoding="utf-8")


def write_table(cfg, header: List[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    if cfg["out_table"]:
        with _open(cfg["out_table"]) as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def write_summary(cfg, summary: Dict) -> None:
    if cfg["out_summary"]:
        with _open(cfg["out_summary"]) as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def summary_schema() -> Dict:
    return json.loads(resources.files("srwalks").joinpath("summary.schema.json").read_text())


def _clean(v):
    """JSON-safe scalars (NaN/inf become null)."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _config_echo(command, cfg):
    echo = {k: cfg[k] for k in sorted(cfg) if k not in EXECUTION_KEYS}
    echo["command"] = command
    return echo


def cmd_walk(cfg) -> int:
    model = load_model(cfg)
    R = build_retraction(model, cfg)
    frame_walk = R.kind.carries_frame or model.is_frame_bundle
    F0 = None
    if frame_walk:
        if model.metric is None:
            raise ConfigError(f"model {model.name} has no metric for frame walks")
        F0 = model.initial_frame(model.start)
        if R.kind is RetractionKind.RET3 and model.anisotropy is not None:
            F0 = F0 @ np.linalg.inv(model.anisotropy)
    try:
        wc = walker.WalkConfig(R, float(cfg["epsilon"]), int(cfg["steps"]), model.start, seed=int(cfg["seed"]),
                               replicas=int(cfg["replicas"]), record_every=int(cfg["record_every"]),
                               initial_frame=F0, structure_id=model.name, workers=int(cfg["workers"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t0 = time.perf_counter()
    paths = walker.walk(model.structure, wc)
    runtime = time.perf_counter() - t0

    if cfg["out_paths"]:
        with _open(cfg["out_paths"]) as fh:
            for p in paths:
                for i, s in enumerate(p.steps):
                    rec = {"replica": p.replica, "step": int(s), "x": p.points[i].tolist()}
                    if p.frames is not None:
                        rec["F"] = p.frames[i].tolist()
                    fh.write(json.dumps(rec) + "\n")

    kept = [p for p in paths if not p.censored]
    moments = {}
    if len(kept) >= 2:
        X = np.stack([p.points[-1] for p in kept])
        fs = {f"x{i}": X[:, i] for i in range(X.shape[1])}
        if model.n >= 2:
            fs["quad_xy"] = X[:, 0] ** 2 + X[:, 1] ** 2
        for name, v in fs.items():
            moments[name] = {"mean": float(v.mean()), "variance": float(v.var(ddof=1)),
                             "stderr": float(v.std(ddof=1) / math.sqrt(len(v)))}
    summary = {
        "command": "walk",
        "version": __version__,
        "config": _config_echo("walk", cfg),
        "rng": dict(walker.RNG_METADATA),
        "model": model.name,
        "retraction": R.label,
        "step_time": walker.step_time(wc, model.structure),
        "replicas": len(paths),
        "censored": len(paths) - len(kept),
        "exit_steps": {str(p.replica): p.exit_step for p in paths if p.censored},
        "terminal_step": int(cfg["steps"]),
        "moments": moments,
        "runtime_seconds": runtime,
    }
    if frame_walk:
        A = model.anisotropy if R.kind is not RetractionKind.RET3 else None
        res = max(frame_orthonormality_residual(model.metric, p.points, p.frames, A) for p in paths)
        summary["orthonormality_residual"] = res
    write_summary(cfg, summary)
    print(f"walk {model.name} {R.label}: {len(paths)} replicas, {summary['censored']} censored, "
          f"{runtime:.2f} s")
    if not kept:
        print("all replicas left the chart domain", file=sys.stderr)
        return EXIT_CENSORED
    return EXIT_OK


def cmd_generator_test(cfg) -> int:
    model = load_model(cfg)
    R = build_retraction(model, cfg)
    if R.kind.carries_frame:
        raise ConfigError("generator-test works with horizontal retractions (exact, ret1, ret2)")
    f = models.PROBES[cfg["probe"]]()
    try:
        if model.k <= 2:
            quad = walker.Quadrature("deterministic", m=int(cfg["quadrature_m"]))
        else:
            quad = walker.Quadrature("montecarlo", N=int(cfg["mc_samples"]), seed=int(cfg["seed"]))
        probe = walker.GeneratorProbe(f, model.base_points, tuple(cfg["eps_grid"]), quad)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t0 = time.perf_counter()
    table = walker.generator_estimate(model.structure, R, probe, target_scale=TARGET_SCALE[cfg["target"]])
    runtime = time.perf_counter() - t0
    write_table(cfg, ["epsilon", "point", "L_eps_f", "target", "abs_error"], table.rows())
    thr = float(cfg["threshold"])
    passed = table.exact or (math.isfinite(table.slope) and table.slope >= thr)
    slope_txt = "exact (all errors <= 1e-12)" if table.exact else f"{table.slope:.4f}"
    print(f"slope: {slope_txt}  threshold: {thr}  {'PASS' if passed else 'FAIL'}", file=sys.stderr)
    write_summary(cfg, {
        "command": "generator-test", "version": __version__, "config": _config_echo("generator-test", cfg),
        "rng": dict(walker.RNG_METADATA), "model": model.name, "retraction": R.label,
        "slope": _clean(table.slope), "exact": table.exact, "passed": passed,
        "max_terminal_error": float(table.errors[-1].max()), "runtime_seconds": runtime})
    return EXIT_OK if passed else EXIT_THRESHOLD


def _order_samples(model, R, m, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    x = model.sample_points(m, seed)
    S = model.structure
    if R.kind.carries_frame:
        F0 = np.stack([model.initial_frame(p) for p in x])
        if R.kind is RetractionKind.RET3 and model.anisotropy is not None:
            F0 = F0 @ np.linalg.inv(model.anisotropy)
        ub = rng.standard_normal((m, S.n))
        ub /= np.linalg.norm(ub, axis=-1, keepdims=True)
        return x, (F0 @ ub[..., None])[..., 0], F0
    c = rng.standard_normal((m, S.k))
    c /= np.linalg.norm(c, axis=-1, keepdims=True)
    return x, (srgeom.horizontal_matrix(S, x) @ c[..., None])[..., 0], None


def cmd_retraction_order(cfg) -> int:
    model = load_model(cfg)
    R = build_retraction(model, cfg)
    x, u, F0 = _order_samples(model, R, int(cfg["samples"]), int(cfg["seed"]))
    t0 = time.perf_counter()
    if F0 is None:
        res = order_test(R, exact_oracle(model.structure), (x, u))
        ortho = None
    else:
        res = order_test(R, transport_oracle(R.connection), (x, u, F0))
        A = model.anisotropy if R.kind is RetractionKind.RET3_PRIME else None
        ortho = max(frame_orthonormality_residual(model.metric, *evaluate(R, x, u, t, frame=F0), A)
                    for t in res.t_grid)
    runtime = time.perf_counter() - t0
    rows = [(i, float(t), float(res.errors[i, j])) for i in range(res.errors.shape[0])
            for j, t in enumerate(res.t_grid)]
    write_table(cfg, ["sample", "t", "error"], rows)
    thr = float(cfg["threshold"])
    exact = bool(np.all(res.errors <= ERROR_FLOOR))
    passed = exact or (math.isfinite(res.slope) and res.slope >= thr)
    slope_txt = "exact (all errors <= 1e-12)" if exact else f"{res.slope:.4f} (worst sample {res.min_slope:.4f})"
    msg = f"slope: {slope_txt}  threshold: {thr}"
    if ortho is not None:
        msg += f"  orthonormality residual: {ortho:.2e}"
    print(f"{msg}  {'PASS' if passed else 'FAIL'}", file=sys.stderr)
    write_summary(cfg, {
        "command": "retraction-order", "version": __version__, "config": _config_echo("retraction-order", cfg),
        "rng": dict(walker.RNG_METADATA), "model": model.name, "retraction": R.label,
        "slope": _clean(res.slope), "min_slope": _clean(res.min_slope), "exact": exact,
        "orthonormality_residual": ortho, "passed": passed, "runtime_seconds": runtime})
    return EXIT_OK if passed else EXIT_THRESHOLD


PREDICATES = {
    "compatible": conn_mod.is_compatible,
    "normal": conn_mod.is_normal,
    "vertical_torsion": conn_mod.has_vertical_torsion,
}


def connection_matrix(model, names=None, m=50, seed=0):
    """``{name: {predicate: PredicateResult}}`` at scrambled Halton sample points."""
    pts = model.sample_points(m, seed)
    names = list(model.expected) if names is None else names
    return {name: {p: fn(resolve_connection(model, name), model.structure, pts) for p, fn in PREDICATES.items()}
            for name in names}


def cmd_connection_check(cfg) -> int:
    model = load_model(cfg)
    names = None
    if cfg["connection"]:
        names = [cfg["connection"]]
        resolve_connection(model, cfg["connection"])
    t0 = time.perf_counter()
    matrix = connection_matrix(model, names, seed=int(cfg["seed"]))
    runtime = time.perf_counter() - t0
    ok = True
    rows = []
    for name, preds in matrix.items():
        exp = model.expected.get(name, {})
        cells = []
        for p, r in preds.items():
            want = exp.get(p)
            good = want is None or want == r.holds
            ok &= good
            mark = "yes" if r.holds else "no"
            cells.append(f"{p}={mark}({r.residual:.1e}){'' if good else ' !'}")
            rows.append((name, p, r.holds, want, float(r.residual)))
        print(f"{name:22s} " + "  ".join(cells))
    if cfg["out_table"]:
        write_table(cfg, ["connection", "predicate", "holds", "expected", "residual"], rows)
    write_summary(cfg, {
        "command": "connection-check", "version": __version__, "config": _config_echo("connection-check", cfg),
        "rng": dict(walker.RNG_METADATA), "model": model.name, "passed": bool(ok),
        "predicates": {n: {p: {"holds": r.holds, "residual": float(r.residual)} for p, r in pr.items()}
                       for n, pr in matrix.items()},
        "runtime_seconds": runtime})
    return EXIT_OK if ok else EXIT_THRESHOLD


COMMANDS = {
    "walk": cmd_walk,
    "generator-test": cmd_generator_test,
    "retraction-order": cmd_retraction_order,
    "connection-check": cmd_connection_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
