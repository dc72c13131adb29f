#!/usr/bin/env python3
"""Anisotropic frame-bundle walk on the ellipsoid (Figure-1 regime).

Writes the projected path and its 3D embedding as CSV, plus the run summary.
"""

import argparse
import csv
import json
import time

from srwalks import models, walker
from srwalks.retractions import RetractionSpec, frame_orthonormality_residual


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--epsilon", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=35, help="default seed stays inside the pole band")
    ap.add_argument("--record-every", type=int, default=1)
    ap.add_argument("--out", default="figure1_path.csv")
    args = ap.parse_args()

    m = models.get_model("ellipsoid-frames")
    R = RetractionSpec("ret3prime", m.structure, m.connections["levi-civita"], m.metric, m.anisotropy)
    cfg = walker.WalkConfig(R, args.epsilon, args.steps, m.start, seed=args.seed,
                            record_every=args.record_every, initial_frame=m.initial_frame())
    t0 = time.perf_counter()
    (path,) = walker.walk(m.structure, cfg)
    runtime = time.perf_counter() - t0
    xyz = models.ellipsoid_embedding(path.points)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "s", "t", "X", "Y", "Z"])
        for k, p, e in zip(path.steps, path.points, xyz):
            w.writerow([int(k), *map(repr, p.tolist()), *map(repr, e.tolist())])
    drift = frame_orthonormality_residual(m.metric, path.points, path.frames, m.anisotropy)
    print(json.dumps({"status": path.status, "exit_step": path.exit_step, "runtime_seconds": round(runtime, 2),
                      "F_A_drift": drift, "points": len(path.steps)}, indent=2))


if __name__ == "__main__":
    main()
