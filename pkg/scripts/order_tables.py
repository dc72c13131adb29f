#!/usr/bin/env python3
"""Local order of every retraction / connection pairing on the built-in models."""

import argparse
import time

import numpy as np

from srwalks import models, srgeom
from srwalks import retractions as rt
from srwalks.retractions import RetractionSpec


def horizontal(m, x, rng):
    c = rng.standard_normal((len(x), m.k))
    c /= np.linalg.norm(c, axis=-1, keepdims=True)
    return np.einsum("mia,ma->mi", srgeom.horizontal_matrix(m.structure, x), c)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'model':18s} {'retraction':34s} {'pooled':>8s} {'worst':>8s} {'max err':>9s} {'sec':>6s}")
    for name in ("heisenberg", "twisted"):
        m = models.get_model(name)
        x = m.sample_points(args.samples, args.seed)
        u = horizontal(m, x, rng)
        oracle = rt.exact_oracle(m.structure)
        specs = [RetractionSpec("ret1", m.structure)]
        specs += [RetractionSpec("ret2", m.structure, c) for c in m.connections.values()]
        for R in specs:
            t0 = time.perf_counter()
            r = rt.order_test(R, oracle, (x, u))
            print(f"{name:18s} {R.label:34s} {r.slope:8.3f} {r.min_slope:8.3f} {r.errors.max():9.2e} "
                  f"{time.perf_counter() - t0:6.1f}")
    for name, kind in (("ellipsoid", "ret3"), ("ellipsoid-frames", "ret3prime"), ("ellipsoid", "ret2")):
        m = models.get_model(name)
        lc = m.connections["levi-civita"]
        x = m.sample_points(args.samples, args.seed)
        F0 = np.stack([m.initial_frame(p) for p in x])
        ub = rng.standard_normal((len(x), 2))
        ub /= np.linalg.norm(ub, axis=-1, keepdims=True)
        u = (F0 @ ub[..., None])[..., 0]
        A = m.anisotropy if kind == "ret3prime" else None
        R = RetractionSpec(kind, m.structure, lc, m.metric, A)
        t0 = time.perf_counter()
        if kind == "ret2":
            r = rt.order_test(R, lambda x, u, t: rt.transport_oracle(lc)(x, u, t, F0)[0], (x, u))
        else:
            r = rt.order_test(R, rt.transport_oracle(lc), (x, u, F0))
        print(f"{name:18s} {R.label:34s} {r.slope:8.3f} {r.min_slope:8.3f} {r.errors.max():9.2e} "
              f"{time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
