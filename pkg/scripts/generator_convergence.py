#!/usr/bin/env python3
"""Generator estimates L^eps f against Delta^V f and (1/2) Delta^V f.

Prints, per model / retraction / probe, the worst error over the base points
for each eps and the fitted log-log slope against both targets.
"""

import argparse

from srwalks import models, walker
from srwalks.retractions import RetractionSpec

CASES = [("exact", None), ("ret1", None), ("ret2", "kappa-corrected"), ("ret2", "frame-parallel"), ("ret2", "flat")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", default="heisenberg,twisted")
    ap.add_argument("--probes", default="quad_xy,bump")
    args = ap.parse_args()
    eps = (0.2, 0.1, 0.05, 0.025, 0.0125)
    print("model,retraction,probe,target," + ",".join(f"err@{e}" for e in eps) + ",slope")
    for name in args.models.split(","):
        m = models.get_model(name)
        for kind, conn in CASES:
            R = RetractionSpec(kind, m.structure, m.connections[conn] if conn else None)
            for pname in args.probes.split(","):
                probe = walker.GeneratorProbe(models.PROBES[pname](), m.base_points, eps)
                for label, scale in (("laplacian", 1.0), ("half-laplacian", 0.5)):
                    tab = walker.generator_estimate(m.structure, R, probe, target_scale=scale)
                    worst = tab.errors.max(axis=1)
                    slope = "exact" if tab.exact else f"{tab.slope:.3f}"
                    print(f"{name},{R.label},{pname},{label}," + ",".join(f"{v:.3e}" for v in worst) + f",{slope}")


if __name__ == "__main__":
    main()
