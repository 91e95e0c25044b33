"""Compare the compiled and numpy ray-marching kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Times a full 64x64 render of a trained-size field and a short training run on
a simulator demo, per backend.  Both backends produce the same numbers (the
test suite checks agreement to 1e-10), so only wall time is reported.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from spartn import kernels, pipeline as pl, sim
from spartn.field import FieldTrainConfig, RadianceField, RenderConfig, render
from spartn.se3 import camera_from_ee


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> dict:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--train-iters", type=int, default=50)
    ap.add_argument("--json")
    args = ap.parse_args(argv)

    cfg = sim.EnvConfig()
    demo = sim.collect_demo(cfg, 0)
    rng = np.random.default_rng(0)
    fld = RadianceField.empty(64, cfg.workspace_lo, cfg.workspace_hi, [0.2, 0.2, 0.2])
    fld.density[:] = rng.uniform(0, 40, fld.shape) * (rng.random(fld.shape) < 0.05)
    fld.color[:] = rng.uniform(0, 1, fld.shape + (3,))
    cam = camera_from_ee(demo.steps[0].w_T_e, demo.e_T_c)
    rc = RenderConfig(64, 0.02, 1.0)
    ws = (np.array(cfg.workspace_lo), np.array(cfg.workspace_hi))
    fc = FieldTrainConfig(iters=args.train_iters, rays_per_step=2048, resolution=64)

    names = ["python"] + (["compiled"] if kernels.compiled_backend is not None else [])
    results = {}
    for name in names:
        r = best_of(lambda: render(fld, cam, cfg.intrinsics, rc, backend=name), args.repeat)
        t = best_of(lambda: pl.train_demo_field(demo, config=fc, workspace=ws, backend=name),
                    args.repeat)
        results[name] = {"render_64x64_s": r, f"train_{args.train_iters}_iters_s": t}

    print(f"{'backend':10s} {'render 64x64 (s)':>18s} {f'train {args.train_iters} it (s)':>18s}")
    for name, row in results.items():
        vals = list(row.values())
        print(f"{name:10s} {vals[0]:18.4f} {vals[1]:18.3f}")
    if len(results) == 2:
        py, c = (list(results[n].values()) for n in ("python", "compiled"))
        print(f"{'speedup':10s} {py[0] / c[0]:17.1f}x {py[1] / c[1]:17.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=1)
    return results


if __name__ == "__main__":
    main()
