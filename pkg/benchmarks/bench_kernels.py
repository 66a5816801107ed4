"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--subdiv 4] [--points 20000] [--repeat 3]

Both backends must return identical arrays; the script exits nonzero if not.
"""

import argparse
import json
import sys
import time

import numpy as np

from meshfield import kernels
from meshfield.bvh import build_bvh
from meshfield.raster import make_view_pair, rasterize
from meshfield.shapes import icosphere


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if hasattr(a, "__dataclass_fields__"):
        return all(same(getattr(a, k), getattr(b, k)) for k in a.__dataclass_fields__)
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--subdiv", type=int, default=4)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--size", type=int, default=256, help="raster size")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)

    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    mesh = icosphere(args.subdiv).transformed(scale=0.5)
    bvh = build_bvh(mesh)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (args.points, 3))
    dirs = rng.normal(size=(args.points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cam, _ = make_view_pair(30.0, 10.0, 1.0, args.size)

    cases = {
        "closest_points": lambda b: bvh.closest_points(pts, backend=b),
        "raycast": lambda b: bvh.raycast(pts, dirs, backend=b),
        "rasterize": lambda b: rasterize(cam, mesh, backend=b),
    }
    rows = []
    ok = True
    for name, fn in cases.items():
        tc, oc = best_of(lambda: fn("compiled"), args.repeat)
        tp, op = best_of(lambda: fn("python"), args.repeat)
        match = same(oc, op)
        ok &= match
        rows.append({"kernel": name, "compiled_s": tc, "python_s": tp, "speedup": tp / tc, "identical": match})

    if args.json:
        print(json.dumps({"faces": mesh.n_faces, "threads": kernels.num_threads(), "results": rows}, indent=1))
    else:
        print(f"{mesh.n_faces} faces, {args.points} queries, {args.size}px raster, "
              f"{kernels.num_threads()} threads")
        print(f"{'kernel':<16}{'compiled':>12}{'numpy':>12}{'speedup':>10}  identical")
        for r in rows:
            print(f"{r['kernel']:<16}{r['compiled_s']:>11.4f}s{r['python_s']:>11.4f}s"
                  f"{r['speedup']:>9.1f}x  {r['identical']}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
