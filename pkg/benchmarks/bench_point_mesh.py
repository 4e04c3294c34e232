"""Benchmark: numba kernel vs pure-numpy fallback for point-to-mesh distances.

Run:  python3 benchmarks/bench_point_mesh.py [--points 20000] [--faces 4000]

The same comparison is what HEADFIT_NO_NUMBA=1 trades away at runtime.
"""

import argparse
import time

import numpy as np
from scipy.spatial import ConvexHull

from headfit._kernels import _HAVE_NUMBA, point_mesh_distances


def build_mesh(rng, n_vertices):
    # Sphere samples keep every point on the hull: exactly 2n - 4 faces.
    pts = rng.normal(size=(n_vertices, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    hull = ConvexHull(pts)
    return pts, hull.simplices.copy()


def timeit(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=20_000)
    parser.add_argument("--faces", type=int, default=4_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    # hull of n vertices has ~2n faces
    vertices, faces = build_mesh(rng, max(args.faces // 2, 8))
    points = rng.normal(0, 1.5, size=(args.points, 3))
    print(f"points={len(points)} triangles={len(faces)}")

    t_numpy, d_numpy = timeit(
        lambda: point_mesh_distances(points, vertices, faces, impl="numpy"),
        repeats=args.repeats)
    print(f"numpy   {t_numpy * 1e3:10.1f} ms")

    if not _HAVE_NUMBA:
        print("numba unavailable; fallback path is the only option")
        return

    point_mesh_distances(points[:10], vertices, faces, impl="numba")  # JIT warmup
    t_numba, d_numba = timeit(
        lambda: point_mesh_distances(points, vertices, faces, impl="numba"),
        repeats=args.repeats)
    print(f"numba   {t_numba * 1e3:10.1f} ms")
    print(f"speedup {t_numpy / t_numba:10.1f}x")
    print(f"max |difference| = {np.max(np.abs(d_numpy - d_numba)):.3e}")


if __name__ == "__main__":
    main()
