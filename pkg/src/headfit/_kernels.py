"""Hot numeric kernels: point-to-triangle-mesh distances.

The inner loop (every scan point against every mesh triangle) dominates
scan-to-mesh evaluation at full scale, so it carries a numba @njit kernel.
A pure-numpy fallback implements the identical arithmetic; it is selected
automatically when numba is unavailable or explicitly with
HEADFIT_NO_NUMBA=1. Both paths are exact (no approximation) and are checked
against an independent oracle in the tests. benchmarks/bench_point_mesh.py
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror always provides numba
    numba = None
    _HAVE_NUMBA = False


def numba_disabled_by_env() -> bool:
    return os.environ.get("HEADFIT_NO_NUMBA", "").strip() not in ("", "0")


def active_backend() -> str:
    if _HAVE_NUMBA and not numba_disabled_by_env():
        return "numba"
    return "numpy"


def _point_triangles_sqdist_core(p, a, b, c):
    """Squared distance from one point to each triangle (numpy, vectorized).

    Region classification of the closest point (vertex / edge / interior)
    following the standard barycentric case analysis.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=1)
    d2 = np.sum(ac * ap, axis=1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=1)
    d4 = np.sum(ac * bp, axis=1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=1)
    d6 = np.sum(ac * cp, axis=1)

    closest = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a[m]
    done |= m

    m = ~done & (d3 >= 0) & (d4 <= d3)
    closest[m] = b[m]
    done |= m

    vc = d1 * d4 - d3 * d2
    m = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    if np.any(m):
        t = d1[m] / (d1[m] - d3[m])
        closest[m] = a[m] + t[:, None] * ab[m]
    done |= m

    m = ~done & (d6 >= 0) & (d5 <= d6)
    closest[m] = c[m]
    done |= m

    vb = d5 * d2 - d1 * d6
    m = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    if np.any(m):
        t = d2[m] / (d2[m] - d6[m])
        closest[m] = a[m] + t[:, None] * ac[m]
    done |= m

    va = d3 * d6 - d5 * d4
    m = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    if np.any(m):
        t = (d4[m] - d3[m]) / ((d4[m] - d3[m]) + (d5[m] - d6[m]))
        closest[m] = b[m] + t[:, None] * (c[m] - b[m])
    done |= m

    m = ~done
    if np.any(m):
        denom = va[m] + vb[m] + vc[m]
        v = vb[m] / denom
        w = vc[m] / denom
        closest[m] = a[m] + v[:, None] * ab[m] + w[:, None] * ac[m]

    diff = closest - p
    return np.sum(diff * diff, axis=1)


def _point_mesh_distances_numpy(points, tri_a, tri_b, tri_c):
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = np.sqrt(np.min(_point_triangles_sqdist_core(p, tri_a, tri_b, tri_c)))
    return out


if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _point_mesh_distances_numba(points, tri_a, tri_b, tri_c):  # pragma: no cover
        n_pts = points.shape[0]
        n_tri = tri_a.shape[0]
        out = np.empty(n_pts)
        for i in range(n_pts):
            px, py, pz = points[i, 0], points[i, 1], points[i, 2]
            best = np.inf
            for t in range(n_tri):
                ax, ay, az = tri_a[t, 0], tri_a[t, 1], tri_a[t, 2]
                bx, by, bz = tri_b[t, 0], tri_b[t, 1], tri_b[t, 2]
                cx, cy, cz = tri_c[t, 0], tri_c[t, 1], tri_c[t, 2]
                abx, aby, abz = bx - ax, by - ay, bz - az
                acx, acy, acz = cx - ax, cy - ay, cz - az
                apx, apy, apz = px - ax, py - ay, pz - az
                d1 = abx * apx + aby * apy + abz * apz
                d2 = acx * apx + acy * apy + acz * apz
                if d1 <= 0.0 and d2 <= 0.0:
                    qx, qy, qz = ax, ay, az
                else:
                    bpx, bpy, bpz = px - bx, py - by, pz - bz
                    d3 = abx * bpx + aby * bpy + abz * bpz
                    d4 = acx * bpx + acy * bpy + acz * bpz
                    if d3 >= 0.0 and d4 <= d3:
                        qx, qy, qz = bx, by, bz
                    else:
                        vc = d1 * d4 - d3 * d2
                        if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                            s = d1 / (d1 - d3)
                            qx, qy, qz = ax + s * abx, ay + s * aby, az + s * abz
                        else:
                            cpx, cpy, cpz = px - cx, py - cy, pz - cz
                            d5 = abx * cpx + aby * cpy + abz * cpz
                            d6 = acx * cpx + acy * cpy + acz * cpz
                            if d6 >= 0.0 and d5 <= d6:
                                qx, qy, qz = cx, cy, cz
                            else:
                                vb = d5 * d2 - d1 * d6
                                if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                                    s = d2 / (d2 - d6)
                                    qx, qy, qz = ax + s * acx, ay + s * acy, az + s * acz
                                else:
                                    va = d3 * d6 - d5 * d4
                                    if va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
                                        s = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                                        qx = bx + s * (cx - bx)
                                        qy = by + s * (cy - by)
                                        qz = bz + s * (cz - bz)
                                    else:
                                        denom = 1.0 / (va + vb + vc)
                                        v = vb * denom
                                        w = vc * denom
                                        qx = ax + abx * v + acx * w
                                        qy = ay + aby * v + acy * w
                                        qz = az + abz * v + acz * w
                dx, dy, dz = qx - px, qy - py, qz - pz
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
            out[i] = np.sqrt(best)
        return out


def point_mesh_distances(points, vertices, faces, impl: str | None = None) -> np.ndarray:
    """Distance from each point to the closest point on any mesh triangle.

    impl: None (pick the active backend), "numba", or "numpy".
    """
    points = np.ascontiguousarray(points, dtype=float)
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    tri_a = np.ascontiguousarray(vertices[faces[:, 0]])
    tri_b = np.ascontiguousarray(vertices[faces[:, 1]])
    tri_c = np.ascontiguousarray(vertices[faces[:, 2]])
    backend = impl or active_backend()
    if backend == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _point_mesh_distances_numba(points, tri_a, tri_b, tri_c)
    return _point_mesh_distances_numpy(points, tri_a, tri_b, tri_c)
