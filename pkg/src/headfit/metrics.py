"""Benchmark metric suite for head-mesh predictions.

Per-sample metrics: reprojected-landmark NME, ordinal depth accuracy,
one-sided Chamfer distance after 7-point rigid alignment, and rotation pose
errors. Aggregation happens per attribute subgroup plus overall. The
annotator agreement (quality) score measures normalized pairwise label
disagreement across labelers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import camera
from ._kernels import point_mesh_distances
from .camera import ProjectionMatrices, SimilarityTransform
from .errors import (DegenerateConfiguration, DimensionMismatch, InvalidN,
                     MissingAttribute, NoFaces, TooFewAnnotators)
from .morphable import Mesh
from .rotations import pose_error_angle, pose_error_frobenius

DEFAULT_N_NEIGHBORS = 5

# Attribute-card fields addressable as subgroup keys.
SUBGROUP_KEYS = ("pose", "age", "quality", "occlusion", "expression",
                 "lighting", "gender")
_ATTRIBUTE_FOR_KEY = {
    "pose": "pose",
    "age": "age_group",
    "quality": "quality",
    "occlusion": "occlusion",
    "expression": "expression",
    "lighting": "illumination",
    "gender": "gender",
}

METRIC_NAMES = ("nme", "z_n", "chamfer", "pose_frob", "pose_angle")


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DimensionMismatch("bbox sides must be positive")

    @property
    def size(self) -> float:
        return float(np.sqrt(self.w * self.h))


@dataclass(frozen=True)
class LabelSet:
    landmarks: np.ndarray  # (68, 2) px
    annotator_id: str = ""

    def __post_init__(self):
        lm = np.asarray(self.landmarks, dtype=float)
        if lm.shape != (68, 2) or not np.all(np.isfinite(lm)):
            raise DimensionMismatch("label set must be a finite 68x2 array")


def reprojection_nme(pred68, gt68, bbox: BBox) -> float:
    """Mean landmark pixel distance normalized by sqrt(bbox area)."""
    a = np.asarray(pred68, dtype=float)
    b = np.asarray(gt68, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2:
        raise DimensionMismatch("landmark arrays must be equal Nx2")
    return float(np.mean(np.linalg.norm(a - b, axis=1)) / bbox.size)


def neighbor_indices(points, n: int) -> np.ndarray:
    """Indices of the n nearest neighbors (self excluded) for each point."""
    pts = np.asarray(points, dtype=float)
    if not 1 <= n < len(pts):
        raise InvalidN(f"need 1 <= n < {len(pts)}, got {n}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=n + 1)
    return idx[:, 1:]


def z_ordinal_accuracy(gt, pred, n: int = DEFAULT_N_NEIGHBORS,
                       neighbors=None) -> float:
    """Fraction of preserved ordinal depth relations.

    For each reference vertex, its n nearest neighbors in the reference
    cloud define pairs; the score is the fraction of pairs where the
    prediction orders the z coordinates the same way (ties compared with
    >= on both sides). Neighbor indices may be supplied to reuse a
    precomputed graph.
    """
    g = np.asarray(gt, dtype=float)
    p = np.asarray(pred, dtype=float)
    if g.shape != p.shape or g.ndim != 2 or g.shape[1] != 3:
        raise DimensionMismatch("vertex arrays must be equal Kx3")
    nbr = np.asarray(neighbors) if neighbors is not None else neighbor_indices(g, n)
    gz = g[:, 2]
    pz = p[:, 2]
    gt_rel = gz[:, None] >= gz[nbr]
    pr_rel = pz[:, None] >= pz[nbr]
    return float(np.mean(gt_rel == pr_rel))


def rigid_align_keypoints(src, dst, with_scale: bool = False) -> SimilarityTransform:
    """Least-squares rigid (optionally scaled) alignment of src onto dst.

    Umeyama closed form with det(R) = +1 enforced; raises on collinear
    configurations where the rotation is not determined.
    """
    x = np.asarray(src, dtype=float)
    y = np.asarray(dst, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3 or len(x) < 3:
        raise DimensionMismatch("need matching Px3 arrays with P >= 3")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    dx = x - mx
    dy = y - my
    cov = dy.T @ dx / len(x)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-30):
        raise DegenerateConfiguration("keypoints are collinear")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt
    if with_scale:
        var = float(np.mean(np.sum(dx * dx, axis=1)))
        scale = float((d * np.diag(s_fix)).sum() / var)
    else:
        scale = 1.0
    t = my - scale * rot @ mx
    return SimilarityTransform(rotation=rot, scale=scale, translation=t)


def chamfer_one_sided(gt_face, pred, align_keypoints=None,
                      with_scale: bool = False) -> float:
    """Mean distance from each reference vertex to its nearest predicted one.

    When 7-point correspondences (pred_pts, gt_pts) are given the predicted
    cloud is first rigidly aligned into the reference frame. Nearest
    neighbors come from a KD-tree; the result is exact.
    """
    g = np.asarray(gt_face, dtype=float)
    p = np.asarray(pred, dtype=float)
    if len(g) == 0 or len(p) == 0:
        raise DimensionMismatch("point clouds must be nonempty")
    if align_keypoints is not None:
        src, dst = align_keypoints
        t = rigid_align_keypoints(src, dst, with_scale=with_scale)
        p = camera.apply_similarity(p, t)
    tree = cKDTree(p)
    d, _ = tree.query(g, k=1)
    return float(np.mean(d))


def scan_to_mesh(scan_points, pred_mesh: Mesh, align_keypoints=None,
                 with_scale: bool = False) -> dict:
    """Distance statistics from scan points to the predicted mesh surface.

    The predicted mesh is rigidly aligned into the scan frame via the
    7-point correspondences (mesh_pts, scan_pts); each scan point is then
    measured against the closest point on any triangle. Returns median,
    mean, std, and rmse in model units.
    """
    if pred_mesh.faces is None or len(pred_mesh.faces) == 0:
        raise NoFaces("scan_to_mesh needs a mesh with faces")
    pts = np.asarray(scan_points, dtype=float)
    verts = pred_mesh.vertices
    if align_keypoints is not None:
        src, dst = align_keypoints
        t = rigid_align_keypoints(src, dst, with_scale=with_scale)
        verts = camera.apply_similarity(verts, t)
    d = point_mesh_distances(pts, verts, pred_mesh.faces)
    return {
        "median": float(np.median(d)),
        "mean": float(np.mean(d)),
        "std": float(np.std(d)),
        "rmse": float(np.sqrt(np.mean(d * d))),
    }


def _pairwise_label_distance(a: np.ndarray, b: np.ndarray,
                             concatenated_norm: bool) -> float:
    if concatenated_norm:
        return float(np.linalg.norm(a - b))
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def quality_scores(labelsets, bboxes, concatenated_norm: bool = False) -> np.ndarray:
    """Per-image normalized mean pairwise disagreement between annotators.

    labelsets: one sequence of LabelSet per image (m >= 2 each); bboxes:
    one BBox per image. The pairwise distance defaults to the mean
    per-landmark Euclidean distance; concatenated_norm switches to the
    literal stacked-vector norm for auditing.
    """
    if len(labelsets) != len(bboxes):
        raise DimensionMismatch("one bbox per image required")
    out = np.empty(len(labelsets))
    for i, (sets, bbox) in enumerate(zip(labelsets, bboxes)):
        m = len(sets)
        if m < 2:
            raise TooFewAnnotators(f"image {i}: need >= 2 annotators, got {m}")
        arrays = [np.asarray(ls.landmarks, dtype=float) for ls in sets]
        total = 0.0
        for a in range(m):
            for b in range(a + 1, m):
                total += _pairwise_label_distance(arrays[a], arrays[b],
                                                  concatenated_norm)
        out[i] = (2.0 / (m * (m - 1))) * total / bbox.size
    return out


def quality_score(labelsets, bboxes, concatenated_norm: bool = False) -> float:
    """Average of the per-image quality scores."""
    return float(np.mean(quality_scores(labelsets, bboxes, concatenated_norm)))


def _wrap_angle_diff(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def euler_mae(preds, gts) -> dict:
    """Per-angle mean absolute error with 360-degree wraparound."""
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction and target lists differ in length")
    yaw = np.array([e.yaw for e in preds]), np.array([e.yaw for e in gts])
    pitch = np.array([e.pitch for e in preds]), np.array([e.pitch for e in gts])
    roll = np.array([e.roll for e in preds]), np.array([e.roll for e in gts])
    yaw_mae = float(np.mean(_wrap_angle_diff(*yaw)))
    pitch_mae = float(np.mean(_wrap_angle_diff(*pitch)))
    roll_mae = float(np.mean(_wrap_angle_diff(*roll)))
    return {
        "mae": (yaw_mae + pitch_mae + roll_mae) / 3.0,
        "pitch_mae": pitch_mae,
        "roll_mae": roll_mae,
        "yaw_mae": yaw_mae,
    }


def rotation_from_affine(m) -> np.ndarray:
    """Nearest proper rotation to the upper-left 3x3 block (polar via SVD)."""
    a = np.asarray(m, dtype=float)[:3, :3]
    u, _, vt = np.linalg.svd(a)
    fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        fix[2, 2] = -1.0
    return u @ fix @ vt


@dataclass(frozen=True)
class BenchmarkSample:
    """One evaluation unit: reference annotation data plus a prediction."""

    sample_id: str
    gt_vertices: np.ndarray
    pred_vertices: np.ndarray
    gt_matrices: ProjectionMatrices
    pred_matrices: ProjectionMatrices
    image_size: tuple
    bbox: BBox
    attributes: dict
    subsets: dict  # head / face / keypoint7 / landmark68 index arrays


@dataclass(frozen=True)
class MetricReport:
    per_sample: dict
    overall: dict
    subgroups: dict
    n_neighbors: int = DEFAULT_N_NEIGHBORS
    units: dict = field(default_factory=lambda: {"chamfer": "model units",
                                                 "nme": "ratio",
                                                 "pose_frob": "dimensionless",
                                                 "pose_angle": "degrees",
                                                 "z_n": "fraction"})
    failed: dict = field(default_factory=dict)


def _view_space(vertices, model_view):
    homo = np.concatenate([vertices, np.ones((len(vertices), 1))], axis=1)
    return (homo @ model_view.T)[:, :3]


def evaluate_sample(sample: BenchmarkSample, n: int = DEFAULT_N_NEIGHBORS) -> dict:
    """All per-sample metrics; z_n is None when the prediction does not
    follow the reference topology (different vertex count)."""
    subs = sample.subsets
    lm = np.asarray(subs["landmark68"], dtype=int)
    head = np.asarray(subs["head"], dtype=int)
    face = np.asarray(subs["face"], dtype=int)
    key7 = np.asarray(subs["keypoint7"], dtype=int)

    gt_px = camera.project_frustum(sample.gt_vertices[lm], sample.gt_matrices,
                                   sample.image_size)
    same_topology = sample.pred_vertices.shape == sample.gt_vertices.shape

    out: dict = {}
    if same_topology:
        pred_px = camera.project_frustum(sample.pred_vertices[lm],
                                         sample.pred_matrices, sample.image_size)
        out["nme"] = reprojection_nme(pred_px, gt_px, sample.bbox)
        gt_view = _view_space(sample.gt_vertices, sample.gt_matrices.model_view)
        pr_view = _view_space(sample.pred_vertices, sample.pred_matrices.model_view)
        out["z_n"] = z_ordinal_accuracy(gt_view[head], pr_view[head], n=n)
        align = (sample.pred_vertices[key7], sample.gt_vertices[key7])
    else:
        out["nme"] = None
        out["z_n"] = None
        pred_key = subs.get("pred_keypoint7")
        align = None
        if pred_key is not None:
            align = (sample.pred_vertices[np.asarray(pred_key, dtype=int)],
                     sample.gt_vertices[key7])
    if align is not None:
        out["chamfer"] = chamfer_one_sided(sample.gt_vertices[face],
                                           sample.pred_vertices,
                                           align_keypoints=align)
    else:
        out["chamfer"] = None
    r_gt = rotation_from_affine(sample.gt_matrices.model_view)
    r_pr = rotation_from_affine(sample.pred_matrices.model_view)
    out["pose_frob"] = pose_error_frobenius(r_gt, r_pr)
    out["pose_angle"] = pose_error_angle(r_gt, r_pr)
    return out


def _mean_of(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def benchmark_report(samples, subgroup_keys=("pose",),
                     n: int = DEFAULT_N_NEIGHBORS, max_workers=None) -> MetricReport:
    """Evaluate samples and aggregate metric means per subgroup and overall.

    Unknown subgroup keys raise ValueError; samples missing an attribute
    used as a key raise MissingAttribute. Evaluation parallelizes across
    samples (HEADFIT_THREADS or max_workers) with a deterministic
    aggregation order.
    """
    for key in subgroup_keys:
        if key not in _ATTRIBUTE_FOR_KEY:
            raise ValueError(f"unknown subgroup key {key!r}; "
                             f"valid: {sorted(_ATTRIBUTE_FOR_KEY)}")
    for s in samples:
        for key in subgroup_keys:
            attr = _ATTRIBUTE_FOR_KEY[key]
            if attr not in s.attributes:
                raise MissingAttribute(
                    f"sample {s.sample_id!r} lacks attribute {attr!r}")

    workers = max_workers or int(os.environ.get("HEADFIT_THREADS", "0")) or None
    samples = list(samples)
    if workers and workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: evaluate_sample(s, n=n), samples))
    else:
        rows = [evaluate_sample(s, n=n) for s in samples]

    per_sample = {s.sample_id: rows[i] for i, s in enumerate(samples)}
    overall = {m: _mean_of(r[m] for r in rows) for m in METRIC_NAMES}
    subgroups: dict = {}
    for key in subgroup_keys:
        attr = _ATTRIBUTE_FOR_KEY[key]
        buckets: dict = {}
        for s, row in zip(samples, rows):
            buckets.setdefault(str(s.attributes[attr]), []).append(row)
        subgroups[key] = {
            value: {m: _mean_of(r[m] for r in rws) for m in METRIC_NAMES}
            for value, rws in sorted(buckets.items())
        }
    return MetricReport(per_sample=per_sample, overall=overall,
                        subgroups=subgroups, n_neighbors=n)
