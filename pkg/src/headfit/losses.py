"""Training-loss components as plain differentiable functions.

The shape+expression term compares unit-cube-normalized head vertices with
the global rotation removed; the reprojection term is an L1 over projected
head vertices; both ship with analytic gradients checked against finite
differences. The heatmap term is accepted as an externally computed scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera, morphable
from .camera import PoseParams, unit_cube_normalize, unit_cube_normalize_vjp
from .errors import DimensionMismatch
from .morphable import HeadModel, ShapeParams
from .rotations import rot6d_jacobian


@dataclass(frozen=True)
class LossWeights:
    lambda_3d: float = 50.0
    lambda_lmk: float = 1.0
    lambda_proj: float = 0.05
    lambda_awing: float = 1.0


def _normalized_head(model: HeadModel, p: ShapeParams, subset: str) -> np.ndarray:
    mesh = morphable.decode(model, p)
    return unit_cube_normalize(morphable.subsample(model, mesh, subset))


def shape_expression_loss(model: HeadModel, pred: ShapeParams, gt: ShapeParams,
                          subset: str = "head") -> float:
    """Mean per-vertex distance between unit-cube-normalized head vertices.

    Both parameter sets are decoded with the global rotation held at zero,
    so the value measures shape and expression discrepancy only. The
    normalization makes it invariant to translation and uniform scaling of
    either vertex set, but not to rotation.
    """
    a = _normalized_head(model, pred, subset)
    b = _normalized_head(model, gt, subset)
    if a.shape != b.shape:
        raise DimensionMismatch("subset sizes differ")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def shape_expression_loss_grad(model: HeadModel, pred: ShapeParams, gt: ShapeParams,
                               subset: str = "head"):
    """Gradient of shape_expression_loss w.r.t. pred (beta, psi, theta_jaw)."""
    idx = model.subset_indices(subset)
    mesh = morphable.decode(model, pred)
    sub = mesh.vertices[idx]
    a = unit_cube_normalize(sub)
    b = _normalized_head(model, gt, subset)
    diff = a - b
    dist = np.linalg.norm(diff, axis=1)
    n = len(idx)
    g_norm = np.zeros_like(diff)
    nz = dist > 1e-30
    g_norm[nz] = diff[nz] / dist[nz, None] / n
    g_sub = unit_cube_normalize_vjp(sub, g_norm)
    g_full = np.zeros_like(mesh.vertices)
    g_full[idx] = g_sub
    return morphable.decode_vjp(model, pred, g_full)


def reprojection_loss(model: HeadModel, shape: ShapeParams, pose: PoseParams,
                      gt_projected, subset: str = "head") -> float:
    """Mean absolute coordinate difference between projected head vertices
    and the target 2D array (L1 over both coordinates)."""
    idx = model.subset_indices(subset)
    gt = np.asarray(gt_projected, dtype=float)
    if gt.shape != (len(idx), 2):
        raise DimensionMismatch(
            f"expected {(len(idx), 2)} target array, got {gt.shape}")
    mesh = morphable.decode(model, shape)
    posed = camera.apply_similarity(mesh.vertices[idx], pose.to_similarity())
    proj = camera.project_orthographic(posed)
    return float(np.mean(np.abs(proj - gt)))


def reprojection_loss_grad(model: HeadModel, shape: ShapeParams, pose: PoseParams,
                           gt_projected, subset: str = "head"):
    """Gradients of reprojection_loss w.r.t. all parameters.

    Returns (g_beta, g_psi, g_jaw, g_rot6, g_scale, g_translation).
    """
    idx = model.subset_indices(subset)
    gt = np.asarray(gt_projected, dtype=float)
    if gt.shape != (len(idx), 2):
        raise DimensionMismatch("target array size mismatch")
    mesh = morphable.decode(model, shape)
    v = mesh.vertices[idx]
    rot, drot = rot6d_jacobian(pose.rot6)
    s = float(pose.scale)
    proj = s * (v @ rot.T)[:, :2] + np.asarray(pose.translation, dtype=float)

    g_proj = np.sign(proj - gt) / proj.size  # d mean|x| / dx
    g_t = g_proj.sum(axis=0)
    q = v @ rot.T
    g_s = float(np.sum(g_proj * q[:, :2]))
    # Lift the 2D gradient to 3D rows (z never reaches the loss).
    g3 = np.concatenate([g_proj, np.zeros((len(idx), 1))], axis=1)
    g_rot6 = np.einsum("na,abj,nb->j", g3, drot, v) * s
    g_vsub = s * g3 @ rot
    g_full = np.zeros_like(mesh.vertices)
    g_full[idx] = g_vsub
    g_beta, g_psi, g_jaw = morphable.decode_vjp(model, shape, g_full)
    return g_beta, g_psi, g_jaw, g_rot6, g_s, g_t


def landmark_l1(pred_landmarks, gt_landmarks) -> float:
    """Mean absolute coordinate difference between two landmark arrays."""
    a = np.asarray(pred_landmarks, dtype=float)
    b = np.asarray(gt_landmarks, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"landmark shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def combined_loss(l3d: float, landmark: float, proj: float, awing: float = 0.0,
                  weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of the four components."""
    return (weights.lambda_3d * l3d
            + weights.lambda_lmk * landmark
            + weights.lambda_proj * proj
            + weights.lambda_awing * awing)
