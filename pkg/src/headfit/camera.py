"""Similarity transform, projections, and unit-cube normalization.

Pixel conventions: image origin top-left, y down. The orthographic pipeline
maps model space directly to pixels through the similarity transform, so
projecting just drops z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateExtent
from .rotations import IDENTITY_ROT6D, rot6d_to_matrix


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray     # (3, 3)
    scale: float             # > 0
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self applied after other: x -> self(other(x))."""
        return SimilarityTransform(
            rotation=self.rotation @ other.rotation,
            scale=self.scale * other.scale,
            translation=self.scale * self.rotation @ other.translation + self.translation,
        )


IDENTITY_SIMILARITY = SimilarityTransform(np.eye(3), 1.0, np.zeros(3))


@dataclass(frozen=True)
class PoseParams:
    """Global pose as 6D rotation + uniform scale + in-plane translation.

    The z translation is unobservable under orthographic projection and is
    fixed to zero.
    """

    rot6: np.ndarray = field(default_factory=lambda: IDENTITY_ROT6D.copy())
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))  # (tx, ty) px

    def to_similarity(self) -> SimilarityTransform:
        t = np.array([self.translation[0], self.translation[1], 0.0])
        return SimilarityTransform(rot6d_to_matrix(self.rot6), float(self.scale), t)

    @staticmethod
    def neutral() -> "PoseParams":
        return PoseParams()


@dataclass(frozen=True)
class ProjectionMatrices:
    model_view: np.ndarray  # (4, 4), bottom row (0, 0, 0, 1)
    frustum: np.ndarray     # (4, 4), invertible


def apply_similarity(vertices, t: SimilarityTransform) -> np.ndarray:
    """v' = scale * R v + translation, rowwise."""
    v = np.asarray(vertices, dtype=float)
    return t.scale * v @ t.rotation.T + t.translation


def project_orthographic(vertices) -> np.ndarray:
    """Drop the z coordinate."""
    v = np.asarray(vertices, dtype=float)
    return v[..., :2]


def project_frustum(vertices, p: ProjectionMatrices, viewport) -> np.ndarray:
    """Model-view -> frustum -> perspective divide -> pixel coordinates.

    viewport is (width, height) in pixels; the output y axis points down
    with the origin at the top-left corner.
    """
    v = np.asarray(vertices, dtype=float)
    w_px, h_px = float(viewport[0]), float(viewport[1])
    homo = np.concatenate([v, np.ones((len(v), 1))], axis=1)
    clip = homo @ (p.frustum @ p.model_view).T
    w = clip[:, 3]
    if np.any(w <= 1e-12):
        raise BehindCamera("vertex at or behind the projection plane")
    ndc = clip[:, :3] / w[:, None]
    x = (ndc[:, 0] + 1.0) * 0.5 * w_px
    y = (1.0 - ndc[:, 1]) * 0.5 * h_px
    return np.stack([x, y], axis=1)


def unit_cube_normalize(vertices) -> np.ndarray:
    """Center the bounding box at the origin and scale the longest axis to 1.

    Uniform scaling only, so shape is preserved; the result fits inside
    [-0.5, 0.5]^3 touching it along the longest axis. Translation- and
    scale-invariant by construction, but not rotation-invariant.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] < 2:
        raise DegenerateExtent("need at least two vertices")
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent < 1e-30:
        raise DegenerateExtent("all vertices coincide")
    center = (lo + hi) / 2.0
    return (v - center) / extent


def unit_cube_normalize_vjp(vertices, grad_out):
    """Backpropagate a gradient through unit_cube_normalize.

    Subgradient at bounding-box ties; exact wherever the argmin/argmax
    vertices are unique (almost surely for continuous data).
    """
    v = np.asarray(vertices, dtype=float)
    g = np.asarray(grad_out, dtype=float)
    lo_idx = v.argmin(axis=0)
    hi_idx = v.argmax(axis=0)
    lo = v[lo_idx, np.arange(3)]
    hi = v[hi_idx, np.arange(3)]
    axis = int(np.argmax(hi - lo))
    extent = float(hi[axis] - lo[axis])
    if extent < 1e-30:
        raise DegenerateExtent("all vertices coincide")
    center = (lo + hi) / 2.0

    grad_v = g / extent
    # Center term: each axis center moves with its extreme vertices.
    total = g.sum(axis=0) / extent
    for a in range(3):
        grad_v[lo_idx[a], a] -= total[a] / 2.0
        grad_v[hi_idx[a], a] -= total[a] / 2.0
    # Extent term: only the longest axis extremes change the scale.
    s = float(np.sum(g * (v - center))) / (extent * extent)
    grad_v[hi_idx[axis], axis] -= s
    grad_v[lo_idx[axis], axis] += s
    return grad_v


def orthographic_frustum(viewport) -> np.ndarray:
    """Frustum matrix that makes project_frustum reproduce the orthographic
    pixel pipeline for view-space vertices already in pixel units."""
    w, h = float(viewport[0]), float(viewport[1])
    return np.array([
        [2.0 / w, 0.0, 0.0, -1.0],
        [0.0, -2.0 / h, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def similarity_to_model_view(t: SimilarityTransform) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = t.scale * t.rotation
    m[:3, 3] = t.translation
    return m
