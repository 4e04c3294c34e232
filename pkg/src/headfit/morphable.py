"""Linear parametric head model.

A HeadModel is a template vertex set plus linear shape/expression bases and
a single weighted jaw joint. Decoding maps coefficient vectors to vertices;
named vertex subsets (head, face, landmark sets, ...) select evaluation
regions. A deterministic synthetic generator provides desk-scale models
with the same interface as a real asset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidCounts, UnknownSubset
from .rotations import rotvec_apply, rotvec_apply_jacobian, _rotvec_to_matrix_batch

# Subset sizing for the canonical vertex count: 5023 vertices of which 3669
# form the "head" region (neck excluded). Synthetic models at other K scale
# these fractions.
CANONICAL_K = 5023
CANONICAL_HEAD = 3669
_FACE_FRACTION = 0.35
LANDMARK_COUNTS = {"landmark68": 68, "landmark191": 191, "landmark445": 445}


@dataclass(frozen=True)
class ShapeParams:
    """Shape/expression coefficients plus the jaw rotation vector."""

    beta: np.ndarray       # (S,)
    psi: np.ndarray        # (E,)
    theta_jaw: np.ndarray  # (3,) axis-angle, radians

    @staticmethod
    def neutral(model: "HeadModel") -> "ShapeParams":
        return ShapeParams(
            beta=np.zeros(model.num_shape),
            psi=np.zeros(model.num_expr),
            theta_jaw=np.zeros(3),
        )


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray            # (K, 3), model units
    faces: np.ndarray | None = None  # (F, 3) int, optional


@dataclass(frozen=True)
class HeadModel:
    template: np.ndarray      # (K, 3)
    shape_basis: np.ndarray   # (K, 3, S)
    expr_basis: np.ndarray    # (K, 3, E)
    jaw_joint: np.ndarray     # (3,)
    jaw_weights: np.ndarray   # (K,) in [0, 1]
    subsets: dict = field(default_factory=dict)  # name -> int index array

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def num_expr(self) -> int:
        return self.expr_basis.shape[2]

    def subset_indices(self, name: str) -> np.ndarray:
        if name == "full":
            return np.arange(self.num_vertices)
        try:
            return self.subsets[name]
        except KeyError:
            raise UnknownSubset(f"subset {name!r} not registered "
                                f"(have {sorted(self.subsets)})") from None


def validate_model(model: HeadModel) -> list:
    """Invariant check used by tests and model loading; returns violations."""
    out = []
    k = model.num_vertices
    if model.template.shape != (k, 3):
        out.append("template shape")
    if model.shape_basis.shape[:2] != (k, 3):
        out.append("shape_basis shape")
    if model.expr_basis.shape[:2] != (k, 3):
        out.append("expr_basis shape")
    if model.jaw_joint.shape != (3,):
        out.append("jaw_joint shape")
    if model.jaw_weights.shape != (k,):
        out.append("jaw_weights shape")
    elif np.any(model.jaw_weights < 0) or np.any(model.jaw_weights > 1):
        out.append("jaw_weights out of [0, 1]")
    for name, idx in model.subsets.items():
        if len(idx) == 0:
            out.append(f"subset {name} empty")
        elif np.any(idx < 0) or np.any(idx >= k):
            out.append(f"subset {name} index out of range")
    for arr_name in ("template", "shape_basis", "expr_basis", "jaw_joint", "jaw_weights"):
        if not np.all(np.isfinite(getattr(model, arr_name))):
            out.append(f"{arr_name} not finite")
    return out


def _check_params(model: HeadModel, p: ShapeParams) -> None:
    if p.beta.shape != (model.num_shape,):
        raise DimensionMismatch(
            f"beta has {p.beta.shape}, model expects ({model.num_shape},)")
    if p.psi.shape != (model.num_expr,):
        raise DimensionMismatch(
            f"psi has {p.psi.shape}, model expects ({model.num_expr},)")
    if np.shape(p.theta_jaw) != (3,):
        raise DimensionMismatch("theta_jaw must be a 3-vector")


def _blend(model: HeadModel, p: ShapeParams) -> np.ndarray:
    v = model.template.copy()
    if model.num_shape:
        v += model.shape_basis @ p.beta
    if model.num_expr:
        v += model.expr_basis @ p.psi
    return v


def decode(model: HeadModel, p: ShapeParams) -> Mesh:
    """Vertices for a coefficient set.

    Linear blend of the bases followed by the jaw articulation: every
    vertex rotates about the jaw joint by the jaw axis-angle scaled by its
    own weight, so weight-0 vertices stay put and weight-1 vertices get
    the full rotation.
    """
    _check_params(model, p)
    v = _blend(model, p)
    theta = np.asarray(p.theta_jaw, dtype=float)
    if np.linalg.norm(theta) > 0:
        offsets = v - model.jaw_joint
        rotvecs = model.jaw_weights[:, None] * theta
        v = model.jaw_joint + rotvec_apply(rotvecs, offsets)
    return Mesh(vertices=v)


def subsample(model: HeadModel, mesh, subset: str) -> np.ndarray:
    """Restrict mesh vertices (or a bare vertex array) to a named subset."""
    idx = model.subset_indices(subset)
    vertices = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh)
    return vertices[idx]


def decode_jacobian_rows(model: HeadModel, p: ShapeParams, vertex_ids):
    """Decoded positions and their parameter derivatives for a few vertices.

    Returns (v (n,3), dv (n,3,S+E+3)) with columns ordered beta, psi,
    theta_jaw. Used by the fitter to assemble pin residual Jacobians.
    """
    _check_params(model, p)
    ids = np.asarray(vertex_ids, dtype=int)
    n = len(ids)
    ns, ne = model.num_shape, model.num_expr
    blended = _blend(model, p)[ids]
    theta = np.asarray(p.theta_jaw, dtype=float)
    w = model.jaw_weights[ids]
    offsets = blended - model.jaw_joint
    rotvecs = w[:, None] * theta

    rotated, djaw_rotvec = rotvec_apply_jacobian(rotvecs, offsets)
    v = model.jaw_joint + rotated
    rmats = _rotvec_to_matrix_batch(rotvecs)

    dv = np.zeros((n, 3, ns + ne + 3))
    # Basis directions also pass through the jaw rotation.
    if ns:
        dv[:, :, :ns] = rmats @ model.shape_basis[ids]
    if ne:
        dv[:, :, ns:ns + ne] = rmats @ model.expr_basis[ids]
    dv[:, :, ns + ne:] = djaw_rotvec * w[:, None, None]
    return v, dv


def decode_vjp(model: HeadModel, p: ShapeParams, grad_vertices):
    """Backpropagate a (K,3) vertex gradient to (beta, psi, theta_jaw)."""
    _check_params(model, p)
    g = np.asarray(grad_vertices, dtype=float)
    if g.shape != model.template.shape:
        raise DimensionMismatch("gradient shape must match (K, 3)")
    theta = np.asarray(p.theta_jaw, dtype=float)
    blended = _blend(model, p)
    offsets = blended - model.jaw_joint
    rotvecs = model.jaw_weights[:, None] * theta
    rmats = _rotvec_to_matrix_batch(rotvecs)

    # Pull the gradient back through the jaw rotation for the linear bases.
    h = np.einsum("nij,nj->ni", np.swapaxes(rmats, 1, 2), g)
    gbeta = np.einsum("nc,ncs->s", h, model.shape_basis)
    gpsi = np.einsum("nc,nce->e", h, model.expr_basis)

    _, djaw = rotvec_apply_jacobian(rotvecs, offsets)
    gjaw = np.einsum("nc,ncj,n->j", g, djaw, model.jaw_weights)
    return gbeta, gpsi, gjaw


def _smooth_field(rng: np.random.Generator, points: np.ndarray, extent: float) -> np.ndarray:
    """Smooth pseudo-random displacement field over the template surface."""
    out = np.zeros_like(points)
    for _ in range(4):
        freq = rng.normal(0.0, 4.0 / extent, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.normal(0.0, 1.0, size=3)
        out += np.sin(points @ freq + phase)[:, None] * amp
    return out


def synth_model(seed: int, k: int = 500, s: int = 10, e: int = 5) -> HeadModel:
    """Deterministic synthetic head model for tests and demos.

    Ellipsoid template (Fibonacci-sphere sampling), smooth random basis
    columns scaled so a unit coefficient moves vertices by at most 5% of
    the template extent, jaw weights ramping over the lower third, and
    subsets sized like the canonical model (head ~73% of K, face frontal,
    spread landmark selections clamped to the face size).
    """
    if k < 16 or s < 1 or e < 1:
        raise InvalidCounts(f"need k >= 16, s >= 1, e >= 1; got {k}, {s}, {e}")
    rng = np.random.default_rng(seed)

    radii = np.array([0.085, 0.115, 0.100])  # x: width, y: height, z: depth
    i = np.arange(k)
    y_lin = 1.0 - 2.0 * (i + 0.5) / k
    ring = np.sqrt(np.maximum(0.0, 1.0 - y_lin ** 2))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    ang = golden * i
    template = np.stack([
        radii[0] * ring * np.cos(ang),
        radii[1] * y_lin,
        radii[2] * ring * np.sin(ang),
    ], axis=1)
    extent = float(np.max(template.max(axis=0) - template.min(axis=0)))

    def make_basis(count):
        basis = np.zeros((k, 3, count))
        for c in range(count):
            col = _smooth_field(rng, template, extent)
            norms = np.linalg.norm(col, axis=1)
            peak = norms.max()
            if peak > 0:
                col *= 0.05 * extent / peak
            basis[:, :, c] = col
        return basis

    shape_basis = make_basis(s)
    expr_basis = make_basis(e)

    y = template[:, 1]
    y_min, y_max = float(y.min()), float(y.max())
    y_ext = y_max - y_min
    jaw_joint = np.array([0.0, y_min + 0.32 * y_ext, 0.25 * radii[2]])
    # Smooth ramp over the lower third: weight 0 above it, a smoothstep
    # through the ramp, and a weight-1 plateau at the bottom sixth.
    ramp_top = y_min + y_ext / 3.0
    ramp_bottom = y_min + y_ext / 6.0
    t = np.clip((ramp_top - y) / (ramp_top - ramp_bottom), 0.0, 1.0)
    jaw_weights = t * t * (3.0 - 2.0 * t)

    # Head: everything but the bottom cap (neck stand-in), sized to the
    # canonical head fraction. Face: the most frontal head vertices.
    head_count = int(round(k * CANONICAL_HEAD / CANONICAL_K))
    order_y = np.argsort(y, kind="stable")
    head = np.sort(order_y[k - head_count:])
    face_count = min(int(round(k * _FACE_FRACTION)), head_count)
    z_head = template[head, 2]
    front = np.argsort(-z_head, kind="stable")[:face_count]
    face = np.sort(head[front])

    subsets = {"head": head, "face": face}
    face_pts = template[face]
    directions = np.array([
        [0.0, 0.0, 1.0],    # nose tip
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],   # chin
        [1.0, 0.0, 1.0],
        [-1.0, 0.0, 1.0],
    ])
    key = []
    for d in directions:
        scores = face_pts @ d
        for j in np.argsort(-scores, kind="stable"):
            cand = int(face[j])
            if cand not in key:
                key.append(cand)
                break
    subsets["keypoint7"] = np.array(key, dtype=int)

    for name, count in LANDMARK_COUNTS.items():
        c = min(count, face_count)
        pos = np.round(np.linspace(0, face_count - 1, c)).astype(int)
        subsets[name] = face[pos]

    return HeadModel(
        template=template,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        jaw_joint=jaw_joint,
        jaw_weights=jaw_weights,
        subsets=subsets,
    )
