"""File formats: model container, meshes, annotations, pins, reports.

Annotations, pin files, label sets, and metric reports are JSON with
explicit field names so they stay diffable; the model container is a
deterministic zip of npy arrays with a content hash. Meshes use the OBJ
text format for interoperability with scan tooling. All numeric payloads
round-trip losslessly.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import camera, morphable
from .camera import (ProjectionMatrices, orthographic_frustum,
                     similarity_to_model_view)
from .errors import ChecksumMismatch, ParseError, SchemaMismatch
from .metrics import BBox, LabelSet, MetricReport
from .morphable import HeadModel, Mesh, ShapeParams

SCHEMA_VERSION = 1

POSE_VALUES = ("front", "side", "atypical")
EXPRESSION_VALUES = ("neutral", "non-neutral")
GENDER_VALUES = ("female", "male", "unknown")
AGE_VALUES = ("child", "young", "middle", "senior", "unknown")
QUALITY_VALUES = ("high", "low")
ILLUMINATION_VALUES = ("standard", "non-standard")


@dataclass(frozen=True)
class AttributeCard:
    pose: str = "front"
    expression: str = "neutral"
    occlusion: bool = False
    gender: str = "unknown"
    age_group: str = "unknown"
    quality: str = "high"
    illumination: str = "standard"

    def violations(self) -> list:
        out = []
        checks = (
            ("pose", self.pose, POSE_VALUES),
            ("expression", self.expression, EXPRESSION_VALUES),
            ("gender", self.gender, GENDER_VALUES),
            ("age_group", self.age_group, AGE_VALUES),
            ("quality", self.quality, QUALITY_VALUES),
            ("illumination", self.illumination, ILLUMINATION_VALUES),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                out.append({"code": "InvalidAttribute", "field": name,
                            "message": f"{value!r} not in {allowed}"})
        if not isinstance(self.occlusion, bool):
            out.append({"code": "InvalidAttribute", "field": "occlusion",
                        "message": "must be a boolean"})
        return out


@dataclass(frozen=True)
class Annotation:
    """One dataset record: fitted vertices plus the projection matrices and
    the attribute card. Lengths are model units; pixel fields are px."""

    vertices: np.ndarray      # (K, 3)
    model_view: np.ndarray    # (4, 4)
    frustum: np.ndarray       # (4, 4)
    bbox: BBox
    attributes: AttributeCard = field(default_factory=AttributeCard)
    image_size: tuple = (512, 512)
    subsets: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def matrices(self) -> ProjectionMatrices:
        return ProjectionMatrices(model_view=self.model_view, frustum=self.frustum)


@dataclass(frozen=True)
class PinFile:
    image_ref: str
    image_size: tuple          # (w, h) px
    model_id: str
    pins: list                 # of fitter.Pin
    schema_version: int = SCHEMA_VERSION


def _json_loads(text: str, where: str = "<data>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{where}: invalid JSON at line {exc.lineno} column {exc.colno} "
            f"(offset {exc.pos}): {exc.msg}") from None


def _require(payload: dict, key: str, where: str):
    if key not in payload:
        raise SchemaMismatch(f"{where}: missing required field {key!r}")
    return payload[key]


def _check_version(payload: dict, where: str) -> None:
    version = _require(payload, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(
            f"{where}: unsupported schema_version {version!r} "
            f"(this build reads {SCHEMA_VERSION})")


def _check_kind(payload: dict, expected: str, where: str) -> None:
    kind = _require(payload, "kind", where)
    if kind != expected:
        raise SchemaMismatch(f"{where}: expected kind {expected!r}, got {kind!r}")


def _matrix(payload, key, shape, where):
    arr = np.asarray(_require(payload, key, where), dtype=float)
    if arr.shape != shape:
        raise SchemaMismatch(f"{where}: field {key!r} must have shape {shape}")
    return arr


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None


# -- model container ---------------------------------------------------------

def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _container_digest(entries: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(entries):
        h.update(name.encode())
        h.update(entries[name])
    return h.hexdigest()


def save_head_model(path, model: HeadModel) -> None:
    """Binary container: npy entries in a deterministic zip with a sha256
    over the payload, so identical models produce identical files."""
    entries = {
        "template.npy": _npy_bytes(model.template),
        "shape_basis.npy": _npy_bytes(model.shape_basis),
        "expr_basis.npy": _npy_bytes(model.expr_basis),
        "jaw_joint.npy": _npy_bytes(model.jaw_joint),
        "jaw_weights.npy": _npy_bytes(model.jaw_weights),
    }
    for name, idx in sorted(model.subsets.items()):
        entries[f"subset_{name}.npy"] = _npy_bytes(np.asarray(idx, dtype=np.int64))
    meta = {"schema_version": SCHEMA_VERSION, "kind": "head_model",
            "units": "model"}
    entries["meta.json"] = (json.dumps(meta, sort_keys=True) + "\n").encode()
    digest = _container_digest(entries)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, entries[name])
        info = zipfile.ZipInfo("sha256.txt", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, digest + "\n")


def load_head_model(path) -> HeadModel:
    try:
        zf = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise ParseError(f"{path}: not a readable model container ({exc})") from None
    with zf:
        names = set(zf.namelist())
        if "sha256.txt" not in names or "meta.json" not in names:
            raise SchemaMismatch(f"{path}: missing container metadata entries")
        try:
            entries = {name: zf.read(name) for name in names if name != "sha256.txt"}
            stored = zf.read("sha256.txt").decode().strip()
        except zipfile.BadZipFile as exc:
            raise ChecksumMismatch(f"{path}: corrupted entry ({exc})") from None
    if _container_digest(entries) != stored:
        raise ChecksumMismatch(f"{path}: content hash does not match sha256.txt")
    meta = _json_loads(entries["meta.json"].decode(), where=f"{path}:meta.json")
    _check_version(meta, where=str(path))
    _check_kind(meta, "head_model", where=str(path))

    def read_npy(name):
        if name not in entries:
            raise SchemaMismatch(f"{path}: missing array entry {name!r}")
        return np.lib.format.read_array(io.BytesIO(entries[name]),
                                        allow_pickle=False)

    subsets = {}
    for name in entries:
        if name.startswith("subset_"):
            subsets[name[len("subset_"):-len(".npy")]] = read_npy(name)
    return HeadModel(
        template=read_npy("template.npy"),
        shape_basis=read_npy("shape_basis.npy"),
        expr_basis=read_npy("expr_basis.npy"),
        jaw_joint=read_npy("jaw_joint.npy"),
        jaw_weights=read_npy("jaw_weights.npy"),
        subsets=subsets,
    )


# -- meshes (OBJ) ------------------------------------------------------------

def save_mesh(path, mesh: Mesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        if mesh.faces is not None:
            for f in mesh.faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_mesh(path) -> Mesh:
    vertices = []
    faces = []
    for lineno, line in enumerate(_load_text(path).splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise ParseError(f"{path}: line {lineno}: vertex needs 3 coords")
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad vertex number") from None
        elif parts[0] == "f":
            if len(parts) < 4:
                raise ParseError(f"{path}: line {lineno}: face needs 3 indices")
            try:
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad face index") from None
            faces.append(idx)
    if not vertices:
        raise ParseError(f"{path}: no vertices found")
    v = np.array(vertices, dtype=float)
    f = np.array(faces, dtype=int) if faces else None
    if f is not None and (f.min() < 0 or f.max() >= len(v)):
        raise ParseError(f"{path}: face index out of range")
    return Mesh(vertices=v, faces=f)


# -- annotations -------------------------------------------------------------

def annotation_from_params(model: HeadModel, shape: ShapeParams, pose,
                           image_size) -> Annotation:
    """Annotation record equivalent to a fitted parameter set.

    Decodes the vertices, stores the similarity transform as the model-view
    matrix with an orthographic-equivalent frustum, and derives the bbox
    from the projected head subset. The attribute card starts empty for the
    operator to complete.
    """
    mesh = morphable.decode(model, shape)
    t = pose.to_similarity()
    head_px = camera.project_orthographic(camera.apply_similarity(
        mesh.vertices[model.subset_indices("head")], t))
    lo = head_px.min(axis=0)
    hi = head_px.max(axis=0)
    bbox = BBox(x=float(lo[0]), y=float(lo[1]),
                w=float(max(hi[0] - lo[0], 1.0)),
                h=float(max(hi[1] - lo[1], 1.0)))
    subsets = {name: model.subsets[name]
               for name in ("head", "face", "keypoint7", "landmark68")
               if name in model.subsets}
    return Annotation(
        vertices=mesh.vertices,
        model_view=similarity_to_model_view(t),
        frustum=orthographic_frustum(image_size),
        bbox=bbox,
        image_size=(int(image_size[0]), int(image_size[1])),
        subsets=subsets,
    )


def annotation_payload(ann: Annotation) -> dict:
    return {
        "schema_version": ann.schema_version,
        "kind": "annotation",
        "units": "model",
        "image_size": [int(ann.image_size[0]), int(ann.image_size[1])],
        "vertices": ann.vertices.tolist(),
        "model_view": ann.model_view.tolist(),
        "frustum": ann.frustum.tolist(),
        "bbox": {"x": ann.bbox.x, "y": ann.bbox.y, "w": ann.bbox.w,
                 "h": ann.bbox.h, "units": "px"},
        "attributes": asdict(ann.attributes),
        "subsets": {k: np.asarray(v).tolist() for k, v in sorted(ann.subsets.items())},
    }


def save_annotation(path, ann: Annotation) -> None:
    _dump_json(path, annotation_payload(ann))


def load_annotation(path) -> Annotation:
    where = str(path)
    payload = _json_loads(_load_text(path), where=where)
    _check_version(payload, where)
    _check_kind(payload, "annotation", where)
    vertices = np.asarray(_require(payload, "vertices", where), dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise SchemaMismatch(f"{where}: vertices must be Kx3")
    bb = _require(payload, "bbox", where)
    for key in ("x", "y", "w", "h"):
        if key not in bb:
            raise SchemaMismatch(f"{where}: bbox missing field {key!r}")
    attrs = _require(payload, "attributes", where)
    known = {f: attrs[f] for f in AttributeCard.__dataclass_fields__ if f in attrs}
    size = _require(payload, "image_size", where)
    ann = Annotation(
        vertices=vertices,
        model_view=_matrix(payload, "model_view", (4, 4), where),
        frustum=_matrix(payload, "frustum", (4, 4), where),
        bbox=BBox(x=float(bb["x"]), y=float(bb["y"]), w=float(bb["w"]), h=float(bb["h"])),
        attributes=AttributeCard(**known),
        image_size=(int(size[0]), int(size[1])),
        subsets={k: np.asarray(v, dtype=int)
                 for k, v in payload.get("subsets", {}).items()},
    )
    return ann


def validate_annotation(ann: Annotation, model: HeadModel | None = None) -> list:
    """Machine-readable violation list; returns instead of raising."""
    out = []
    k = ann.vertices.shape[0]
    if model is not None and k != model.num_vertices:
        out.append({"code": "VertexCountMismatch", "field": "vertices",
                    "message": f"annotation has {k}, model has {model.num_vertices}"})
    if not np.all(np.isfinite(ann.vertices)):
        out.append({"code": "NonFinite", "field": "vertices",
                    "message": "vertices contain non-finite values"})
    if ann.model_view.shape != (4, 4):
        out.append({"code": "BadShape", "field": "model_view",
                    "message": "must be 4x4"})
    elif not np.allclose(ann.model_view[3], [0, 0, 0, 1], atol=1e-12):
        out.append({"code": "BadBottomRow", "field": "model_view",
                    "message": "bottom row must be (0, 0, 0, 1)"})
    if ann.frustum.shape != (4, 4):
        out.append({"code": "BadShape", "field": "frustum",
                    "message": "must be 4x4"})
    elif abs(np.linalg.det(ann.frustum)) < 1e-12:
        out.append({"code": "SingularFrustum", "field": "frustum",
                    "message": "frustum must be invertible"})
    out.extend(ann.attributes.violations())
    for name, idx in ann.subsets.items():
        idx = np.asarray(idx)
        if len(idx) and (idx.min() < 0 or idx.max() >= k):
            out.append({"code": "SubsetOutOfRange", "field": f"subsets.{name}",
                        "message": "index out of range"})
    return out


# -- pin files ---------------------------------------------------------------

def save_pin_file(path, pf: PinFile) -> None:
    payload = {
        "schema_version": pf.schema_version,
        "kind": "pins",
        "image_ref": pf.image_ref,
        "image_size": [int(pf.image_size[0]), int(pf.image_size[1])],
        "model_id": pf.model_id,
        "pins": [{"vertex_id": int(p.vertex_id),
                  "pixel": [float(p.pixel[0]), float(p.pixel[1])],
                  "weight": float(p.weight)} for p in pf.pins],
    }
    _dump_json(path, payload)


def load_pin_file(path) -> PinFile:
    from .fitter import Pin

    where = str(path)
    payload = _json_loads(_load_text(path), where=where)
    _check_version(payload, where)
    _check_kind(payload, "pins", where)
    size = _require(payload, "image_size", where)
    if len(size) != 2 or size[0] <= 0 or size[1] <= 0:
        raise SchemaMismatch(f"{where}: image_size must be two positive numbers")
    pins = []
    for i, entry in enumerate(_require(payload, "pins", where)):
        for key in ("vertex_id", "pixel"):
            if key not in entry:
                raise SchemaMismatch(f"{where}: pin {i} missing field {key!r}")
        pins.append(Pin(vertex_id=int(entry["vertex_id"]),
                        pixel=np.asarray(entry["pixel"], dtype=float),
                        weight=float(entry.get("weight", 1.0))))
    return PinFile(image_ref=_require(payload, "image_ref", where),
                   image_size=(int(size[0]), int(size[1])),
                   model_id=_require(payload, "model_id", where),
                   pins=pins)


# -- label sets & bboxes (quality scoring inputs) ----------------------------

def save_label_set(path, image_id: str, labels: LabelSet) -> None:
    _dump_json(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "labels",
        "image_id": image_id,
        "annotator_id": labels.annotator_id,
        "landmarks": np.asarray(labels.landmarks, dtype=float).tolist(),
    })


def load_label_set(path):
    where = str(path)
    payload = _json_loads(_load_text(path), where=where)
    _check_version(payload, where)
    _check_kind(payload, "labels", where)
    lm = np.asarray(_require(payload, "landmarks", where), dtype=float)
    if lm.shape != (68, 2):
        raise SchemaMismatch(f"{where}: landmarks must be 68x2")
    return (_require(payload, "image_id", where),
            LabelSet(landmarks=lm,
                     annotator_id=str(payload.get("annotator_id", ""))))


def save_bboxes(path, bboxes: dict) -> None:
    _dump_json(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "bboxes",
        "bboxes": {k: {"x": b.x, "y": b.y, "w": b.w, "h": b.h}
                   for k, b in sorted(bboxes.items())},
    })


def load_bboxes(path) -> dict:
    where = str(path)
    payload = _json_loads(_load_text(path), where=where)
    _check_version(payload, where)
    _check_kind(payload, "bboxes", where)
    out = {}
    for key, b in _require(payload, "bboxes", where).items():
        out[key] = BBox(x=float(b["x"]), y=float(b["y"]),
                        w=float(b["w"]), h=float(b["h"]))
    return out


# -- metric reports ----------------------------------------------------------

def save_metric_report(path, report: MetricReport, stamp: str | None = None) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "metric_report",
        "n_neighbors": report.n_neighbors,
        "units": report.units,
        "per_sample": report.per_sample,
        "overall": report.overall,
        "subgroups": report.subgroups,
        "failed": report.failed,
    }
    if stamp is not None:
        payload["stamp"] = stamp
    _dump_json(path, payload)


def load_metric_report(path) -> MetricReport:
    where = str(path)
    payload = _json_loads(_load_text(path), where=where)
    _check_version(payload, where)
    _check_kind(payload, "metric_report", where)
    return MetricReport(
        per_sample=_require(payload, "per_sample", where),
        overall=_require(payload, "overall", where),
        subgroups=_require(payload, "subgroups", where),
        n_neighbors=int(payload.get("n_neighbors", 5)),
        units=payload.get("units", {}),
        failed=payload.get("failed", {}),
    )
