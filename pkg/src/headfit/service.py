"""Session-oriented annotation service.

Exposes the fitter to an interactive client: create a session, mutate pins
(each accepted mutation bumps the revision by one and triggers a
warm-started refit), poll projected geometry, export the annotation record.

State reads never block behind refits: every completed refit publishes an
immutable snapshot (pins + fit + the revision they belong to), and
get_state serves the latest snapshot, so a response can never mix pins
from one revision with a fit from another. Mutations on one session are
serialized in arrival order by a per-session lock; different sessions run
concurrently.

Transport: JSON over HTTP on a configurable local port, no authentication
(local tool). Endpoints: POST /sessions, POST /sessions/{id}/pins,
GET /sessions/{id}/state, GET /sessions/{id}/export, GET /models,
GET /health.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import dataio
from .errors import (ConflictingRevision, HeadfitError, UnknownModel,
                     UnknownSession)
from .fitter import FitResult, FitSession, Pin, project_pins


@dataclass(frozen=True)
class _Snapshot:
    revision: int
    pins: tuple
    result: FitResult


class _Session:
    def __init__(self, session_id: str, model_id: str, model, image_size):
        self.id = session_id
        self.model_id = model_id
        self.model = model
        self.image_size = image_size
        self.lock = threading.Lock()
        self.fit_session = FitSession(model, image_size=image_size)
        self.latest_revision = 0
        self.snapshot = _Snapshot(revision=0, pins=(),
                                  result=self.fit_session.result)


class AnnotationService:
    """Transport-independent session manager (the HTTP layer wraps this)."""

    def __init__(self, models: dict):
        self.models = dict(models)
        self.sessions: dict = {}
        self._registry_lock = threading.Lock()

    # -- helpers --------------------------------------------------------

    def _session(self, session_id: str) -> _Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no session {session_id!r}") from None

    def list_models(self) -> dict:
        out = {}
        for model_id, model in sorted(self.models.items()):
            out[model_id] = {
                "num_vertices": model.num_vertices,
                "num_shape": model.num_shape,
                "num_expr": model.num_expr,
                "subsets": {name: int(len(idx))
                            for name, idx in sorted(model.subsets.items())},
            }
        return {"models": out}

    # -- operations -----------------------------------------------------

    def create_session(self, model_id: str, image_size) -> dict:
        if model_id not in self.models:
            raise UnknownModel(f"no model {model_id!r} loaded")
        w, h = int(image_size[0]), int(image_size[1])
        if w <= 0 or h <= 0:
            raise HeadfitError("image_size must be positive")
        session_id = uuid.uuid4().hex
        sess = _Session(session_id, model_id, self.models[model_id], (w, h))
        with self._registry_lock:
            self.sessions[session_id] = sess
        return {"session_id": session_id, "model_id": model_id,
                "image_size": [w, h], "revision": 0}

    def mutate_pins(self, session_id: str, op: str, pin: dict,
                    expected_revision=None) -> dict:
        sess = self._session(session_id)
        with sess.lock:
            if (expected_revision is not None
                    and int(expected_revision) != sess.latest_revision):
                raise ConflictingRevision(
                    f"expected revision {expected_revision}, "
                    f"session is at {sess.latest_revision}")
            vertex_id = int(pin["vertex_id"])
            if op == "add":
                p = Pin(vertex_id=vertex_id,
                        pixel=np.asarray(pin["pixel"], dtype=float),
                        weight=float(pin.get("weight", 1.0)))
                result = sess.fit_session.add_pin(p)
            elif op == "move":
                p = Pin(vertex_id=vertex_id,
                        pixel=np.asarray(pin["pixel"], dtype=float),
                        weight=float(pin.get("weight", 1.0)))
                result = sess.fit_session.move_pin(p)
            elif op == "delete":
                result = sess.fit_session.delete_pin(vertex_id)
            else:
                raise HeadfitError(f"unknown pin operation {op!r}")
            sess.latest_revision += 1
            sess.snapshot = _Snapshot(revision=sess.latest_revision,
                                      pins=tuple(sess.fit_session.pins),
                                      result=result)
            return {"revision": sess.latest_revision,
                    "rms_pin_error": result.rms_pin_error,
                    "converged": result.converged}

    def get_state(self, session_id: str, subset: str = "landmark68") -> dict:
        sess = self._session(session_id)
        snap = sess.snapshot  # atomic read of the latest consistent state
        idx = sess.model.subset_indices(subset)
        points = project_pins(sess.model, snap.result.params, idx)
        return {
            "revision": snap.revision,
            "latest_revision": sess.latest_revision,
            "subset": subset,
            "points": points.tolist(),
            "pins": [{"vertex_id": p.vertex_id,
                      "pixel": [float(p.pixel[0]), float(p.pixel[1])],
                      "weight": p.weight} for p in snap.pins],
            "rms_pin_error": snap.result.rms_pin_error,
            "params": {
                "beta": snap.result.params.shape.beta.tolist(),
                "psi": snap.result.params.shape.psi.tolist(),
                "theta_jaw": np.asarray(snap.result.params.shape.theta_jaw).tolist(),
                "rot6": np.asarray(snap.result.params.pose.rot6).tolist(),
                "scale": snap.result.params.pose.scale,
                "translation": np.asarray(snap.result.params.pose.translation).tolist(),
            },
        }

    def export_annotation(self, session_id: str) -> dict:
        sess = self._session(session_id)
        snap = sess.snapshot
        ann = dataio.annotation_from_params(sess.model, snap.result.params.shape,
                                            snap.result.params.pose,
                                            sess.image_size)
        payload = dataio.annotation_payload(ann)
        payload["revision"] = snap.revision
        payload["model_id"] = sess.model_id
        return payload


_STATUS_FOR = {
    "UnknownSession": 404,
    "UnknownModel": 404,
    "UnknownPin": 404,
    "UnknownSubset": 404,
    "InvalidVertex": 400,
    "ConflictingRevision": 409,
}


class _Handler(BaseHTTPRequestHandler):
    service: AnnotationService = None  # set by make_server

    def log_message(self, *args):  # quiet by default
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, exc: Exception) -> None:
        if isinstance(exc, HeadfitError):
            status = _STATUS_FOR.get(exc.code, 400)
            self._send(status, {"error": {"code": exc.code, "message": str(exc)}})
        else:
            self._send(500, {"error": {"code": "Internal", "message": str(exc)}})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        if length == 0:
            return {}
        return json.loads(self.rfile.read(length).decode())

    def do_OPTIONS(self):
        self._send(204, {})

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if parts == ["health"]:
                self._send(200, {"status": "ok"})
            elif parts == ["models"]:
                self._send(200, self.service.list_models())
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "state":
                query = parse_qs(url.query)
                subset = query.get("subset", ["landmark68"])[0]
                self._send(200, self.service.get_state(parts[1], subset=subset))
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "export":
                self._send(200, self.service.export_annotation(parts[1]))
            else:
                self._send(404, {"error": {"code": "NotFound",
                                           "message": self.path}})
        except Exception as exc:  # noqa: BLE001 - map to error payloads
            self._send_error(exc)

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            body = self._read_body()
            if parts == ["sessions"]:
                out = self.service.create_session(body["model_id"],
                                                  body["image_size"])
                self._send(200, out)
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "pins":
                out = self.service.mutate_pins(
                    parts[1], body["op"], body.get("pin", {}),
                    expected_revision=body.get("expected_revision"))
                self._send(200, out)
            else:
                self._send(404, {"error": {"code": "NotFound",
                                           "message": self.path}})
        except KeyError as exc:
            self._send(400, {"error": {"code": "MissingField",
                                       "message": f"missing field {exc}"}})
        except Exception as exc:  # noqa: BLE001
            self._send_error(exc)


def make_server(service: AnnotationService, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def run_server(service: AnnotationService, host: str = "127.0.0.1",
               port: int = 8321) -> None:
    server = make_server(service, host=host, port=port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
