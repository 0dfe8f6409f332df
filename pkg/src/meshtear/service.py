"""Interactive session host.

A Session owns one mesh plus its soft-body state and processes a message
stream: model loads, parameter changes, scalpel strokes, particle drags,
picks, ticks, resets. Strokes commit on stroke_end: the buffered samples
become a chained cell sequence, each segment is applied atomically and
followed by cluster repair, and the response streams the deltas tagged
with the new revision. Every accepted non-query message lands in the
transcript, so replaying a transcript headlessly reproduces the live
session's final mesh and clustering byte for byte.

Wire protocol (see docs/protocol.md): length-delimited JSON text frames
over a TCP socket, one session per connection, version handshake first.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
from typing import Optional

import numpy as np

from .errors import (
    MeshTearError,
    ProtocolError,
    StaleRevisionError,
)
from .formats import load_obj, load_skin, write_clustering, write_obj
from .mesh import Mesh, Ray, build_mesh, raycast
from .particles import (
    SimParams,
    SoftBodyState,
    apply_vertex_positions,
    decompose,
    displace_particle,
    step,
    update_after_tear,
)
from .skinning import Skeleton
from .tear import ScalpelSample, apply_tear_segment, build_cells, sample_path

log = logging.getLogger(__name__)

PROTO_VERSION = 1

QUERY_TYPES = {"pick", "snapshot", "artifacts", "hello"}


class Session:
    """Headless session core; the server wraps one per connection."""

    def __init__(self, session_id: str = "local"):
        self.id = session_id
        self.revision = 0
        self.mesh: Optional[Mesh] = None
        self.state: Optional[SoftBodyState] = None
        self.skeleton: Optional[Skeleton] = None
        self.width = 0.05
        self.spacing = 0.05
        self.d = 0.1
        self.params = SimParams()
        self.stroke: Optional[list[ScalpelSample]] = None
        self.transcript: list[dict] = []
        self._pristine: Optional[tuple[Mesh, SoftBodyState, float, SimParams]] = None
        self._last_positions: Optional[np.ndarray] = None

    # -- helpers ---------------------------------------------------------

    def _require_mesh(self) -> Mesh:
        if self.mesh is None:
            raise ProtocolError("no model loaded")
        return self.mesh

    def _bump(self) -> None:
        self.revision += 1

    def _check_revision(self, msg: dict) -> None:
        rev = msg.get("revision")
        if rev is not None and rev != self.revision:
            raise StaleRevisionError(
                f"message revision {rev} != current {self.revision}", self.revision
            )

    def _sync_last_positions(self) -> None:
        mesh = self._require_mesh()
        if self._last_positions is None:
            self._last_positions = mesh.positions.copy()
        elif len(self._last_positions) < mesh.vertex_count:
            tail = mesh.positions[len(self._last_positions):]
            self._last_positions = np.vstack([self._last_positions, tail])

    # -- message handlers ------------------------------------------------

    def handle(self, msg: dict) -> dict:
        """Process one message; returns the response payload.

        Raises ProtocolError subclasses on malformed or stale input; the
        server turns those into error responses.
        """
        if not isinstance(msg, dict) or "type" not in msg:
            raise ProtocolError("message must be an object with a 'type'")
        mtype = msg["type"]
        handler = getattr(self, f"_on_{mtype}", None)
        if handler is None:
            raise ProtocolError(f"unknown message type {mtype!r}")
        self._check_revision(msg)
        response = handler(msg)
        if mtype not in QUERY_TYPES:
            self.transcript.append(msg)
        response.setdefault("revision", self.revision)
        return response

    def _on_hello(self, msg: dict) -> dict:
        proto = msg.get("proto")
        if proto != PROTO_VERSION:
            raise ProtocolError(f"protocol version {proto} unsupported")
        return {"type": "hello", "proto": PROTO_VERSION, "session": self.id}

    def _on_load_model(self, msg: dict) -> dict:
        if "obj" not in msg:
            raise ProtocolError("load_model needs inline 'obj' text")
        data = load_obj(msg["obj"])
        skin = None
        self.skeleton = None
        if msg.get("skin"):
            self.skeleton, skin = load_skin(msg["skin"])
        self.mesh = build_mesh(data.positions, data.faces, normals=data.normals,
                               uvs=data.uvs, skin=skin)
        self.state = decompose(self.mesh, self.d, self.params)
        self._pristine = (self.mesh.copy(), _copy_state(self.state), self.d, self.params)
        self._last_positions = None
        self.stroke = None
        self._bump()
        return {
            "type": "loaded",
            "name": msg.get("name", "model"),
            "vertices": self.mesh.vertex_count,
            "faces": int(self.mesh.live_face_count),
            "particles": len(self.state.particles),
            "skinned": self.skeleton is not None,
        }

    def _on_set_params(self, msg: dict) -> dict:
        if "w" in msg:
            if msg["w"] < 0:
                raise ProtocolError("w must be >= 0")
            self.width = float(msg["w"])
        if "spacing" in msg:
            self.spacing = float(msg["spacing"])
        new_params = SimParams(
            stiffness=float(msg.get("k", self.params.stiffness)),
            damping=float(msg.get("c", self.params.damping)),
            timestep=float(msg.get("h", self.params.timestep)),
            weighting=self.params.weighting,
        )
        try:
            new_params.validate()
            d = float(msg.get("d", self.d))
            if d <= 0:
                raise ProtocolError("d must be > 0")
        except MeshTearError as exc:
            raise ProtocolError(str(exc))
        self.params = new_params
        recluster = d != self.d and self.mesh is not None
        self.d = d
        if self.mesh is not None:
            if recluster:
                self.state = decompose(self.mesh, self.d, self.params)
            else:
                self.state.params = self.params
        self._bump()
        return {"type": "params", "w": self.width, "d": self.d,
                "k": self.params.stiffness, "c": self.params.damping,
                "h": self.params.timestep}

    def _on_stroke_begin(self, msg: dict) -> dict:
        self._require_mesh()
        self.stroke = []
        return {"type": "stroke", "buffered": 0}

    def _on_stroke_sample(self, msg: dict) -> dict:
        if self.stroke is None:
            raise ProtocolError("no open stroke")
        try:
            sample = ScalpelSample(
                tuple(msg["tip"]), tuple(msg["tail"]), float(msg.get("t", 0.0))
            )
        except (KeyError, TypeError, MeshTearError) as exc:
            raise ProtocolError(f"bad stroke sample: {exc}")
        self.stroke.append(sample)
        return {"type": "stroke", "buffered": len(self.stroke)}

    def _on_stroke_end(self, msg: dict) -> dict:
        if self.stroke is None:
            raise ProtocolError("no open stroke")
        mesh = self._require_mesh()
        buffered, self.stroke = self.stroke, None
        deltas = []
        segment_micros = []
        if len(buffered) >= 2:
            samples = sample_path(buffered, self.spacing)
            for cell in build_cells(samples, self.width):
                t0 = time.perf_counter_ns()
                delta = apply_tear_segment(mesh, cell)
                update_after_tear(self.state, delta, mesh, self.d)
                segment_micros.append((time.perf_counter_ns() - t0) / 1000.0)
                deltas.append(delta)
        applied = [d for d in deltas if not d.empty]
        if applied:
            self._sync_last_positions()
            self._bump()
        return {
            "type": "tear",
            "deltas": [d.payload() for d in applied],
            "segment_micros": segment_micros,
        }

    def _on_drag_particle(self, msg: dict) -> dict:
        if self.state is None:
            raise ProtocolError("no model loaded")
        try:
            displace_particle(self.state, int(msg["id"]), msg["dx"])
        except (KeyError, MeshTearError) as exc:
            raise ProtocolError(f"bad drag: {exc}")
        self._bump()
        return {"type": "dragged", "id": int(msg["id"])}

    def _on_pick(self, msg: dict) -> dict:
        mesh = self._require_mesh()
        try:
            direction = np.asarray(msg["direction"], dtype=np.float64)
            n = np.linalg.norm(direction)
            if n == 0:
                raise ProtocolError("zero pick direction")
            ray = Ray(np.asarray(msg["origin"], dtype=np.float64), direction / n,
                      float(msg.get("max_t", np.inf)))
        except (KeyError, TypeError, MeshTearError) as exc:
            raise ProtocolError(f"bad pick: {exc}")
        hit = raycast(mesh, ray)
        if hit is None:
            return {"type": "pick", "hit": None}
        return {
            "type": "pick",
            "hit": {
                "face": hit.face,
                "t": hit.t,
                "point": [float(x) for x in hit.point],
                "bary": list(hit.bary),
            },
        }

    def _on_tick(self, msg: dict) -> dict:
        mesh = self._require_mesh()
        self._sync_last_positions()
        step(self.state)
        positions = apply_vertex_positions(self.state, mesh, self.skeleton)
        changed = np.nonzero(
            np.any(positions != self._last_positions, axis=1)
        )[0]
        dirty = [[int(v)] + [float(x) for x in positions[v]] for v in changed]
        self._last_positions = positions
        self._bump()
        particles = [
            [pid] + [float(x) for x in self.state.particles[pid].position]
            for pid in sorted(self.state.particles)
        ]
        return {"type": "frame", "particles": particles, "dirty": dirty}

    def _on_reset(self, msg: dict) -> dict:
        if self._pristine is None:
            raise ProtocolError("nothing to reset")
        mesh0, state0, d0, params0 = self._pristine
        self.mesh = mesh0.copy()
        self.state = _copy_state(state0)
        self.d = d0
        self.params = params0
        self.stroke = None
        self._last_positions = None
        self._bump()
        return {"type": "reset"}

    def _on_artifacts(self, msg: dict) -> dict:
        obj_bytes, clustering_bytes = self.final_artifacts()
        return {
            "type": "artifacts",
            "obj": obj_bytes.decode(),
            "clustering": clustering_bytes.decode(),
        }

    def _on_snapshot(self, msg: dict) -> dict:
        mesh = self._require_mesh()
        return {
            "type": "snapshot",
            "positions": [[float(x) for x in p] for p in mesh.positions],
            "faces": [[int(v) for v in mesh.faces[f]] for f in mesh.live_faces()],
            "particles": [
                [pid] + [float(x) for x in self.state.particles[pid].position]
                for pid in sorted(self.state.particles)
            ],
        }

    # -- equivalence artifacts -------------------------------------------

    def final_artifacts(self) -> tuple[bytes, bytes]:
        """Canonical (mesh, clustering) bytes for replay comparison."""
        mesh = self._require_mesh()
        return write_obj(mesh), write_clustering(self.state, self.d)


def _copy_state(state: SoftBodyState) -> SoftBodyState:
    import copy as _copy

    clone = SoftBodyState(SimParams(**vars(state.params)))
    clone.particles = {
        pid: _copy.deepcopy(p) for pid, p in state.particles.items()
    }
    clone.vertex_memberships = {v: list(ms) for v, ms in state.vertex_memberships.items()}
    clone.vertex_sides = dict(state.vertex_sides)
    clone._next_id = state._next_id
    clone._tree = state._tree
    clone._tree_count = state._tree_count
    return clone


def replay_transcript(messages: list[dict], session_id: str = "replay") -> Session:
    """Drive a fresh session through a recorded message sequence."""
    session = Session(session_id)
    for msg in messages:
        session.handle(msg)
    return session


# ---------------------------------------------------------------------------
# wire layer

def send_frame(sock: socket.socket, payload: dict) -> None:
    body = json.dumps(payload, separators=(",", ":")).encode()
    sock.sendall(str(len(body)).encode() + b"\n" + body)


def recv_frame(sock: socket.socket) -> Optional[dict]:
    header = b""
    while not header.endswith(b"\n"):
        chunk = sock.recv(1)
        if not chunk:
            return None
        header += chunk
        if len(header) > 20:
            raise ProtocolError("oversized frame header")
    try:
        length = int(header.strip())
    except ValueError:
        raise ProtocolError(f"bad frame header {header!r}")
    body = b""
    while len(body) < length:
        chunk = sock.recv(length - len(body))
        if not chunk:
            return None
        body += chunk
    try:
        return json.loads(body.decode())
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"bad frame body: {exc}")


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: SessionServer = self.server  # type: ignore[assignment]
        session = Session(session_id=f"{self.client_address[0]}:{self.client_address[1]}")
        first = True
        while True:
            try:
                msg = recv_frame(self.request)
            except ProtocolError as exc:
                send_frame(self.request, {"type": "error", "error": str(exc)})
                break
            if msg is None:
                break
            if first and msg.get("type") != "hello":
                send_frame(self.request, {
                    "type": "error", "error": "handshake required", "revision": 0,
                })
                break
            first = False
            try:
                response = session.handle(msg)
            except StaleRevisionError as exc:
                response = {"type": "error", "error": str(exc),
                            "revision": exc.current_revision}
            except MeshTearError as exc:
                response = {"type": "error", "error": str(exc),
                            "revision": session.revision}
            send_frame(self.request, response)
        server.on_session_close(session)


class SessionServer(socketserver.ThreadingTCPServer):
    """One session per connection; sessions share nothing."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str = "127.0.0.1", port: int = 7341,
                 record_dir: Optional[str] = None):
        super().__init__((host, port), _Handler)
        self.record_dir = record_dir
        self._session_counter = 0
        self._lock = threading.Lock()

    def on_session_close(self, session: Session) -> None:
        if not self.record_dir or not session.transcript:
            return
        import os

        with self._lock:
            self._session_counter += 1
            n = self._session_counter
        path = os.path.join(self.record_dir, f"session_{n:04d}.jsonl")
        with open(path, "w") as fh:
            for msg in session.transcript:
                fh.write(json.dumps(msg, separators=(",", ":")) + "\n")
        log.info("recorded transcript %s (%d messages)", path, len(session.transcript))


class WireClient:
    """Minimal blocking client used by tests and the CLI."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        reply = self.request({"type": "hello", "proto": PROTO_VERSION})
        if reply.get("type") != "hello":
            raise ProtocolError(f"handshake failed: {reply}")

    def request(self, msg: dict) -> dict:
        send_frame(self.sock, msg)
        reply = recv_frame(self.sock)
        if reply is None:
            raise ProtocolError("connection closed")
        return reply

    def close(self) -> None:
        self.sock.close()
