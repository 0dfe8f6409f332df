"""Deterministic loaders and writers: OBJ geometry, skin sidecars,
scalpel paths, clustering dumps, and benchmark CSV.

Every writer emits byte-stable output for equal inputs (floats are
serialized with repr, which round-trips exactly). Loaders reject
ambiguous content instead of guessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError, ParseError, StructuralError, ValidationError
from .mesh import Mesh
from .particles import Particle, SimParams, SoftBodyState
from .skinning import Bone, Skeleton
from .tear import SIDE_MINUS, SIDE_PLUS, ScalpelSample

BENCH_CSV_HEADER = "stage,mesh,faces_touched,micros_p50,micros_p95,micros_max"


def _f(x: float) -> str:
    return repr(float(x))


def _to_text(data) -> str:
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


# ---------------------------------------------------------------------------
# OBJ

@dataclass
class ObjData:
    positions: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    warnings: list[str] = field(default_factory=list)


def load_obj(data) -> ObjData:
    """Parse the ASCII OBJ subset: v, vn, vt, f (fan-triangulated), comments.

    Indices are 1-based; negative indices count from the end. Unknown
    directives are skipped and reported in the warnings list. Per-corner
    vt/vn references resolve onto the position index; conflicting
    assignments are rejected. Normals are normalized on load; attribute
    sets that do not cover every vertex are dropped with a warning.
    """
    text = _to_text(data)
    positions: list[list[float]] = []
    raw_normals: list[list[float]] = []
    raw_uvs: list[list[float]] = []
    face_rows: list[tuple[int, int, int]] = []
    vert_normal: dict[int, int] = {}
    vert_uv: dict[int, int] = {}
    warnings: list[str] = []
    seen_unknown: set[str] = set()

    def parse_floats(tokens, count, lineno, what):
        if len(tokens) < count:
            raise ParseError(f"{what} needs {count} components", line=lineno)
        try:
            return [float(t) for t in tokens[:count]]
        except ValueError as exc:
            raise ParseError(f"bad numeric field in {what}: {exc}", line=lineno)

    def resolve(idx: int, size: int, lineno: int, what: str) -> int:
        if idx == 0:
            raise ParseError(f"{what} index 0 is invalid", line=lineno)
        out = idx - 1 if idx > 0 else size + idx
        if out < 0 or out >= size:
            raise StructuralError(f"line {lineno}: {what} index {idx} out of range")
        return out

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            if len(tokens) - 1 not in (3, 4):
                raise ParseError("vertex needs 3 (or 3+w) components", line=lineno)
            positions.append(parse_floats(tokens[1:], 3, lineno, "vertex"))
        elif tag == "vn":
            raw_normals.append(parse_floats(tokens[1:], 3, lineno, "normal"))
        elif tag == "vt":
            raw_uvs.append(parse_floats(tokens[1:], 2, lineno, "uv"))
        elif tag == "f":
            corners = []
            for ref in tokens[1:]:
                parts = ref.split("/")
                vi = resolve(int(parts[0]), len(positions), lineno, "vertex")
                ti = ni = None
                if len(parts) > 1 and parts[1]:
                    ti = resolve(int(parts[1]), len(raw_uvs), lineno, "uv")
                if len(parts) > 2 and parts[2]:
                    ni = resolve(int(parts[2]), len(raw_normals), lineno, "normal")
                for table, idx, what in ((vert_uv, ti, "uv"), (vert_normal, ni, "normal")):
                    if idx is None:
                        continue
                    if table.setdefault(vi, idx) != idx:
                        raise ValidationError(
                            f"line {lineno}: vertex {vi + 1} referenced with "
                            f"conflicting {what} indices"
                        )
                corners.append(vi)
            if len(corners) < 3:
                raise ParseError("face needs at least 3 vertices", line=lineno)
            for i in range(1, len(corners) - 1):
                face_rows.append((corners[0], corners[i], corners[i + 1]))
        else:
            if tag not in seen_unknown:
                seen_unknown.add(tag)
                warnings.append(f"line {lineno}: ignored directive '{tag}'")

    if not positions:
        raise ParseError("no vertices in OBJ data")
    pos = np.array(positions)
    faces = np.array(face_rows, dtype=np.int64) if face_rows else np.zeros((0, 3), np.int64)

    normals = None
    if vert_normal:
        if len(vert_normal) == len(positions):
            normals = np.array([raw_normals[vert_normal[i]] for i in range(len(positions))])
            lengths = np.linalg.norm(normals, axis=1)
            if (lengths < 1e-12).any():
                raise ValidationError("zero-length normal")
            normals = normals / lengths[:, None]
        else:
            warnings.append("normals do not cover every vertex; dropped")
    uvs = None
    if vert_uv:
        if len(vert_uv) == len(positions):
            uvs = np.array([raw_uvs[vert_uv[i]] for i in range(len(positions))])
        else:
            warnings.append("uvs do not cover every vertex; dropped")

    return ObjData(pos, faces, normals=normals, uvs=uvs, warnings=warnings)


def write_obj(mesh: Mesh) -> bytes:
    """Serialize all vertices and the live faces, deterministically."""
    out = ["# meshtear obj"]
    for p in mesh.positions:
        out.append(f"v {_f(p[0])} {_f(p[1])} {_f(p[2])}")
    if mesh.uvs is not None:
        for t in mesh.uvs:
            out.append(f"vt {_f(t[0])} {_f(t[1])}")
    if mesh.normals is not None:
        for n in mesh.normals:
            out.append(f"vn {_f(n[0])} {_f(n[1])} {_f(n[2])}")
    has_t = mesh.uvs is not None
    has_n = mesh.normals is not None
    for fid in mesh.live_faces():
        a, b, c = (int(v) + 1 for v in mesh.faces[fid])
        if has_t and has_n:
            out.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
        elif has_t:
            out.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        elif has_n:
            out.append(f"f {a}//{a} {b}//{b} {c}//{c}")
        else:
            out.append(f"f {a} {b} {c}")
    return ("\n".join(out) + "\n").encode()


# ---------------------------------------------------------------------------
# skin sidecar

def load_skin(data) -> tuple[Skeleton, list]:
    """Parse the structured-text skin sidecar.

    Format::

        skin v1
        bones <count>
        bone <name> <parent-index> <12 floats: 3x4 global bind transform>
        verts <count>
        <vertex-index> <bone-name>:<weight> ...

    Weight sums off by at most 1e-3 are renormalized; anything worse is
    rejected, as are unknown bones and non-topological parent ordering.
    Returns the skeleton and a per-vertex influence list aligned to
    vertex indices (None entries are unskinned).
    """
    lines = [ln.strip() for ln in _to_text(data).splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "skin v1":
        raise FormatError("expected 'skin v1' header")
    i = 1
    if i >= len(lines) or not lines[i].startswith("bones "):
        raise FormatError("expected bone count")
    nbones = int(lines[i].split()[1])
    i += 1
    bones: list[Bone] = []
    names: dict[str, int] = {}
    for b in range(nbones):
        tokens = lines[i].split()
        i += 1
        if tokens[0] != "bone" or len(tokens) != 15:
            raise ParseError(f"bad bone line: {lines[i - 1]!r}")
        name, parent = tokens[1], int(tokens[2])
        if parent >= b:
            raise ValidationError(f"bone {name} parent {parent} is not topologically sorted")
        if name in names:
            raise ValidationError(f"duplicate bone name {name}")
        rows = [float(t) for t in tokens[3:15]]
        bind = np.vstack([np.array(rows).reshape(3, 4), [0.0, 0.0, 0.0, 1.0]])
        bones.append(Bone(name=name, parent=parent, inverse_bind=np.linalg.inv(bind)))
        names[name] = b
    skeleton = Skeleton(bones)

    if i >= len(lines) or not lines[i].startswith("verts "):
        raise FormatError("expected vertex count")
    nverts = int(lines[i].split()[1])
    i += 1
    skin: list = [None] * nverts
    while i < len(lines):
        tokens = lines[i].split()
        i += 1
        vid = int(tokens[0])
        if vid < 0 or vid >= nverts:
            raise StructuralError(f"skin entry for out-of-range vertex {vid}")
        influences = []
        for entry in tokens[1:]:
            bone_name, _, w = entry.rpartition(":")
            if bone_name not in names:
                raise ValidationError(f"unknown bone {bone_name!r} on vertex {vid}")
            influences.append((names[bone_name], float(w)))
        if len(influences) > 4:
            raise ValidationError(f"vertex {vid} has more than 4 influences")
        total = sum(w for _, w in influences)
        if abs(total - 1.0) > 1e-3:
            raise ValidationError(f"vertex {vid} weights sum to {total}")
        skin[vid] = tuple((b, w / total) for b, w in influences)
    return skeleton, skin


# ---------------------------------------------------------------------------
# scalpel path

@dataclass(frozen=True)
class ScalpelPathFile:
    width: float
    spacing: float
    samples: tuple[ScalpelSample, ...]
    version: int = 1


def load_scalpel_path(data) -> ScalpelPathFile:
    lines = [ln.strip() for ln in _to_text(data).splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "scalpelpath v1":
        raise FormatError("expected 'scalpelpath v1' header")
    width = spacing = None
    samples: list[ScalpelSample] = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if tokens[0] == "width":
            width = float(tokens[1])
        elif tokens[0] == "spacing":
            spacing = float(tokens[1])
        elif tokens[0] == "sample":
            if len(tokens) != 8:
                raise ParseError("sample needs tip xyz, tail xyz, timestamp", line=lineno)
            vals = [float(t) for t in tokens[1:]]
            samples.append(ScalpelSample(tuple(vals[0:3]), tuple(vals[3:6]), vals[6]))
        else:
            raise ParseError(f"unknown entry {tokens[0]!r}", line=lineno)
    if width is None or spacing is None:
        raise FormatError("scalpel path missing width/spacing")
    if width < 0:
        raise ValidationError("tear width must be >= 0")
    for a, b in zip(samples, samples[1:]):
        if b.timestamp < a.timestamp:
            raise ValidationError("scalpel samples are not time-ordered")
    return ScalpelPathFile(width=width, spacing=spacing, samples=tuple(samples))


def write_scalpel_path(path: ScalpelPathFile) -> bytes:
    out = ["scalpelpath v1", f"width {_f(path.width)}", f"spacing {_f(path.spacing)}"]
    for s in path.samples:
        out.append(
            "sample "
            + " ".join(_f(x) for x in s.tip)
            + " " + " ".join(_f(x) for x in s.tail)
            + f" {_f(s.timestamp)}"
        )
    return ("\n".join(out) + "\n").encode()


# ---------------------------------------------------------------------------
# clustering dump

_SIDE_CH = {SIDE_PLUS: "+", SIDE_MINUS: "-", None: "."}
_CH_SIDE = {"+": SIDE_PLUS, "-": SIDE_MINUS, ".": None}


def write_clustering(state: SoftBodyState, d: float) -> bytes:
    p = state.params
    out = [
        "clustering v1",
        f"params {_f(d)} {_f(p.stiffness)} {_f(p.damping)} {_f(p.timestep)} {p.weighting}",
    ]
    for pid in sorted(state.particles):
        part = state.particles[pid]
        out.append(
            f"particle {pid} seed {part.seed} side {_SIDE_CH[part.side]} "
            + "rest " + " ".join(_f(x) for x in part.rest_position)
            + " pos " + " ".join(_f(x) for x in part.position)
            + " vel " + " ".join(_f(x) for x in part.velocity)
        )
        out.append("members " + " ".join(str(v) for v in sorted(part.members)))
    return ("\n".join(out) + "\n").encode()


def load_clustering(data) -> tuple[SoftBodyState, float]:
    lines = [ln.strip() for ln in _to_text(data).splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "clustering v1":
        raise FormatError("expected 'clustering v1' header")
    tokens = lines[1].split()
    if tokens[0] != "params" or len(tokens) != 6:
        raise FormatError("bad params line")
    d = float(tokens[1])
    params = SimParams(stiffness=float(tokens[2]), damping=float(tokens[3]),
                       timestep=float(tokens[4]), weighting=tokens[5])
    state = SoftBodyState(params)
    i = 2
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "particle":
            raise ParseError(f"expected particle line, got {lines[i]!r}")
        pid = int(head[1])
        seed = int(head[3])
        side = _CH_SIDE[head[5]]
        vals = [float(t) for t in head[7:10] + head[11:14] + head[15:18]]
        members_line = lines[i + 1].split()
        if members_line[0] != "members":
            raise ParseError(f"expected members line after particle {pid}")
        members = set(int(t) for t in members_line[1:])
        part = Particle(
            id=pid, members=members, seed=seed,
            rest_position=np.array(vals[0:3]),
            position=np.array(vals[3:6]),
            velocity=np.array(vals[6:9]),
            side=side,
        )
        state.particles[pid] = part
        for v in members:
            state.vertex_memberships.setdefault(v, []).append(pid)
        state._next_id = max(state._next_id, pid + 1)
        i += 2
    for v in state.vertex_memberships:
        state.vertex_memberships[v].sort()
    return state, d


# ---------------------------------------------------------------------------
# bench CSV

def write_bench(report) -> bytes:
    """Fixed-column CSV: one row per pipeline stage."""
    rows = [BENCH_CSV_HEADER]
    for stage in report.stage_order:
        st = report.stages[stage]
        rows.append(
            f"{stage},{report.mesh_name},{report.faces_touched},"
            f"{_f(st.p50)},{_f(st.p95)},{_f(st.max)}"
        )
    return ("\n".join(rows) + "\n").encode()
