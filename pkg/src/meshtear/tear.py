"""Continuous destructive tearing.

A scalpel stroke is sampled into segments; each segment spans a convex
tear cell: six oriented half-spaces (two gap walls W/2 either side of a
fitted mid plane, two blade-extent caps, two joint caps). Faces fully
interior to a cell are removed; faces crossing its boundary are clipped
by successive half-space passes and the kept convex pieces are fanned
back in with interpolated attributes and side labels.

Chained cells share their joint cap plane exactly (the bisector of the
two motion directions), which keeps consecutive cells disjoint and the
tear path free of double-removal and gaps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import GeometryError, ParameterError
from .geom import (
    Plane,
    cross,
    dot,
    fit_plane,
    halfspace_vertices,
    norm,
    normalized,
    polygon_area,
    vlerp,
    vsub,
)
from .mesh import Mesh, Vertex, apply_delta, faces_near
from .skinning import blend_weights

log = logging.getLogger(__name__)

SIDE_PLUS = 1
SIDE_MINUS = -1

# Ties on the mid plane resolve to the + side below this absolute distance.
SIDE_TIE_EPS = 1e-12
# Kept pieces smaller than this fraction of diagonal^2 are dropped.
SLIVER_AREA_REL = 1e-10
# Joints turning more than 179 degrees have no usable bisector.
BISECTOR_MIN_DOT = float(np.cos(np.deg2rad(179.0)))


@dataclass(frozen=True)
class ScalpelSample:
    """One captured blade pose: a tip-to-tail segment plus a timestamp."""

    tip: tuple[float, float, float]
    tail: tuple[float, float, float]
    timestamp: float = 0.0

    def __post_init__(self):
        tip = tuple(float(x) for x in self.tip)
        tail = tuple(float(x) for x in self.tail)
        if norm(vsub(tip, tail)) <= 1e-9:
            raise ParameterError("scalpel blade has zero length")
        object.__setattr__(self, "tip", tip)
        object.__setattr__(self, "tail", tail)


class TearCell:
    """Convex polytope removed by one tear segment.

    ``planes`` are ordered (gap+, gap-, tip cap, tail cap, start joint
    cap, end joint cap); the interior is where every signed distance is
    negative. ``mid_normal``/``mid_point`` define the width-zero central
    plane used for side labelling.
    """

    __slots__ = (
        "planes", "mid_normal", "mid_point", "width", "motion", "blade",
        "start_anchor", "end_anchor", "joint_fallback", "corners",
        "aabb_min", "aabb_max", "_plane_rows", "_mid_n", "_mid_c",
    )

    def __init__(self, planes, mid_normal, mid_point, width, motion, blade,
                 start_anchor, end_anchor, joint_fallback=False):
        self.planes: list[Plane] = list(planes)
        self.mid_normal = np.asarray(mid_normal, dtype=np.float64)
        self.mid_point = np.asarray(mid_point, dtype=np.float64)
        self.width = float(width)
        self.motion = np.asarray(motion, dtype=np.float64)
        self.blade = np.asarray(blade, dtype=np.float64)
        self.start_anchor = np.asarray(start_anchor, dtype=np.float64)
        self.end_anchor = np.asarray(end_anchor, dtype=np.float64)
        self.joint_fallback = bool(joint_fallback)
        self.refresh()

    def refresh(self) -> None:
        """Recompute corner/AABB caches after a plane replacement."""
        scale = max(1.0, float(np.linalg.norm(self.end_anchor - self.start_anchor)),
                    float(np.linalg.norm(self.blade)), self.width)
        corners = halfspace_vertices(self.planes, tol=1e-9 * scale)
        if len(corners) < 4:
            raise GeometryError("tear cell is empty or unbounded")
        self.corners = corners
        self.aabb_min = corners.min(axis=0)
        self.aabb_max = corners.max(axis=0)
        self._plane_rows = np.array([p.as_row() for p in self.planes])
        self._mid_n = tuple(float(x) for x in self.mid_normal)
        self._mid_c = tuple(float(x) for x in self.mid_point)

    def signed_mid(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (pts - self.mid_point) @ self.mid_normal

    def signed_mid_one(self, point) -> float:
        n, c = self._mid_n, self._mid_c
        return (
            (point[0] - c[0]) * n[0]
            + (point[1] - c[1]) * n[1]
            + (point[2] - c[2]) * n[2]
        )

    def plane_distances(self, points) -> np.ndarray:
        """Signed distances of points to all six planes, shape (n, 6)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self._plane_rows[:, :3].T + self._plane_rows[:, 3]

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Strict interior test; tol > 0 shrinks the cell, tol < 0 grows it."""
        return (self.plane_distances(points) < -tol).all(axis=1)


def side_of(cell: TearCell, point) -> int:
    """Side of the cell's mid plane; ties resolve to +."""
    s = cell.signed_mid_one(point)
    return SIDE_MINUS if s < -SIDE_TIE_EPS else SIDE_PLUS


@dataclass(frozen=True)
class NewVertex:
    """A clip-generated vertex: attributes, side, and edge provenance.

    ``edge`` holds the ids of the two vertices the clip interpolated
    between; ids at or above the pre-tear vertex count refer to earlier
    entries of the same delta's new_vertices list (cuts of cut edges).
    """

    vertex: Vertex
    side: int
    edge: tuple[int, int]
    t: float


@dataclass
class TearDelta:
    """Atomic topology edit produced by one tear segment."""

    removed_faces: list[int] = field(default_factory=list)
    new_vertices: list[NewVertex] = field(default_factory=list)
    new_faces: list[tuple[int, int, int]] = field(default_factory=list)
    cell: Optional[TearCell] = None

    @property
    def empty(self) -> bool:
        return not self.removed_faces and not self.new_vertices and not self.new_faces

    def payload(self) -> dict:
        """JSON-ready canonical form (also the wire shape)."""
        return {
            "removed_faces": [int(f) for f in self.removed_faces],
            "new_vertices": [
                {
                    "position": list(nv.vertex.position),
                    "normal": list(nv.vertex.normal) if nv.vertex.normal else None,
                    "uv": list(nv.vertex.uv) if nv.vertex.uv else None,
                    "skin": [[b, w] for b, w in nv.vertex.skin] if nv.vertex.skin else None,
                    "side": nv.side,
                    "edge": list(nv.edge),
                    "t": nv.t,
                }
                for nv in self.new_vertices
            ],
            "new_faces": [list(f) for f in self.new_faces],
        }


# ---------------------------------------------------------------------------
# path sampling

def sample_path(poses: Sequence[ScalpelSample], min_spacing: float = 0.0,
                min_dt: float = 0.0) -> list[ScalpelSample]:
    """Thin a pose stream, keeping samples spaced by distance or time.

    Keeps the first pose, then any pose at least min_spacing away in tip
    distance or min_dt later than the last kept one. The final pose is
    always kept so the tear reaches the stroke end, even when it lands
    closer than the thresholds.
    """
    if min_spacing <= 0.0 and min_dt <= 0.0:
        raise ParameterError("need min_spacing > 0 or min_dt > 0")
    poses = list(poses)
    if not poses:
        return []
    kept = [poses[0]]
    for pose in poses[1:]:
        last = kept[-1]
        far = min_spacing > 0.0 and norm(vsub(pose.tip, last.tip)) >= min_spacing
        late = min_dt > 0.0 and (pose.timestamp - last.timestamp) >= min_dt
        if far or late:
            kept.append(pose)
    if kept[-1] is not poses[-1]:
        kept.append(poses[-1])
    return kept


# ---------------------------------------------------------------------------
# cell construction

def _outward(plane_normal, anchor, interior_point) -> Plane:
    n = normalized(plane_normal)
    p = Plane(n, -dot(n, anchor))
    if p.signed(interior_point) > 0:
        p = p.flipped()
    return p


def build_cell(s0: ScalpelSample, s1: ScalpelSample, width: float,
               prev: Optional[TearCell] = None) -> TearCell:
    """Build the convex cell spanned by two consecutive blade poses.

    The mid plane is the least-squares plane of the four blade endpoints
    (exact when coplanar). With ``prev`` given, the start cap becomes the
    bisector plane of the two motion directions and ``prev``'s end cap is
    replaced in place by the same plane, so the two interiors share
    exactly that boundary. Only pass a ``prev`` that has not been applied
    to a mesh yet.

    Raises GeometryError for a degenerate blade quad. An anti-parallel
    joint (turn sharper than 179 degrees) falls back to a perpendicular
    start cap and flags the cell.
    """
    if width < 0:
        raise ParameterError("tear width must be >= 0")
    tip0, tail0 = np.array(s0.tip), np.array(s0.tail)
    tip1, tail1 = np.array(s1.tip), np.array(s1.tail)
    quad = np.array([tip0, tail0, tail1, tip1])

    area = 0.5 * (
        np.linalg.norm(np.cross(tail0 - tip0, tail1 - tip0))
        + np.linalg.norm(np.cross(tail1 - tip0, tip1 - tip0))
    )
    if area <= 1e-12:
        raise GeometryError("blade quad spans no area")

    motion = 0.5 * ((tip1 - tip0) + (tail1 - tail0))
    blade = 0.5 * ((tail0 - tip0) + (tail1 - tip1))
    ref = np.cross(motion, blade)
    if np.linalg.norm(ref) < 1e-12:
        raise GeometryError("blade motion is parallel to the blade")

    n, c = fit_plane(quad)
    if float(n @ ref) < 0:
        n = -n
    half = 0.5 * width

    gap_plus = Plane(n, -(float(n @ c) + half))
    gap_minus = Plane(-n, float(n @ c) - half)

    motion_unit = motion / np.linalg.norm(motion)
    blade_unit = blade / np.linalg.norm(blade)

    tip_edge = tip1 - tip0
    tip_mid = 0.5 * (tip0 + tip1)
    if np.linalg.norm(tip_edge) > 1e-12:
        cap_tip = _outward(cross(tip_edge, n), tip_mid, c)
    else:
        cap_tip = _outward(-blade_unit, tip_mid, c)
    tail_edge = tail1 - tail0
    tail_mid = 0.5 * (tail0 + tail1)
    if np.linalg.norm(tail_edge) > 1e-12:
        cap_tail = _outward(cross(tail_edge, n), tail_mid, c)
    else:
        cap_tail = _outward(blade_unit, tail_mid, c)

    start_anchor = 0.5 * (tip0 + tail0)
    end_anchor = 0.5 * (tip1 + tail1)
    joint_fallback = False
    if prev is None:
        cap_start = _outward(cross(tail0 - tip0, n), start_anchor, c)
    else:
        m_prev = prev.motion
        if float(m_prev @ motion_unit) <= BISECTOR_MIN_DOT:
            cap_start = _outward(cross(tail0 - tip0, n), start_anchor, c)
            joint_fallback = True
            log.warning("tear joint turns > 179 degrees; using perpendicular cap")
        else:
            h = normalized(m_prev + motion_unit)
            shared = Plane(h, -dot(h, start_anchor))
            cap_start = shared.flipped()
            prev.planes[5] = shared
            prev.refresh()
    cap_end = _outward(cross(tail1 - tip1, n), end_anchor, c)

    return TearCell(
        planes=[gap_plus, gap_minus, cap_tip, cap_tail, cap_start, cap_end],
        mid_normal=n,
        mid_point=c,
        width=width,
        motion=motion_unit,
        blade=blade_unit,
        start_anchor=start_anchor,
        end_anchor=end_anchor,
        joint_fallback=joint_fallback,
    )


# ---------------------------------------------------------------------------
# classification

def _clip_poly_inside(points, planes, eps) -> list:
    """Sutherland-Hodgman keep-inside pass used for exact intersection tests."""
    poly = list(points)
    for plane in planes:
        if not poly:
            return []
        out = []
        ds = [plane.signed(p) for p in poly]
        m = len(poly)
        for i in range(m):
            a, da = poly[i], ds[i]
            b, db = poly[(i + 1) % m], ds[(i + 1) % m]
            if da <= eps:
                out.append(a)
            if (da < -eps and db > eps) or (da > eps and db < -eps):
                out.append(vlerp(a, b, da / (da - db)))
        poly = out
    return poly


def classify_faces(mesh: Mesh, cell: TearCell,
                   candidates: Optional[Iterable[int]] = None):
    """Split faces into fully-interior and boundary-crossing sets.

    A face is inside when all three vertices are strictly interior;
    crossing when its triangle intersects the closed cell without being
    inside. Candidates default to the broad phase over the cell bounds;
    results do not depend on broad-phase tightness.
    """
    if candidates is None:
        candidates = faces_near(mesh, cell.aabb_min, cell.aabb_max)
    cands = list(candidates)
    inside: list[int] = []
    crossing: list[int] = []
    if not cands:
        return inside, crossing

    tri = mesh.positions[mesh.faces[cands]]          # (k, 3, 3)
    rows = cell._plane_rows
    d = np.einsum("kvj,pj->kvp", tri, rows[:, :3]) + rows[:, 3]

    inside_mask = d.max(axis=(1, 2)) < 0
    disjoint_mask = (d.min(axis=1) > 0).any(axis=1)
    any_interior = (d.max(axis=2) < 0).any(axis=1)

    eps = 1e-12 * max(1.0, mesh.diagonal)
    for i, fid in enumerate(cands):
        if inside_mask[i]:
            inside.append(fid)
        elif disjoint_mask[i]:
            continue
        elif any_interior[i]:
            crossing.append(fid)
        else:
            pts = [tuple(p) for p in tri[i]]
            if _clip_poly_inside(pts, cell.planes, eps):
                crossing.append(fid)
    return inside, crossing


# ---------------------------------------------------------------------------
# face clipping

class _ClipVertex:
    """Polygon vertex during clipping: position, attributes, provenance."""

    __slots__ = ("pos", "vid", "src_a", "src_b", "t", "normal", "uv", "skin")

    def __init__(self, pos, vid=None, src_a=None, src_b=None, t=0.0,
                 normal=None, uv=None, skin=None):
        self.pos = pos
        self.vid = vid
        self.src_a = src_a
        self.src_b = src_b
        self.t = t
        self.normal = normal
        self.uv = uv
        self.skin = skin


def _cut_vertex(a: _ClipVertex, b: _ClipVertex, da: float, db: float) -> _ClipVertex:
    # Canonical endpoint order makes both faces sharing an edge compute
    # bit-identical cut positions, which lets the delta share the vertex.
    if a.vid is not None and b.vid is not None and a.vid > b.vid:
        a, b, da, db = b, a, db, da
    t = da / (da - db)
    pos = vlerp(a.pos, b.pos, t)
    normal = None
    if a.normal is not None and b.normal is not None:
        nx = vlerp(a.normal, b.normal, t)
        ln = norm(nx)
        normal = (nx[0] / ln, nx[1] / ln, nx[2] / ln) if ln > 1e-12 else a.normal
    uv = None
    if a.uv is not None and b.uv is not None:
        u = 1.0 - t
        uv = (u * a.uv[0] + t * b.uv[0], u * a.uv[1] + t * b.uv[1])
    skin = None
    if a.skin is not None or b.skin is not None:
        skin = blend_weights(a.skin, b.skin, t)
    return _ClipVertex(pos, src_a=a, src_b=b, t=t, normal=normal, uv=uv, skin=skin)


def _split_piece(poly: list, plane: Plane, eps: float):
    """Split a convex polygon into (outside, inside) lists sharing on-plane
    vertices; cut vertices are appended to both sides."""
    ds = [plane.signed(v.pos) for v in poly]
    lo = min(ds)
    hi = max(ds)
    if hi <= eps:          # nothing outside: polygon continues untouched
        return [], poly
    if lo >= -eps:         # nothing inside: whole polygon is a kept piece
        return poly, []
    outside: list[_ClipVertex] = []
    inside: list[_ClipVertex] = []
    m = len(poly)
    for i in range(m):
        a, da = poly[i], ds[i]
        db = ds[(i + 1) % m]
        if da >= -eps:
            outside.append(a)
        if da <= eps:
            inside.append(a)
        if (da < -eps and db > eps) or (da > eps and db < -eps):
            v = _cut_vertex(a, poly[(i + 1) % m], da, db)
            outside.append(v)
            inside.append(v)
    return outside, inside


def _compact(poly: list) -> list:
    out = []
    for v in poly:
        if not out or v.pos != out[-1].pos:
            out.append(v)
    while len(out) > 1 and out[0].pos == out[-1].pos:
        out.pop()
    return out


@dataclass
class ClipPiece:
    """One kept convex polygon from a face clip, on a single side."""

    vertices: list
    side: int


def clip_face(mesh: Mesh, fid: int, cell: TearCell) -> list[ClipPiece]:
    """Clip one crossing triangle against the cell.

    Successive half-space passes in fixed plane order: at each plane the
    part outside is emitted as a kept piece and the part inside proceeds
    to the next plane; whatever survives all six planes lies in the gap
    and is discarded. Kept pieces that straddle the mid plane (possible
    beyond the blade/joint caps) are split along it so every piece lies
    on one side. Pieces below the sliver area tolerance are dropped; an
    empty result means the face is gone entirely.
    """
    diag = mesh.diagonal
    eps = 1e-12 * max(1.0, diag)
    sliver = SLIVER_AREA_REL * diag * diag

    positions = mesh.positions
    normals = mesh.normals
    uvs = mesh.uvs
    bones = mesh.skin_bones
    weights = mesh.skin_weights
    poly = []
    for vid in mesh.faces[fid]:
        vid = int(vid)
        p = positions[vid]
        normal = uv = skin = None
        if normals is not None:
            n = normals[vid]
            normal = (float(n[0]), float(n[1]), float(n[2]))
        if uvs is not None:
            u = uvs[vid]
            uv = (float(u[0]), float(u[1]))
        if bones is not None:
            pairs = tuple(
                (int(b), float(w)) for b, w in zip(bones[vid], weights[vid]) if b >= 0
            )
            skin = pairs or None
        poly.append(_ClipVertex((float(p[0]), float(p[1]), float(p[2])), vid=vid,
                                normal=normal, uv=uv, skin=skin))

    pieces: list[list[_ClipVertex]] = []
    current = poly
    for plane in cell.planes:
        outside, current = _split_piece(current, plane, eps)
        outside = _compact(outside)
        if len(outside) >= 3 and polygon_area([v.pos for v in outside]) >= sliver:
            pieces.append(outside)
        current = _compact(current)
        if len(current) < 3:
            break

    mid_plane = Plane(cell._mid_n, -dot(cell._mid_n, cell._mid_c))
    out: list[ClipPiece] = []
    for piece in pieces:
        ss = [mid_plane.signed(v.pos) for v in piece]
        if max(ss) > SIDE_TIE_EPS and min(ss) < -SIDE_TIE_EPS:
            plus, minus = _split_piece(piece, mid_plane, eps)
            halves = [_compact(plus), _compact(minus)]
        else:
            halves = [piece]
        for half in halves:
            if len(half) < 3:
                continue
            pts = [v.pos for v in half]
            if polygon_area(pts) < sliver:
                continue
            centroid = (
                sum(p[0] for p in pts) / len(pts),
                sum(p[1] for p in pts) / len(pts),
                sum(p[2] for p in pts) / len(pts),
            )
            side = SIDE_MINUS if mid_plane.signed(centroid) < -SIDE_TIE_EPS else SIDE_PLUS
            out.append(ClipPiece(half, side))
    return out


# ---------------------------------------------------------------------------
# segment application

def _piece_is_whole_triangle(pieces: list[ClipPiece]) -> bool:
    if len(pieces) != 1:
        return False
    verts = pieces[0].vertices
    return len(verts) == 3 and all(v.vid is not None for v in verts)


def build_tear_delta(mesh: Mesh, cell: TearCell, inside, crossing) -> TearDelta:
    """Assemble the delta: interior faces removed, crossing faces clipped
    and re-fanned. Pure; does not touch the mesh."""
    delta = TearDelta(cell=cell)
    delta.removed_faces.extend(sorted(inside))
    base = mesh.vertex_count
    registry: dict[tuple, int] = {}

    def materialize(cv: _ClipVertex) -> int:
        if cv.vid is not None:
            return cv.vid
        key = cv.pos
        known = registry.get(key)
        if known is not None:
            return known
        ea = materialize(cv.src_a)
        eb = materialize(cv.src_b)
        s = cell.signed_mid_one(cv.pos)
        side = SIDE_MINUS if s < -SIDE_TIE_EPS else SIDE_PLUS
        vid = base + len(delta.new_vertices)
        delta.new_vertices.append(NewVertex(
            vertex=Vertex(cv.pos, cv.normal, cv.uv, cv.skin),
            side=side,
            edge=(ea, eb),
            t=cv.t,
        ))
        registry[key] = vid
        return vid

    for fid in sorted(crossing):
        pieces = clip_face(mesh, fid, cell)
        if _piece_is_whole_triangle(pieces):
            continue
        delta.removed_faces.append(fid)
        for piece in pieces:
            ids = [materialize(v) for v in piece.vertices]
            for i in range(1, len(ids) - 1):
                tri = (ids[0], ids[i], ids[i + 1])
                if tri[0] != tri[1] and tri[1] != tri[2] and tri[0] != tri[2]:
                    delta.new_faces.append(tri)
    return delta


def plan_tear_segment(mesh: Mesh, cell: TearCell) -> TearDelta:
    inside, crossing = classify_faces(mesh, cell)
    return build_tear_delta(mesh, cell, inside, crossing)


def apply_tear_segment(mesh: Mesh, cell: TearCell) -> TearDelta:
    """Plan and apply one segment. After this no live face keeps any
    vertex or centroid strictly interior to the cell."""
    delta = plan_tear_segment(mesh, cell)
    apply_delta(mesh, delta)
    return delta


def build_cells(samples: Sequence[ScalpelSample], width: float) -> list[TearCell]:
    """Chain cells over already-sampled poses, aligning joint caps.

    All cells are built before any application, because chaining aligns
    each cell's end cap with its successor's bisector start cap. A
    segment whose cell construction fails is logged and skipped; the
    chain restarts with a perpendicular cap.
    """
    cells: list[TearCell] = []
    prev: Optional[TearCell] = None
    for i in range(len(samples) - 1):
        try:
            cell = build_cell(samples[i], samples[i + 1], width, prev=prev)
        except GeometryError as exc:
            log.warning("skipping tear segment %d: %s", i, exc)
            prev = None
            continue
        cells.append(cell)
        prev = cell
    return cells


def continuous_tear(mesh: Mesh, poses: Sequence[ScalpelSample], width: float,
                    spacing: float, min_dt: float = 0.0) -> list[TearDelta]:
    """Sample a stroke, chain cells along it, and apply them in order."""
    samples = sample_path(poses, spacing, min_dt)
    if len(samples) < 2:
        return []
    return [apply_tear_segment(mesh, cell) for cell in build_cells(samples, width)]
