"""Indexed triangle mesh with attributes, adjacency, ray casting and a
broad-phase index over face bounds.

The mesh is destructive-edit friendly: faces carry an alive flag and are
never compacted, so face ids stay stable across tears. All structural
side tables (edge map, vertex face counts, broad phase) are updated
incrementally by :func:`apply_delta`; nothing is rebuilt from scratch.

Single-writer contract: one owner mutates a mesh instance at a time.
``copy()`` produces an independent snapshot that may be read anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import StaleDeltaError, StructuralError, ValidationError

DEGENERATE_FACE_AREA = 1e-12
# Inflation applied to broad-phase query boxes, relative to the mesh diagonal.
QUERY_EPS_REL = 1e-6

MAX_SKIN_INFLUENCES = 4


@dataclass(frozen=True)
class Vertex:
    """Per-vertex attribute bundle (a read-only view into mesh arrays)."""

    position: tuple[float, float, float]
    normal: Optional[tuple[float, float, float]] = None
    uv: Optional[tuple[float, float]] = None
    skin: Optional[tuple[tuple[int, float], ...]] = None


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    max_t: float = math.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-9:
            raise ValidationError(f"ray direction must be unit length, |d| = {n}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    face: int
    t: float
    bary: tuple[float, float, float]
    point: np.ndarray


class UniformGrid:
    """Sparse uniform grid over face AABBs with O(1) insert/remove.

    Cell geometry is fixed at construction; indices are unbounded
    integers, so geometry outside the original bounds hashes fine.
    """

    def __init__(self, origin, cell_size):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.cell_size = np.asarray(cell_size, dtype=np.float64)
        self.cells: dict[tuple[int, int, int], set[int]] = {}
        self.ranges: dict[int, tuple[int, int, int, int, int, int]] = {}

    def _span(self, lo, hi):
        i0 = np.floor((lo - self.origin) / self.cell_size).astype(np.int64)
        i1 = np.floor((hi - self.origin) / self.cell_size).astype(np.int64)
        return (int(i0[0]), int(i0[1]), int(i0[2]), int(i1[0]), int(i1[1]), int(i1[2]))

    def insert(self, fid: int, lo, hi) -> None:
        span = self._span(lo, hi)
        self.ranges[fid] = span
        x0, y0, z0, x1, y1, z1 = span
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                for z in range(z0, z1 + 1):
                    self.cells.setdefault((x, y, z), set()).add(fid)

    def remove(self, fid: int) -> None:
        x0, y0, z0, x1, y1, z1 = self.ranges.pop(fid)
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                for z in range(z0, z1 + 1):
                    key = (x, y, z)
                    bucket = self.cells.get(key)
                    if bucket is not None:
                        bucket.discard(fid)
                        if not bucket:
                            del self.cells[key]

    def candidates(self, lo, hi) -> set[int]:
        x0, y0, z0, x1, y1, z1 = self._span(lo, hi)
        out: set[int] = set()
        for x in range(x0, x1 + 1):
            for y in range(y0, y1 + 1):
                for z in range(z0, z1 + 1):
                    bucket = self.cells.get((x, y, z))
                    if bucket:
                        out |= bucket
        return out

    def copy(self) -> "UniformGrid":
        g = UniformGrid(self.origin.copy(), self.cell_size.copy())
        g.cells = {k: set(v) for k, v in self.cells.items()}
        g.ranges = dict(self.ranges)
        return g


class Mesh:
    """Triangle mesh with per-vertex attributes and incremental side tables.

    Attributes are stored struct-of-arrays: ``positions`` (n, 3),
    optional ``normals`` (n, 3), ``uvs`` (n, 2) and skinning as
    ``skin_bones`` (n, 4) int32 / ``skin_weights`` (n, 4) with -1
    padding for unused influence slots. ``faces`` only ever grows;
    ``alive`` masks out removed faces.
    """

    def __init__(self, positions, faces, normals=None, uvs=None,
                 skin_bones=None, skin_weights=None):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.normals = None if normals is None else np.ascontiguousarray(normals, dtype=np.float64)
        self.uvs = None if uvs is None else np.ascontiguousarray(uvs, dtype=np.float64)
        self.skin_bones = None if skin_bones is None else np.ascontiguousarray(skin_bones, dtype=np.int32)
        self.skin_weights = None if skin_weights is None else np.ascontiguousarray(skin_weights, dtype=np.float64)
        self.alive = np.ones(len(self.faces), dtype=bool)

        self.aabb_min = self.positions.min(axis=0)
        self.aabb_max = self.positions.max(axis=0)
        self._diag = None

        self.face_aabbs = np.empty((len(self.faces), 6))
        self._refresh_face_aabbs(np.arange(len(self.faces)))

        self.vertex_face_count = np.zeros(len(self.positions), dtype=np.int32)
        np.add.at(self.vertex_face_count, self.faces.ravel(), 1)

        self.edge_map: dict[tuple[int, int], list[int]] = {}
        for fid in range(len(self.faces)):
            self._link_edges(fid)

        self.grid = self._build_grid()

    # -- construction helpers ------------------------------------------------

    def _refresh_face_aabbs(self, fids) -> None:
        tri = self.positions[self.faces[fids]]
        self.face_aabbs[fids, :3] = tri.min(axis=1)
        self.face_aabbs[fids, 3:] = tri.max(axis=1)

    def _link_edges(self, fid: int) -> None:
        a, b, c = self.faces[fid]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            self.edge_map.setdefault(key, []).append(fid)

    def _unlink_edges(self, fid: int) -> None:
        a, b, c = self.faces[fid]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            bucket = self.edge_map.get(key)
            if bucket is not None:
                bucket.remove(fid)
                if not bucket:
                    del self.edge_map[key]

    def _build_grid(self) -> UniformGrid:
        extent = self.aabb_max - self.aabb_min
        nfaces = max(1, len(self.faces))
        res = min(64, max(1, int(round(nfaces ** (1.0 / 3.0) * 1.5))))
        cell = np.where(extent > 0, extent / res, 1.0)
        grid = UniformGrid(self.aabb_min, cell)
        for fid in range(len(self.faces)):
            if self.alive[fid]:
                grid.insert(fid, self.face_aabbs[fid, :3], self.face_aabbs[fid, 3:])
        return grid

    # -- basic queries -------------------------------------------------------

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    @property
    def live_face_count(self) -> int:
        return int(self.alive.sum())

    def live_faces(self) -> np.ndarray:
        return np.nonzero(self.alive)[0]

    @property
    def diagonal(self) -> float:
        if self._diag is None:
            self._diag = float(np.linalg.norm(self.aabb_max - self.aabb_min))
        return self._diag

    def neighbors(self, fid: int) -> list[int]:
        """Live faces sharing an edge with fid (non-manifold tolerant)."""
        a, b, c = self.faces[fid]
        out: list[int] = []
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            for other in self.edge_map.get(key, ()):
                if other != fid and other not in out:
                    out.append(other)
        return out

    def vertex(self, vid: int) -> Vertex:
        normal = uv = skin = None
        if self.normals is not None:
            normal = tuple(float(x) for x in self.normals[vid])
        if self.uvs is not None:
            uv = tuple(float(x) for x in self.uvs[vid])
        if self.skin_bones is not None:
            pairs = [
                (int(b), float(w))
                for b, w in zip(self.skin_bones[vid], self.skin_weights[vid])
                if b >= 0
            ]
            skin = tuple(pairs) if pairs else None
        return Vertex(tuple(float(x) for x in self.positions[vid]), normal, uv, skin)

    def face_area(self, fid: int) -> float:
        a, b, c = self.positions[self.faces[fid]]
        return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))

    def copy(self) -> "Mesh":
        m = Mesh.__new__(Mesh)
        m.positions = self.positions.copy()
        m.faces = self.faces.copy()
        m.normals = None if self.normals is None else self.normals.copy()
        m.uvs = None if self.uvs is None else self.uvs.copy()
        m.skin_bones = None if self.skin_bones is None else self.skin_bones.copy()
        m.skin_weights = None if self.skin_weights is None else self.skin_weights.copy()
        m.alive = self.alive.copy()
        m.aabb_min = self.aabb_min.copy()
        m.aabb_max = self.aabb_max.copy()
        m._diag = self._diag
        m.face_aabbs = self.face_aabbs.copy()
        m.vertex_face_count = self.vertex_face_count.copy()
        m.edge_map = {k: list(v) for k, v in self.edge_map.items()}
        m.grid = self.grid.copy()
        return m


def build_mesh(positions, faces, normals=None, uvs=None, skin=None,
               strict: bool = True) -> Mesh:
    """Validate input arrays and assemble a queryable mesh.

    Parameters
    ----------
    positions : (n, 3) float array
    faces : (m, 3) int array of vertex index triples
    normals : optional (n, 3) unit vectors
    uvs : optional (n, 2) texture coordinates
    skin : optional sequence of per-vertex influence lists
        Each entry is a list of (bone id, weight) pairs, at most 4,
        weights summing to 1 within 1e-6, or None/empty for unskinned.
    strict : bool
        Degenerate faces (area < 1e-12) raise in strict mode and are
        silently dropped otherwise.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) == 0:
        raise StructuralError("positions must be a non-empty (n, 3) array")
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        faces = faces.reshape(0, 3)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise StructuralError("faces must be an (m, 3) index array")

    n = len(positions)
    if faces.size and (faces.min() < 0 or faces.max() >= n):
        bad = int(np.nonzero((faces < 0) | (faces >= n))[0][0] // 1)
        raise StructuralError(f"face references vertex index out of range (first bad row {bad})")
    repeated = (
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )
    if repeated.any():
        raise StructuralError(
            f"face {int(np.nonzero(repeated)[0][0])} references the same vertex twice"
        )

    if faces.size:
        tri = positions[faces]
        areas = 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
        )
        degenerate = areas < DEGENERATE_FACE_AREA
        if degenerate.any():
            if strict:
                raise ValidationError(
                    f"{int(degenerate.sum())} degenerate face(s), first at row "
                    f"{int(np.nonzero(degenerate)[0][0])}"
                )
            faces = faces[~degenerate]

    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        if len(normals) != n:
            raise StructuralError("normals length does not match positions")
        bad = np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-4
        if bad.any():
            raise ValidationError(f"normal {int(np.nonzero(bad)[0][0])} is not unit length")
    if uvs is not None:
        uvs = np.asarray(uvs, dtype=np.float64)
        if len(uvs) != n:
            raise StructuralError("uvs length does not match positions")

    skin_bones = skin_weights = None
    if skin is not None:
        if len(skin) != n:
            raise StructuralError("skin length does not match positions")
        skin_bones = np.full((n, MAX_SKIN_INFLUENCES), -1, dtype=np.int32)
        skin_weights = np.zeros((n, MAX_SKIN_INFLUENCES))
        any_skin = False
        for i, influences in enumerate(skin):
            if not influences:
                continue
            if len(influences) > MAX_SKIN_INFLUENCES:
                raise ValidationError(f"vertex {i} has more than {MAX_SKIN_INFLUENCES} influences")
            total = sum(w for _, w in influences)
            if abs(total - 1.0) > 1e-6:
                raise ValidationError(f"vertex {i} skin weights sum to {total}")
            for j, (b, w) in enumerate(influences):
                skin_bones[i, j] = b
                skin_weights[i, j] = w
            any_skin = True
        if not any_skin:
            skin_bones = skin_weights = None

    return Mesh(positions, faces, normals=normals, uvs=uvs,
                skin_bones=skin_bones, skin_weights=skin_weights)


def raycast(mesh: Mesh, ray: Ray) -> Optional[Hit]:
    """Nearest ray/triangle intersection over live faces.

    Returns the hit with the smallest t in (0, max_t]; exact ties on t
    resolve to the lowest face id. None on a miss.
    """
    fids = mesh.live_faces()
    if len(fids) == 0:
        return None
    tri = mesh.positions[mesh.faces[fids]]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    d = ray.direction
    pvec = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = ray.origin - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("j,ij->i", d, qvec) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
    ok = (
        (np.abs(det) > 1e-12)
        & (u >= 0.0)
        & (v >= 0.0)
        & (u + v <= 1.0)
        & (t > 0.0)
        & (t <= ray.max_t)
    )
    if not ok.any():
        return None
    idx = np.nonzero(ok)[0]
    order = np.lexsort((fids[idx], t[idx]))
    best = idx[order[0]]
    tb = float(t[best])
    ub, vb = float(u[best]), float(v[best])
    return Hit(
        face=int(fids[best]),
        t=tb,
        bary=(1.0 - ub - vb, ub, vb),
        point=ray.origin + tb * ray.direction,
    )


def faces_near(mesh: Mesh, box_min, box_max) -> list[int]:
    """Live faces whose bounds intersect the query box.

    Superset-exact: every face whose true AABB touches the box is
    returned, and nothing outside the box inflated by
    1e-6 x mesh diagonal. Output is sorted for determinism.
    """
    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    if np.any(box_min > box_max):
        raise ValidationError("query box has min > max")
    eps = QUERY_EPS_REL * mesh.diagonal
    # candidates come from the inflated box; the final filter is exact,
    # well inside the allowed epsilon slack
    lo = tuple(box_min)
    hi = tuple(box_max)
    out = []
    for fid in mesh.grid.candidates(box_min - eps, box_max + eps):
        fb = mesh.face_aabbs[fid]
        if (
            fb[0] <= hi[0] and lo[0] <= fb[3]
            and fb[1] <= hi[1] and lo[1] <= fb[4]
            and fb[2] <= hi[2] and lo[2] <= fb[5]
        ):
            out.append(fid)
    out.sort()
    return out


def apply_delta(mesh: Mesh, delta) -> Mesh:
    """Apply a tear delta in place: drop removed faces, append new
    vertices and faces, and update all side tables incrementally.

    Pre-existing surviving vertices are never touched. Raises
    StaleDeltaError when the delta names a face that is already dead.
    """
    for fid in delta.removed_faces:
        if fid < 0 or fid >= len(mesh.faces) or not mesh.alive[fid]:
            raise StaleDeltaError(f"delta removes face {fid} which is not alive")

    n_old = mesh.vertex_count
    n_new = len(delta.new_vertices)
    for tri in delta.new_faces:
        for vid in tri:
            if vid < 0 or vid >= n_old + n_new:
                raise StructuralError(f"new face references unknown vertex {vid}")

    for fid in delta.removed_faces:
        mesh.alive[fid] = False
        mesh._unlink_edges(fid)
        mesh.grid.remove(fid)
        mesh.vertex_face_count[mesh.faces[fid]] -= 1

    if n_new:
        pos = np.array([nv.vertex.position for nv in delta.new_vertices])
        mesh.positions = np.vstack([mesh.positions, pos])
        if mesh.normals is not None:
            rows = np.array([
                nv.vertex.normal if nv.vertex.normal is not None else (0.0, 0.0, 1.0)
                for nv in delta.new_vertices
            ])
            mesh.normals = np.vstack([mesh.normals, rows])
        if mesh.uvs is not None:
            rows = np.array([
                nv.vertex.uv if nv.vertex.uv is not None else (0.0, 0.0)
                for nv in delta.new_vertices
            ])
            mesh.uvs = np.vstack([mesh.uvs, rows])
        if mesh.skin_bones is not None:
            bones = np.full((n_new, MAX_SKIN_INFLUENCES), -1, dtype=np.int32)
            weights = np.zeros((n_new, MAX_SKIN_INFLUENCES))
            for i, nv in enumerate(delta.new_vertices):
                if nv.vertex.skin:
                    for j, (b, w) in enumerate(nv.vertex.skin):
                        bones[i, j] = b
                        weights[i, j] = w
            mesh.skin_bones = np.vstack([mesh.skin_bones, bones])
            mesh.skin_weights = np.vstack([mesh.skin_weights, weights])
        mesh.vertex_face_count = np.concatenate(
            [mesh.vertex_face_count, np.zeros(n_new, dtype=np.int32)]
        )
        mesh.aabb_min = np.minimum(mesh.aabb_min, pos.min(axis=0))
        mesh.aabb_max = np.maximum(mesh.aabb_max, pos.max(axis=0))
        mesh._diag = None

    if delta.new_faces:
        first = len(mesh.faces)
        rows = np.array(delta.new_faces, dtype=np.int64)
        mesh.faces = np.vstack([mesh.faces, rows])
        mesh.alive = np.concatenate([mesh.alive, np.ones(len(rows), dtype=bool)])
        mesh.face_aabbs = np.vstack([mesh.face_aabbs, np.empty((len(rows), 6))])
        new_ids = np.arange(first, first + len(rows))
        mesh._refresh_face_aabbs(new_ids)
        for fid in new_ids:
            mesh._link_edges(int(fid))
            mesh.grid.insert(int(fid), mesh.face_aabbs[fid, :3], mesh.face_aabbs[fid, 3:])
        np.add.at(mesh.vertex_face_count, rows.ravel(), 1)

    return mesh
