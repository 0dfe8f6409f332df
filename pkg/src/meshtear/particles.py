"""Soft-body particle layer: range-d vertex clustering, elastic restoring
dynamics, vertex displacement mapping, and post-tear cluster repair.

Particles cluster vertices by euclidean range d around greedy seeds in
vertex-index order (deterministic). Vertices may belong to several
particles; displacements blend back uniformly (or inverse-distance,
behind a config flag). All positions here are bind-space: the mesh's
stored positions never move, dynamics live entirely in the particles,
and posing composes at application time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CoverageError,
    ParameterError,
    ParticleLookupError,
    StaleDeltaError,
)
from .mesh import Mesh
from .skinning import Skeleton, pose_positions
from .tear import SIDE_MINUS, SIDE_PLUS, SIDE_TIE_EPS, TearDelta


@dataclass
class SimParams:
    stiffness: float = 60.0      # k, 1/s^2
    damping: float = 6.0         # c, 1/s
    timestep: float = 1.0 / 90.0 # h, s (VR frame)
    weighting: str = "uniform"   # or "inverse_distance"

    def validate(self) -> "SimParams":
        if self.stiffness <= 0:
            raise ParameterError("stiffness must be > 0")
        if self.damping < 0:
            raise ParameterError("damping must be >= 0")
        if self.timestep <= 0:
            raise ParameterError("timestep must be > 0")
        if self.weighting not in ("uniform", "inverse_distance"):
            raise ParameterError(f"unknown weighting {self.weighting!r}")
        return self


@dataclass
class Particle:
    id: int
    members: set[int]
    seed: int
    rest_position: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    side: Optional[int] = None

    @property
    def offset(self) -> np.ndarray:
        return self.position - self.rest_position


class SoftBodyState:
    """Particles plus the inverse vertex->particles map and sim params."""

    def __init__(self, params: SimParams):
        self.params = params.validate()
        self.particles: dict[int, Particle] = {}
        self.vertex_memberships: dict[int, list[int]] = {}
        self.vertex_sides: dict[int, int] = {}
        self._next_id = 0
        self._tree: Optional[cKDTree] = None
        self._tree_count = 0
        self._csr = None

    # -- bookkeeping ---------------------------------------------------------

    def _new_particle(self, members, seed, bind, side=None,
                      offset=None, velocity=None) -> Particle:
        rest = bind[sorted(members)].mean(axis=0)
        p = Particle(
            id=self._next_id,
            members=set(members),
            seed=seed,
            rest_position=rest,
            position=rest + (offset if offset is not None else 0.0),
            velocity=(velocity.copy() if velocity is not None else np.zeros(3)),
            side=side,
        )
        self._next_id += 1
        self.particles[p.id] = p
        for v in p.members:
            self.vertex_memberships.setdefault(v, []).append(p.id)
        self._csr = None
        return p

    def _drop_particle(self, pid: int) -> None:
        p = self.particles.pop(pid)
        for v in p.members:
            ms = self.vertex_memberships.get(v)
            if ms is not None:
                ms.remove(pid)
                if not ms:
                    del self.vertex_memberships[v]
        self._csr = None

    def _detach_vertex(self, vid: int) -> list[int]:
        """Remove a vertex from every particle; returns the touched pids."""
        touched = self.vertex_memberships.pop(vid, [])
        for pid in touched:
            self.particles[pid].members.discard(vid)
        self.vertex_sides.pop(vid, None)
        self._csr = None
        return touched

    def _attach_vertex(self, vid: int, pid: int) -> None:
        p = self.particles[pid]
        if vid not in p.members:
            p.members.add(vid)
            self.vertex_memberships.setdefault(vid, []).append(pid)
            self._csr = None

    def _recenter(self, pid: int, bind: np.ndarray) -> None:
        """Recompute rest centroid, carrying the dynamic offset across."""
        p = self.particles[pid]
        off = p.offset
        p.rest_position = bind[sorted(p.members)].mean(axis=0)
        p.position = p.rest_position + off
        self._csr = None

    def _neighbors_within(self, point: np.ndarray, d: float,
                          bind: np.ndarray) -> list[int]:
        """Vertex ids within range d of a point (KD-tree + appended tail)."""
        out = list(self._tree.query_ball_point(point, d)) if self._tree else []
        if len(bind) > self._tree_count:
            tail = bind[self._tree_count:]
            close = np.nonzero(
                np.einsum("ij,ij->i", tail - point, tail - point) <= d * d
            )[0]
            out.extend(int(i) + self._tree_count for i in close)
        out.sort()
        return out

    def total_energy(self) -> float:
        k = self.params.stiffness
        e = 0.0
        for pid in sorted(self.particles):
            p = self.particles[pid]
            e += 0.5 * float(p.velocity @ p.velocity)
            off = p.offset
            e += 0.5 * k * float(off @ off)
        return e


def decompose(mesh: Mesh, d: float, params: Optional[SimParams] = None) -> SoftBodyState:
    """Greedy range-d covering of the mesh vertices into particles.

    Scans vertices in index order; every not-yet-covered vertex seeds a
    particle holding all vertices (covered or not) within distance d of
    it, until every vertex is covered. Deterministic for a given mesh
    and d.
    """
    if d <= 0:
        raise ParameterError("clustering range d must be > 0")
    state = SoftBodyState(params or SimParams())
    bind = mesh.positions
    state._tree = cKDTree(bind)
    state._tree_count = len(bind)
    covered = np.zeros(len(bind), dtype=bool)
    for vid in range(len(bind)):
        if covered[vid]:
            continue
        members = state._tree.query_ball_point(bind[vid], d)
        members.sort()
        state._new_particle(members, seed=vid, bind=bind)
        covered[members] = True
    return state


def displace_particle(state: SoftBodyState, pid: int, dx) -> SoftBodyState:
    """Push one particle; vertices follow at the next position application."""
    p = state.particles.get(pid)
    if p is None:
        raise ParticleLookupError(f"no particle {pid}")
    dx = np.asarray(dx, dtype=np.float64)
    if not np.isfinite(dx).all():
        raise ParameterError("displacement must be finite")
    p.position = p.position + dx
    return state


def step(state: SoftBodyState, h: Optional[float] = None) -> SoftBodyState:
    """One semi-implicit integration step toward each rest position:
    v += h*k*(rest - pos) - h*c*v, then pos += h*v."""
    h = state.params.timestep if h is None else h
    k = state.params.stiffness
    c = state.params.damping
    for pid in sorted(state.particles):
        p = state.particles[pid]
        p.velocity = p.velocity + h * k * (p.rest_position - p.position) - h * c * p.velocity
        p.position = p.position + h * p.velocity
    return state


def _membership_csr(state: SoftBodyState, n_vertices: int):
    if state._csr is not None and state._csr[0] == n_vertices:
        return state._csr
    pid_row = {pid: i for i, pid in enumerate(sorted(state.particles))}
    counts = np.zeros(n_vertices, dtype=np.int64)
    flat: list[int] = []
    indptr = np.zeros(n_vertices + 1, dtype=np.int64)
    for vid in range(n_vertices):
        for pid in state.vertex_memberships.get(vid, ()):
            flat.append(pid_row[pid])
        counts[vid] = len(state.vertex_memberships.get(vid, ()))
    np.cumsum(counts, out=indptr[1:])
    state._csr = (n_vertices, indptr, np.array(flat, dtype=np.int64), pid_row)
    return state._csr


def apply_vertex_positions(state: SoftBodyState, mesh: Mesh,
                           skeleton: Optional[Skeleton] = None) -> np.ndarray:
    """Vertex positions = base (bind or posed) + blended particle offsets.

    Each vertex averages the offsets of all particles containing it
    (uniform weights by default). A live vertex with no membership is a
    coverage error; dead vertices pass through at base.
    """
    base = pose_positions(mesh, skeleton) if skeleton is not None else mesh.positions.copy()
    n = mesh.vertex_count
    uncovered = [
        v for v in range(n)
        if mesh.vertex_face_count[v] > 0 and v not in state.vertex_memberships
    ]
    if uncovered:
        raise CoverageError(f"live vertex {uncovered[0]} has no particle membership")

    _, indptr, rows, pid_row = _membership_csr(state, n)
    if len(rows) == 0:
        return base
    offsets = np.zeros((len(pid_row), 3))
    for pid, i in pid_row.items():
        offsets[i] = state.particles[pid].offset

    counts = np.diff(indptr)
    covered = counts > 0
    if state.params.weighting == "uniform":
        sums = np.add.reduceat(
            offsets[rows], indptr[:-1][covered]
        ) if covered.any() else np.zeros((0, 3))
        base[covered] += sums / counts[covered, None]
    else:
        seeds = np.array([
            mesh.positions[state.particles[pid].seed] for pid in sorted(state.particles)
        ])
        for vid in np.nonzero(covered)[0]:
            rr = rows[indptr[vid]:indptr[vid + 1]]
            dist = np.linalg.norm(seeds[rr] - mesh.positions[vid], axis=1)
            wts = 1.0 / np.maximum(dist, 1e-9)
            wts /= wts.sum()
            base[vid] += wts @ offsets[rr]
    return base


def _greedy_subcover(state: SoftBodyState, vids: list[int], d: float,
                     bind: np.ndarray, side, offset, velocity) -> None:
    """Re-cover a vertex subset with radius-d particles (post-split repair)."""
    vids = sorted(vids)
    pts = bind[vids]
    remaining = np.ones(len(vids), dtype=bool)
    while remaining.any():
        i = int(np.nonzero(remaining)[0][0])
        dd = np.einsum("ij,ij->i", pts - pts[i], pts - pts[i])
        sel = dd <= d * d
        members = [vids[j] for j in np.nonzero(sel)[0]]
        state._new_particle(members, seed=vids[i], bind=bind, side=side,
                            offset=offset, velocity=velocity)
        remaining &= ~sel


def update_after_tear(state: SoftBodyState, delta: TearDelta, mesh_after: Mesh,
                      d: float) -> SoftBodyState:
    """Repair the clustering map after a tear delta has been applied.

    Dead vertices leave their particles; new rim vertices join every
    particle with a compatible side whose seed is in range, or seed new
    same-side particles; particles left holding both sides are split per
    side (re-covered to keep the seed-radius invariant); pre-existing
    vertices of affected particles get their side from the cell's mid
    plane, lazily.
    """
    if delta.empty:
        return state
    if delta.cell is None:
        raise StaleDeltaError("delta carries no cell; cannot repair sides")
    bind = mesh_after.positions
    n_new = len(delta.new_vertices)
    base = mesh_after.vertex_count - n_new
    for fid in delta.removed_faces:
        if fid >= len(mesh_after.alive) or mesh_after.alive[fid]:
            raise StaleDeltaError("delta was not applied to this mesh")
    for i, nv in enumerate(delta.new_vertices):
        if tuple(bind[base + i]) != nv.vertex.position:
            raise StaleDeltaError("delta vertices do not match the mesh")

    cell = delta.cell
    mid_s = (bind - cell.mid_point) @ cell.mid_normal

    # Labels are relative to this cell's mid plane. Probes are ephemeral;
    # a label becomes durable only for rim vertices and for members of
    # particles that actually split, so labels from earlier segments of a
    # turning path never falsely "mix" inside untouched particles.
    def probe_side(vid: int) -> int:
        s = state.vertex_sides.get(vid)
        if s is None:
            s = SIDE_MINUS if mid_s[vid] < -SIDE_TIE_EPS else SIDE_PLUS
        return s

    affected: set[int] = set()

    # 1. drop vertices that lost their last face
    dead_candidates = set(
        int(v) for fid in delta.removed_faces for v in mesh_after.faces[fid]
    )
    for vid in sorted(dead_candidates):
        if mesh_after.vertex_face_count[vid] == 0:
            affected.update(state._detach_vertex(vid))
    for pid in sorted(affected):
        if pid in state.particles and not state.particles[pid].members:
            state._drop_particle(pid)
    affected = {pid for pid in affected if pid in state.particles}
    for pid in sorted(affected):
        state._recenter(pid, bind)

    # 2. attach new rim vertices; seed particles for the uncovered ones
    pids = sorted(state.particles)
    seed_pos = np.array([bind[state.particles[pid].seed] for pid in pids]) \
        if pids else np.zeros((0, 3))
    for i, nv in enumerate(delta.new_vertices):
        vid = base + i
        if mesh_after.vertex_face_count[vid] == 0:
            continue  # sliver-orphaned helper vertex, not live
        state.vertex_sides[vid] = nv.side
        # a particle seeded earlier in this pass may already cover vid
        joined = vid in state.vertex_memberships
        if len(pids):
            dd = np.einsum("ij,ij->i", seed_pos - bind[vid], seed_pos - bind[vid])
            for j in np.nonzero(dd <= d * d)[0]:
                pid = pids[j]
                p = state.particles.get(pid)
                if p is None:
                    continue
                if p.side is not None and p.side != nv.side:
                    continue
                state._attach_vertex(vid, pid)
                affected.add(pid)
                joined = True
        if not joined:
            members = [
                v for v in state._neighbors_within(bind[vid], d, bind)
                if (mesh_after.vertex_face_count[v] > 0 or v == vid)
                and probe_side(v) == nv.side
            ]
            p = state._new_particle(members, seed=vid, bind=bind, side=nv.side)
            affected.add(p.id)

    for pid in sorted(affected):
        if pid in state.particles:
            state._recenter(pid, bind)

    # 3 + 4. split particles whose members sit on both sides; labels become
    # durable on split, which can cascade into particles sharing a vertex
    worklist = set(affected)
    seen: set[int] = set()
    while worklist:
        pid = min(worklist)
        worklist.discard(pid)
        seen.add(pid)
        p = state.particles.get(pid)
        if p is None:
            continue
        sides = {probe_side(v) for v in p.members}
        if len(sides) <= 1:
            if p.side is None and sides:
                p.side = next(iter(sides))
            continue
        newly_labeled = [v for v in p.members if v not in state.vertex_sides]
        for v in p.members:
            state.vertex_sides[v] = probe_side(v)
        plus = [v for v in p.members if state.vertex_sides[v] == SIDE_PLUS]
        minus = [v for v in p.members if state.vertex_sides[v] == SIDE_MINUS]
        off, vel = p.offset, p.velocity
        state._drop_particle(pid)
        _greedy_subcover(state, plus, d, bind, SIDE_PLUS, off, vel)
        _greedy_subcover(state, minus, d, bind, SIDE_MINUS, off, vel)
        for v in newly_labeled:
            for qid in state.vertex_memberships.get(v, ()):
                if qid not in seen:
                    worklist.add(qid)
    return state


def audit(state: SoftBodyState, mesh: Mesh, d: float) -> None:
    """Full invariant cross-check; raises on the first violation.

    Verifies coverage of live vertices, the seed-radius bound, exact
    inverse-map consistency, and side separation. Intended for tests and
    debugging, not the hot path.
    """
    for vid in range(mesh.vertex_count):
        if mesh.vertex_face_count[vid] > 0 and vid not in state.vertex_memberships:
            raise CoverageError(f"live vertex {vid} uncovered")
    bind = mesh.positions
    for pid, p in state.particles.items():
        if not p.members:
            raise CoverageError(f"particle {pid} is empty")
        seed_pos = bind[p.seed]
        for v in p.members:
            if np.linalg.norm(bind[v] - seed_pos) > d + 1e-9:
                raise CoverageError(f"particle {pid}: vertex {v} outside seed radius")
        rest = bind[sorted(p.members)].mean(axis=0)
        if np.abs(rest - p.rest_position).max() > 1e-9:
            raise CoverageError(f"particle {pid}: stale rest centroid")
        sides = {state.vertex_sides[v] for v in p.members if v in state.vertex_sides}
        if SIDE_PLUS in sides and SIDE_MINUS in sides:
            raise CoverageError(f"particle {pid} mixes both tear sides")
    for vid, pids in state.vertex_memberships.items():
        if len(set(pids)) != len(pids):
            raise CoverageError(f"vertex {vid} lists a particle twice")
        for pid in pids:
            if vid not in state.particles[pid].members:
                raise CoverageError(f"membership map out of sync at vertex {vid}")
