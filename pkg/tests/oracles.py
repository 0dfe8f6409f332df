"""Independent brute-force oracles the tests check the fast paths against.

Everything here is deliberately written from scratch (scalar loops,
no shared helpers from the package internals) so a bug in the library
cannot hide in its own test reference.
"""

from __future__ import annotations

import math

import numpy as np


def moller_trumbore(origin, direction, a, b, c):
    """Scalar ray/triangle test; returns (t, u, v) or None."""
    e1 = [b[i] - a[i] for i in range(3)]
    e2 = [c[i] - a[i] for i in range(3)]
    p = [
        direction[1] * e2[2] - direction[2] * e2[1],
        direction[2] * e2[0] - direction[0] * e2[2],
        direction[0] * e2[1] - direction[1] * e2[0],
    ]
    det = e1[0] * p[0] + e1[1] * p[1] + e1[2] * p[2]
    if abs(det) <= 1e-12:
        return None
    inv = 1.0 / det
    tv = [origin[i] - a[i] for i in range(3)]
    u = (tv[0] * p[0] + tv[1] * p[1] + tv[2] * p[2]) * inv
    q = [
        tv[1] * e1[2] - tv[2] * e1[1],
        tv[2] * e1[0] - tv[0] * e1[2],
        tv[0] * e1[1] - tv[1] * e1[0],
    ]
    v = (direction[0] * q[0] + direction[1] * q[1] + direction[2] * q[2]) * inv
    t = (e2[0] * q[0] + e2[1] * q[1] + e2[2] * q[2]) * inv
    if u < 0.0 or v < 0.0 or u + v > 1.0:
        return None
    return t, u, v


def brute_raycast(mesh, origin, direction, max_t=math.inf):
    """All-faces scan; smallest t in (0, max_t], ties to lowest face id."""
    best = None
    for fid in range(len(mesh.faces)):
        if not mesh.alive[fid]:
            continue
        a, b, c = (mesh.positions[int(v)] for v in mesh.faces[fid])
        hit = moller_trumbore(origin, direction, a, b, c)
        if hit is None:
            continue
        t = hit[0]
        if t <= 0.0 or t > max_t:
            continue
        if best is None or (t, fid) < best:
            best = (t, fid)
    return None if best is None else (best[1], best[0])


def brute_box_overlap(mesh, lo, hi):
    """O(n) AABB overlap scan over live faces, bounds recomputed fresh."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = []
    for fid in range(len(mesh.faces)):
        if not mesh.alive[fid]:
            continue
        tri = mesh.positions[mesh.faces[fid]]
        fmin = tri.min(axis=0)
        fmax = tri.max(axis=0)
        if (fmin <= hi).all() and (lo <= fmax).all():
            out.append(fid)
    return out


def clip_polygon_inside(points, planes, eps):
    """Keep-inside Sutherland-Hodgman over (normal, d) plane tuples."""
    poly = [tuple(p) for p in points]
    for nx, ny, nz, d in planes:
        if not poly:
            return []
        dist = [nx * p[0] + ny * p[1] + nz * p[2] + d for p in poly]
        nxt = []
        m = len(poly)
        for i in range(m):
            a, da = poly[i], dist[i]
            b, db = poly[(i + 1) % m], dist[(i + 1) % m]
            if da <= eps:
                nxt.append(a)
            if (da < -eps and db > eps) or (da > eps and db < -eps):
                t = da / (da - db)
                nxt.append(tuple(a[k] + t * (b[k] - a[k]) for k in range(3)))
        poly = nxt
    return poly


def cell_plane_tuples(cell):
    return [(p.nx, p.ny, p.nz, p.d) for p in cell.planes]


def brute_classify(mesh, cell):
    """Per-face exact inside/crossing decision over every live face."""
    planes = cell_plane_tuples(cell)
    eps = 1e-12 * max(1.0, float(np.linalg.norm(mesh.aabb_max - mesh.aabb_min)))
    inside, crossing = [], []
    for fid in range(len(mesh.faces)):
        if not mesh.alive[fid]:
            continue
        tri = [tuple(mesh.positions[int(v)]) for v in mesh.faces[fid]]
        dists = [
            [nx * p[0] + ny * p[1] + nz * p[2] + d for (nx, ny, nz, d) in planes]
            for p in tri
        ]
        if all(max(row) < 0 for row in dists):
            inside.append(fid)
            continue
        if clip_polygon_inside(tri, planes, eps):
            crossing.append(fid)
    return inside, crossing


def polygon_area(points):
    pts = [np.asarray(p, dtype=float) for p in points]
    if len(pts) < 3:
        return 0.0
    total = np.zeros(3)
    for i in range(1, len(pts) - 1):
        total += np.cross(pts[i] - pts[0], pts[i + 1] - pts[0])
    return 0.5 * float(np.linalg.norm(total))


def live_area(mesh):
    total = 0.0
    for fid in mesh.live_faces():
        tri = mesh.positions[mesh.faces[fid]]
        total += 0.5 * float(np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])))
    return total


def sample_on_faces(mesh, n, rng):
    """n points uniform by area over the live faces, plus their face ids."""
    fids = mesh.live_faces()
    tri = mesh.positions[mesh.faces[fids]]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
    )
    pick = rng.choice(len(fids), size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    t = tri[pick]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
    return pts, fids[pick]


def mc_overlap_area(mesh, cell, n, rng):
    """Monte-Carlo estimate of live surface area strictly inside the cell."""
    pts, _ = sample_on_faces(mesh, n, rng)
    inside = cell.contains(pts)
    return live_area(mesh) * float(inside.sum()) / n


def scalar_damped_trace(k, c, h, x0, v0, steps):
    """Reference semi-implicit update on a 1-D oscillator."""
    xs, vs = [x0], [v0]
    x, v = x0, v0
    for _ in range(steps):
        v = v + h * k * (0.0 - x) - h * c * v
        x = x + h * v
        xs.append(x)
        vs.append(v)
    return xs, vs
