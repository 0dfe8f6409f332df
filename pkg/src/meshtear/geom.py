"""Small geometric primitives shared by the mesh and tear kernels.

The clipping hot path works on plain float tuples: for 3-vectors that is
measurably faster than numpy, which only wins once arrays hold many
elements. Batch operations (signed distances for whole vertex blocks)
go through numpy instead.
"""

from __future__ import annotations

import itertools

import numpy as np

Vec3 = tuple[float, float, float]


def vsub(a, b) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vadd(a, b) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vscale(a, s: float) -> Vec3:
    return (a[0] * s, a[1] * s, a[2] * s)


def vlerp(a, b, t: float) -> Vec3:
    u = 1.0 - t
    return (u * a[0] + t * b[0], u * a[1] + t * b[1], u * a[2] + t * b[2])


def dot(a, b) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cross(a, b) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def norm(a) -> float:
    return (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]) ** 0.5


def normalized(a) -> Vec3:
    n = norm(a)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (a[0] / n, a[1] / n, a[2] / n)


def triangle_area(a, b, c) -> float:
    return 0.5 * norm(cross(vsub(b, a), vsub(c, a)))


def polygon_area(points) -> float:
    """Area of a planar convex polygon given as an ordered point sequence."""
    if len(points) < 3:
        return 0.0
    total = (0.0, 0.0, 0.0)
    p0 = points[0]
    for i in range(1, len(points) - 1):
        total = vadd(total, cross(vsub(points[i], p0), vsub(points[i + 1], p0)))
    return 0.5 * norm(total)


class Plane:
    """Oriented plane n.x + d = 0; signed distance is positive on the +n side."""

    __slots__ = ("nx", "ny", "nz", "d")

    def __init__(self, normal, d: float):
        self.nx, self.ny, self.nz = float(normal[0]), float(normal[1]), float(normal[2])
        self.d = float(d)

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = normalized(normal)
        return cls(n, -dot(n, point))

    @property
    def normal(self) -> Vec3:
        return (self.nx, self.ny, self.nz)

    def signed(self, p) -> float:
        return self.nx * p[0] + self.ny * p[1] + self.nz * p[2] + self.d

    def signed_many(self, points: np.ndarray) -> np.ndarray:
        return points @ np.array([self.nx, self.ny, self.nz]) + self.d

    def flipped(self) -> "Plane":
        return Plane((-self.nx, -self.ny, -self.nz), -self.d)

    def as_row(self) -> np.ndarray:
        return np.array([self.nx, self.ny, self.nz, self.d])

    def __repr__(self):
        return f"Plane(({self.nx:.6g}, {self.ny:.6g}, {self.nz:.6g}), {self.d:.6g})"


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through points; returns (unit normal, centroid).

    Exact for coplanar inputs. Orientation of the returned normal is
    arbitrary; callers fix it against a reference direction.
    """
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid)
    return vt[-1], centroid


def halfspace_vertices(planes, tol: float) -> np.ndarray:
    """Vertices of the convex polytope bounded by `planes` (interior: signed <= 0).

    Enumerates 3-plane intersections and keeps the points inside every
    half-space within tol. Empty result means an empty or degenerate cell.
    """
    rows = np.array([p.as_row() for p in planes])
    normals = rows[:, :3]
    offsets = rows[:, 3]
    found = []
    for i, j, k in itertools.combinations(range(len(planes)), 3):
        a = normals[[i, j, k]]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        x = np.linalg.solve(a, -offsets[[i, j, k]])
        if np.all(normals @ x + offsets <= tol):
            found.append(x)
    if not found:
        return np.empty((0, 3))
    return np.array(found)


def aabb_of_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=np.float64)
    return pts.min(axis=0), pts.max(axis=0)


def aabb_overlap(amin, amax, bmin, bmax) -> bool:
    return bool(np.all(amin <= bmax) and np.all(bmin <= amax))
