"""Procedural meshes used by the test corpus, the benchmark, and demos.

Everything here is closed-form deterministic (no RNG), so goldens pinned
against these shapes are stable across platforms.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh, build_mesh

# Reference blob: vertex count matches the classic small scan everyone
# benchmarks against, with lumpy features so tears hit varied geometry.
BLOB_RINGS = 57
BLOB_SEGMENTS = 59


def flat_grid(nx: int = 20, ny: int = 20, size: float = 1.0) -> Mesh:
    """Flat triangulated grid in the z=0 plane, centered at the origin."""
    xs = np.linspace(-size / 2, size / 2, nx)
    ys = np.linspace(-size / 2, size / 2, ny)
    positions = []
    uvs = []
    for j in range(ny):
        for i in range(nx):
            positions.append((xs[i], ys[j], 0.0))
            uvs.append((i / (nx - 1), j / (ny - 1)))
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    normals = [(0.0, 0.0, 1.0)] * len(positions)
    return build_mesh(positions, faces, normals=normals, uvs=uvs)


def skinned_cylinder(segments: int = 24, rings: int = 25, radius: float = 0.25,
                     height: float = 2.0):
    """Open cylinder along +y with two bones blending along the height.

    Returns (mesh, skeleton). Bone 0 anchors the base, bone 1 the top
    half; weights ramp linearly through the middle third, so a bend at
    bone 1 flexes the waist.
    """
    from .skinning import Bone, Skeleton

    positions = []
    normals = []
    uvs = []
    skin = []
    for r in range(rings):
        v = r / (rings - 1)
        y = v * height
        # weight on the upper bone ramps across the middle third
        t = min(1.0, max(0.0, (v - 1.0 / 3.0) * 3.0))
        for s in range(segments):
            a = 2.0 * np.pi * s / segments
            positions.append((radius * np.cos(a), y, radius * np.sin(a)))
            normals.append((np.cos(a), 0.0, np.sin(a)))
            uvs.append((s / segments, v))
            if t <= 0.0:
                skin.append(((0, 1.0),))
            elif t >= 1.0:
                skin.append(((1, 1.0),))
            else:
                skin.append(((0, 1.0 - t), (1, t)))
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = a + segments
            d = b + segments
            faces.append((a, b, d))
            faces.append((a, d, c))
    mesh = build_mesh(positions, faces, normals=normals, uvs=uvs, skin=skin)

    def bind(ty):
        m = np.eye(4)
        m[1, 3] = ty
        return m

    pivot = height / 2.0
    bones = [
        Bone("base", -1, np.linalg.inv(bind(0.0))),
        Bone("top", 0, np.linalg.inv(bind(pivot))),
    ]
    return mesh, Skeleton(bones)


def reference_blob() -> Mesh:
    """Lumpy closed blob with exactly 3365 vertices, scaled to a unit
    bounding-box diagonal (the canonical scale for clustering range d)."""
    mesh = bumpy_sphere(BLOB_RINGS, BLOB_SEGMENTS)
    assert mesh.vertex_count == 3365
    return mesh


def bumpy_sphere(rings: int, segs: int) -> Mesh:
    """The reference blob shape at an arbitrary tessellation density."""
    positions = []
    uvs = []
    for r in range(1, rings + 1):
        theta = np.pi * r / (rings + 1)
        for s in range(segs):
            phi = 2.0 * np.pi * s / segs
            bump = (
                1.0
                + 0.16 * np.sin(3.0 * theta) * np.sin(2.0 * phi)
                + 0.10 * np.cos(5.0 * phi) * np.sin(2.0 * theta)
                + 0.07 * np.cos(4.0 * theta)
            )
            rad = 0.5 * bump
            positions.append((
                rad * np.sin(theta) * np.cos(phi),
                rad * np.cos(theta),
                rad * np.sin(theta) * np.sin(phi),
            ))
            uvs.append((s / segs, r / (rings + 1)))
    top = len(positions)
    positions.append((0.0, 0.5 * (1.0 + 0.07), 0.0))
    uvs.append((0.0, 0.0))
    bottom = len(positions)
    positions.append((0.0, -0.5 * (1.0 + 0.07), 0.0))
    uvs.append((0.0, 1.0))

    faces = []
    for s in range(segs):
        faces.append((top, (s + 1) % segs, s))
    for r in range(rings - 1):
        for s in range(segs):
            a = r * segs + s
            b = r * segs + (s + 1) % segs
            c = a + segs
            d = b + segs
            faces.append((a, b, d))
            faces.append((a, d, c))
    last = (rings - 1) * segs
    for s in range(segs):
        faces.append((bottom, last + s, last + (s + 1) % segs))

    pos = np.array(positions)
    diag = np.linalg.norm(pos.max(axis=0) - pos.min(axis=0))
    pos /= diag

    # area-weighted vertex normals
    tri = pos[np.array(faces)]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals = np.zeros_like(pos)
    for k, (a, b, c) in enumerate(faces):
        normals[a] += fn[k]
        normals[b] += fn[k]
        normals[c] += fn[k]
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    return build_mesh(pos, faces, normals=normals, uvs=uvs)
