import json
import math

import numpy as np
import pytest

from meshtear.errors import GeometryError, ParameterError
from meshtear.geom import normalized
from meshtear.mesh import build_mesh
from meshtear.synth import flat_grid
from meshtear.tear import (
    SIDE_MINUS,
    SIDE_PLUS,
    SIDE_TIE_EPS,
    ScalpelSample,
    apply_tear_segment,
    build_cell,
    build_cells,
    classify_faces,
    clip_face,
    continuous_tear,
    plan_tear_segment,
    sample_path,
    side_of,
)

from conftest import slab_cell
from oracles import brute_classify, live_area, mc_overlap_area, polygon_area, sample_on_faces


def pose(tip, tail=None, t=0.0):
    if tail is None:
        tail = (tip[0], tip[1], tip[2] - 1.0)
    return ScalpelSample(tip, tail, t)


# ---------------------------------------------------------------------------
# sample_path

def test_sample_path_spacing_filter():
    poses = [pose((x, 0, 0), t=i) for i, x in enumerate([0.0, 0.01, 0.02, 0.12, 0.24])]
    kept = sample_path(poses, min_spacing=0.1)
    assert [p.tip[0] for p in kept] == [0.0, 0.12, 0.24]


def test_sample_path_singleton():
    p = pose((0, 0, 0))
    assert sample_path([p], 0.1) == [p]


def test_sample_path_empty():
    assert sample_path([], 0.1) == []


def test_sample_path_needs_a_threshold():
    with pytest.raises(ParameterError):
        sample_path([pose((0, 0, 0))], 0.0, 0.0)


def test_sample_path_time_retention():
    poses = [pose((0, 0, 0), t=0.0), pose((0, 0, 0.0001), t=0.04),
             pose((0.0002, 0, 0), t=0.09), pose((0, 0.0001, 0), t=0.13)]
    kept = sample_path(poses, min_spacing=0.0, min_dt=0.08)
    assert [p.timestamp for p in kept] == [0.0, 0.09, 0.13]


def test_sample_path_circle_matches_greedy_oracle():
    n = 100
    poses = [
        pose((math.cos(2 * math.pi * k / n), math.sin(2 * math.pi * k / n), 0.0), t=k)
        for k in range(n)
    ]
    kept = sample_path(poses, min_spacing=0.1)

    # independent greedy enumeration
    expected = [0]
    for k in range(1, n):
        last = poses[expected[-1]].tip
        cur = poses[k].tip
        if math.dist(last, cur) >= 0.1:
            expected.append(k)
    if expected[-1] != n - 1:
        expected.append(n - 1)
    assert len(kept) == len(expected) == 51
    for a, b in zip(kept[:-2], kept[1:-1]):
        assert math.dist(a.tip, b.tip) >= 0.1
    assert kept[0] is poses[0] and kept[-1] is poses[-1]


# ---------------------------------------------------------------------------
# build_cell

def probe(cell, point):
    return cell.plane_distances(np.array([point]))[0]


def test_build_cell_axis_aligned():
    s0 = ScalpelSample((0, 0, 0), (0, 0, -1))
    s1 = ScalpelSample((1, 0, 0), (1, 0, -1))
    cell = build_cell(s0, s1, 0.2)
    assert np.allclose(np.abs(cell.mid_normal), (0, 1, 0))
    assert cell.signed_mid_one((0.5, 0.0, -0.5)) == pytest.approx(0.0, abs=1e-12)
    # interior point and six boundary probes
    assert cell.contains(np.array([(0.5, 0.0, -0.5)]))[0]
    for point, expect_in in [
        ((0.5, 0.099, -0.5), True),
        ((0.5, 0.101, -0.5), False),    # beyond gap wall y=+0.1
        ((0.5, -0.101, -0.5), False),   # beyond gap wall y=-0.1
        ((-0.01, 0.0, -0.5), False),    # behind start cap x=0
        ((1.01, 0.0, -0.5), False),     # past end cap x=1
        ((0.5, 0.0, 0.01), False),      # above tip cap z=0
        ((0.5, 0.0, -1.01), False),     # below tail cap z=-1
    ]:
        assert bool(cell.contains(np.array([point]))[0]) is expect_in, point
    # cell aabb is the box spanned by the six planes
    assert np.allclose(cell.aabb_min, (0.0, -0.1, -1.0), atol=1e-9)
    assert np.allclose(cell.aabb_max, (1.0, 0.1, 0.0), atol=1e-9)


def test_build_cell_rejects_degenerate_quad():
    s0 = ScalpelSample((0, 0, 0), (0, 0, -1))
    with pytest.raises(GeometryError):
        build_cell(s0, ScalpelSample((0, 0, 1e-16), (0, 0, -1 + 1e-16)), 0.1)


def test_build_cell_rejects_negative_width():
    s0 = ScalpelSample((0, 0, 0), (0, 0, -1))
    s1 = ScalpelSample((1, 0, 0), (1, 0, -1))
    with pytest.raises(ParameterError):
        build_cell(s0, s1, -0.1)


def test_build_cell_bisector_joint_and_disjointness():
    prev = build_cell(
        ScalpelSample((-0.5, -0.5, 0), (-0.5, -0.5, -1)),
        ScalpelSample((0, 0, 0), (0, 0, -1)),
        0.2,
    )
    cell = build_cell(
        ScalpelSample((0, 0, 0), (0, 0, -1)),
        ScalpelSample((1, 0, 0), (1, 0, -1)),
        0.2,
        prev=prev,
    )
    h = normalized((1 / math.sqrt(2) + 1.0, 1 / math.sqrt(2), 0.0))
    start = cell.planes[4]
    assert np.allclose((start.nx, start.ny, start.nz), (-h[0], -h[1], -h[2]), atol=1e-9)
    # prev's end cap was aligned to the exact same plane, flipped
    end = prev.planes[5]
    assert np.allclose((end.nx, end.ny, end.nz), h, atol=1e-9)
    assert end.d == pytest.approx(-start.d, abs=1e-12)

    rng = np.random.default_rng(11)
    lo = np.minimum(prev.aabb_min, cell.aabb_min)
    hi = np.maximum(prev.aabb_max, cell.aabb_max)
    pts = rng.uniform(lo, hi, size=(100_000, 3))
    both = prev.contains(pts) & cell.contains(pts)
    assert not both.any()


def test_build_cell_zero_width():
    s0 = ScalpelSample((0, 0, 0), (0, 0, -1))
    s1 = ScalpelSample((1, 0, 0), (1, 0, -1))
    cell = build_cell(s0, s1, 0.0)
    # gap walls coincide with the mid plane; the interior is empty
    rng = np.random.default_rng(5)
    pts = rng.uniform((-0.5, -0.5, -1.5), (1.5, 0.5, 0.5), size=(20_000, 3))
    assert not cell.contains(pts).any()


def test_build_cell_antiparallel_joint_falls_back():
    prev = build_cell(
        ScalpelSample((-1, 0, 0), (-1, 0, -1)),
        ScalpelSample((0, 0, 0), (0, 0, -1)),
        0.1,
    )
    cell = build_cell(
        ScalpelSample((0, 0, 0), (0, 0, -1)),
        ScalpelSample((-1, 1e-6, 0), (-1, 1e-6, -1)),
        0.1,
        prev=prev,
    )
    assert cell.joint_fallback


def test_side_of_tie_resolves_plus():
    cell = slab_cell(-0.5, 0.5)
    mid = cell.mid_point
    assert side_of(cell, mid) == SIDE_PLUS
    off = mid + 0.01 * cell.mid_normal
    assert side_of(cell, off) == SIDE_PLUS
    assert side_of(cell, mid - 0.01 * cell.mid_normal) == SIDE_MINUS


# ---------------------------------------------------------------------------
# classify_faces

def test_classify_disjoint_face(unit_triangle):
    cell = slab_cell(5.0, 6.0, extent=1.0)
    inside, crossing = classify_faces(unit_triangle, cell)
    assert inside == [] and crossing == []


def test_classify_contained_face(unit_triangle):
    cell = slab_cell(-1.0, 2.0)
    inside, crossing = classify_faces(unit_triangle, cell)
    assert inside == [0] and crossing == []


def test_classify_matches_brute_force(blob):
    cell = build_cell(
        ScalpelSample((-0.15, 0.45, 0.0), (-0.15, 0.05, 0.0)),
        ScalpelSample((0.15, 0.45, 0.0), (0.15, 0.05, 0.0)),
        0.03,
    )
    inside, crossing = classify_faces(blob, cell)
    oracle_inside, oracle_crossing = brute_classify(blob, cell)
    assert inside == oracle_inside
    assert crossing == oracle_crossing
    assert len(inside) > 0 and len(crossing) > 0


# ---------------------------------------------------------------------------
# clip_face

def test_clip_strip_areas(unit_triangle):
    cell = slab_cell(0.4, 0.6)
    # oracle first: Monte-Carlo area of the strip x in [0.4, 0.6] under y=1-x
    rng = np.random.default_rng(2)
    pts, _ = sample_on_faces(unit_triangle, 400_000, rng)
    frac = float(cell.contains(pts).sum()) / len(pts)
    strip_mc = 0.5 * frac
    assert strip_mc == pytest.approx(0.1, abs=2e-3)   # exact integral is 0.1

    pieces = clip_face(unit_triangle, 0, cell)
    assert len(pieces) == 2
    kept = sum(polygon_area([v.pos for v in p.vertices]) for p in pieces)
    assert kept == pytest.approx(0.5 - 0.1, abs=1e-12)


def test_clip_touching_vertex_keeps_face(make_slab_cell):
    m = build_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    cell = slab_cell(1.0, 2.0)  # touches only the vertex at x=1
    delta = plan_tear_segment(m, cell)
    assert delta.empty
    pieces = clip_face(m, 0, cell)
    kept = sum(polygon_area([v.pos for v in p.vertices]) for p in pieces)
    assert kept == pytest.approx(0.5, abs=1e-9)


def test_clip_zero_width_plane_split(unit_triangle):
    cell = slab_cell(0.25, 0.25)
    pieces = clip_face(unit_triangle, 0, cell)
    assert len(pieces) == 2
    kept = sum(polygon_area([v.pos for v in p.vertices]) for p in pieces)
    assert kept == pytest.approx(0.5, abs=1e-9)
    for piece in pieces:
        for v in piece.vertices:
            if v.vid is None:
                assert v.pos[0] == pytest.approx(0.25, abs=1e-12)


def test_zero_width_conservation_random_triangles():
    rng = np.random.default_rng(17)
    for _ in range(200):
        tri = rng.uniform(-1, 1, (3, 3))
        area = polygon_area(tri)
        if area < 1e-3:
            continue
        m = build_mesh(tri, [(0, 1, 2)])
        centroid = tri.mean(axis=0)
        x = centroid[0]
        cell = slab_cell(x, x, extent=6.0)
        pieces = clip_face(m, 0, cell)
        kept = sum(polygon_area([v.pos for v in p.vertices]) for p in pieces)
        assert kept == pytest.approx(area, abs=1e-9 * max(1.0, area))


def test_clip_attribute_interpolation():
    skin = [((0, 1.0),), ((1, 1.0),), ((0, 0.5), (1, 0.5))]
    normals = [(0, 0, 1), (0, 0, 1), (0, 0, 1)]
    m = build_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)],
                   normals=normals, uvs=[(0, 0), (1, 0), (0, 1)], skin=skin)
    delta = plan_tear_segment(m, slab_cell(0.4, 0.6))
    assert delta.new_vertices
    for nv in delta.new_vertices:
        a, b = nv.edge
        pa = m.positions[a] if a < 3 else np.array(delta.new_vertices[a - 3].vertex.position)
        pb = m.positions[b] if b < 3 else np.array(delta.new_vertices[b - 3].vertex.position)
        expect = (1 - nv.t) * pa + nv.t * pb
        assert np.abs(np.array(nv.vertex.position) - expect).max() < 1e-9
        if a < 3 and b < 3:
            ua, ub = m.uvs[a], m.uvs[b]
            expect_uv = (1 - nv.t) * ua + nv.t * ub
            assert np.abs(np.array(nv.vertex.uv) - expect_uv).max() < 1e-9
        assert np.linalg.norm(nv.vertex.normal) == pytest.approx(1.0, abs=1e-9)
        assert sum(w for _, w in nv.vertex.skin) == pytest.approx(1.0, abs=1e-6)
        assert len(nv.vertex.skin) <= 4


def test_clip_side_labels_match_geometry(unit_triangle):
    cell = slab_cell(0.4, 0.6)
    delta = plan_tear_segment(unit_triangle, cell)
    for nv in delta.new_vertices:
        s = cell.signed_mid_one(nv.vertex.position)
        if s > SIDE_TIE_EPS:
            assert nv.side == SIDE_PLUS
        elif s < -SIDE_TIE_EPS:
            assert nv.side == SIDE_MINUS


def test_clip_straddling_piece_split_by_mid_plane():
    # small cell fully across the middle of one huge triangle: the kept
    # pieces beyond the caps must not fan across the mid plane
    m = build_mesh([(-5, -5, 0), (5, -5, 0), (0, 8, 0)], [(0, 1, 2)])
    cell = build_cell(
        ScalpelSample((-1, 0.2, 1), (-1, 0.2, -1)),
        ScalpelSample((1, 0.2, 1), (1, 0.2, -1)),
        0.3,
    )
    delta = plan_tear_segment(m, cell)
    assert delta.new_faces
    base = 3
    for tri in delta.new_faces:
        sides = set()
        for vid in tri:
            if vid >= base:
                nv = delta.new_vertices[vid - base]
                s = cell.signed_mid_one(nv.vertex.position)
                if abs(s) > SIDE_TIE_EPS:
                    sides.add(nv.side)
        assert not (SIDE_PLUS in sides and SIDE_MINUS in sides)
    # conservation still holds for the whole clip
    kept = live_area_of_delta(m, delta)
    overlap = polygon_overlap_oracle(m, cell)
    assert kept == pytest.approx(polygon_area(m.positions[[0, 1, 2]]) - overlap, rel=1e-6)


def live_area_of_delta(mesh, delta):
    total = 0.0
    base = mesh.vertex_count
    allpos = list(mesh.positions) + [np.array(nv.vertex.position) for nv in delta.new_vertices]
    for tri in delta.new_faces:
        pts = [allpos[v] for v in tri]
        total += polygon_area(pts)
    return total


def polygon_overlap_oracle(mesh, cell):
    """Exact area of (triangle 0) inside the cell via keep-inside clipping."""
    from oracles import cell_plane_tuples, clip_polygon_inside

    tri = [tuple(p) for p in mesh.positions[mesh.faces[0]]]
    poly = clip_polygon_inside(tri, cell_plane_tuples(cell), 1e-15)
    return polygon_area(poly)


# ---------------------------------------------------------------------------
# apply_tear_segment

def test_segment_miss_is_empty(grid):
    v, f = grid.vertex_count, grid.live_face_count
    delta = apply_tear_segment(grid, slab_cell(5.0, 6.0, extent=0.5))
    assert delta.empty
    assert grid.vertex_count == v and grid.live_face_count == f


def test_segment_pure_removal(unit_triangle):
    delta = apply_tear_segment(unit_triangle, slab_cell(-1.0, 2.0))
    assert delta.removed_faces == [0]
    assert not delta.new_faces and not delta.new_vertices
    assert unit_triangle.live_face_count == 0


def test_segment_destructive_consistency_and_area(blob):
    work = blob.copy()
    cell = build_cell(
        ScalpelSample((-0.12, 0.45, 0.0), (-0.12, 0.05, 0.0)),
        ScalpelSample((0.12, 0.45, 0.0), (0.12, 0.05, 0.0)),
        0.02,
    )
    rng = np.random.default_rng(23)
    area_before = live_area(work)
    overlap_mc = mc_overlap_area(work, cell, 1_000_000, rng)
    apply_tear_segment(work, cell)
    area_after = live_area(work)

    # no sample point of any live face is strictly interior to the cell
    pts, _ = sample_on_faces(work, 10_000, np.random.default_rng(29))
    assert not work.alive[~work.alive].any()
    assert not cell.contains(pts, tol=1e-7 * work.diagonal).any()
    verts = work.positions[np.unique(work.faces[work.live_faces()])]
    assert not cell.contains(verts, tol=1e-7 * work.diagonal).any()

    removed = area_before - area_after
    assert removed > 0
    assert abs(removed - overlap_mc) <= 1e-3 * area_before


def test_segment_deterministic_payload(grid):
    g1 = flat_grid(30, 30)
    g2 = flat_grid(30, 30)
    cell1 = slab_cell(-0.03, 0.03, extent=2.0)
    cell2 = slab_cell(-0.03, 0.03, extent=2.0)
    d1 = apply_tear_segment(g1, cell1)
    d2 = apply_tear_segment(g2, cell2)
    assert json.dumps(d1.payload()) == json.dumps(d2.payload())


# ---------------------------------------------------------------------------
# continuous_tear

def test_continuous_tear_single_sample(grid):
    assert continuous_tear(grid, [pose((0, 0, 0))], 0.05, 0.1) == []


def test_continuous_straight_path_matches_single_slab():
    g_chain = flat_grid(40, 40)
    g_single = flat_grid(40, 40)
    poses = [
        ScalpelSample((x, -0.6, 0.5), (x, 0.6, -0.5))
        for x in (-0.3, 0.0, 0.3)
    ]
    # straight chain of 2 cells
    deltas = continuous_tear(g_chain, poses, 0.04, 0.2)
    assert len(deltas) == 2
    # one long single-segment tear covering the same span
    single = continuous_tear(g_single, [poses[0], poses[-1]], 0.04, 0.2)
    assert len(single) == 1
    assert live_area(g_chain) == pytest.approx(live_area(g_single), rel=1e-9)
    # joint shares the exact plane: no gap, no double removal
    assert g_chain.live_face_count > 0


def test_continuous_l_path_joint(grid):
    poses = [
        ScalpelSample((-0.3, 0.0, 0.5), (-0.3, 0.0, -0.5)),
        ScalpelSample((0.0, 0.0, 0.5), (0.0, 0.0, -0.5)),
        ScalpelSample((0.0, 0.3, 0.5), (0.0, 0.3, -0.5)),
    ]
    cells = build_cells(sample_path(poses, 0.2), 0.04)
    assert len(cells) == 2
    # 90 degree turn: shared joint plane is the 45 degree bisector
    h = normalized((1.0, 1.0, 0.0))
    end = cells[0].planes[5]
    start = cells[1].planes[4]
    assert np.allclose((end.nx, end.ny, end.nz), h, atol=1e-9)
    assert np.allclose((start.nx, start.ny, start.nz), (-h[0], -h[1], -h[2]), atol=1e-9)

    for cell in cells:
        apply_tear_segment(grid, cell)
    pts, _ = sample_on_faces(grid, 20_000, np.random.default_rng(31))
    for cell in cells:
        assert not cell.contains(pts, tol=1e-7 * grid.diagonal).any()


def test_continuous_skips_degenerate_segment(grid, caplog):
    poses = [
        ScalpelSample((-0.3, 0.0, 0.5), (-0.3, 0.0, -0.5), 0.0),
        ScalpelSample((-0.3, 1e-12, 0.5), (-0.3, 1e-12, -0.5), 1.0),
        ScalpelSample((0.3, 0.0, 0.5), (0.3, 0.0, -0.5), 2.0),
    ]
    with caplog.at_level("WARNING"):
        deltas = continuous_tear(grid, poses, 0.04, 0.0, min_dt=0.5)
    assert len(deltas) == 1
    assert any("skipping tear segment" in r.message for r in caplog.records)


def test_chain_cells_pairwise_disjoint():
    poses = [
        ScalpelSample((-0.4, 0.0, 0.5), (-0.4, 0.0, -0.5)),
        ScalpelSample((0.0, 0.0, 0.5), (0.0, 0.0, -0.5)),
        ScalpelSample((0.1, 0.35, 0.5), (0.1, 0.35, -0.5)),
        ScalpelSample((0.5, 0.4, 0.5), (0.5, 0.4, -0.5)),
    ]
    cells = build_cells(sample_path(poses, 0.2), 0.06)
    assert len(cells) == 3
    rng = np.random.default_rng(41)
    for a, b in zip(cells, cells[1:]):
        lo = np.minimum(a.aabb_min, b.aabb_min)
        hi = np.maximum(a.aabb_max, b.aabb_max)
        pts = rng.uniform(lo, hi, size=(100_000, 3))
        assert not (a.contains(pts) & b.contains(pts)).any()


def test_continuous_tear_deterministic():
    g1, g2 = flat_grid(25, 25), flat_grid(25, 25)
    poses = [
        ScalpelSample((-0.3, 0.0, 0.5), (-0.3, 0.0, -0.5)),
        ScalpelSample((0.0, 0.05, 0.5), (0.0, 0.05, -0.5)),
        ScalpelSample((0.3, 0.0, 0.5), (0.3, 0.0, -0.5)),
    ]
    d1 = continuous_tear(g1, poses, 0.05, 0.2)
    d2 = continuous_tear(g2, poses, 0.05, 0.2)
    b1 = json.dumps([d.payload() for d in d1])
    b2 = json.dumps([d.payload() for d in d2])
    assert b1 == b2
