import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppr_afem.mesh import (
    Mesh, MeshError, MeshRefiner, Region, VertexMarker, bisect,
    generate_crack_domain, generate_uniform, mesh_size, read_mesh, write_mesh,
)


def _find(mesh, x, y):
    hit = np.flatnonzero((np.abs(mesh.points[:, 0] - x) < 1e-12) & (np.abs(mesh.points[:, 1] - y) < 1e-12))
    return hit


def _angle_triples(mesh):
    a = np.sort(np.round(mesh.angles, 10), axis=1)
    return {tuple(r) for r in a.tolist()}


# -- generators ---------------------------------------------------------------

def test_regular_smallest():
    m = generate_uniform("regular", 1)
    assert (m.n_triangles, m.n_vertices) == (2, 4)


def test_regular_two_by_two():
    m = generate_uniform("regular", 2)
    assert (m.n_triangles, m.n_vertices) == (8, 9)
    c = _find(m, 0.5, 0.5)[0]
    assert np.count_nonzero(m.triangles == c) == 6


def test_crisscross_one_cell():
    m = generate_uniform("crisscross", 1)
    assert (m.n_triangles, m.n_vertices) == (4, 5)
    assert len(_find(m, 0.5, 0.5)) == 1


@pytest.mark.parametrize("pattern", ["regular", "chevron", "crisscross", "unionjack"])
@pytest.mark.parametrize("n", [1, 3, 6])
def test_patterns_conform(pattern, n):
    m = generate_uniform(pattern, n)
    assert m.check_conformity()
    assert np.all(m.areas > 0)
    if pattern == "regular":
        assert m.n_vertices == (n + 1) ** 2
        d = m.points[m.triangles]
        # every cell diagonal runs in the (1, 1) direction
        for i in range(3):
            e = d[:, (i + 1) % 3] - d[:, i]
            diag = np.abs(e[:, 0] * e[:, 1]) > 0
            assert np.all(e[diag, 0] * e[diag, 1] > 0)


def test_rejects_zero_cells():
    with pytest.raises(ValueError):
        generate_uniform("regular", 0)
    with pytest.raises(ValueError):
        generate_uniform("hexagonal", 2)


def test_region_labels_must_follow_mesh_lines():
    quad = lambda x, y: np.where((x > 0) & (y > 0), Region.MINUS, Region.PLUS)
    m = generate_uniform("regular", 4, (-1, 1, -1, 1), region_of=quad)
    assert set(m.region.tolist()) == {Region.MINUS, Region.PLUS}
    with pytest.raises(MeshError):
        generate_uniform("regular", 3, (-1, 1, -1, 1), region_of=quad)


# -- crack domain -------------------------------------------------------------

def test_crack_duplicates_slit_vertices():
    m = generate_crack_domain(2)
    assert len(_find(m, 0.5, 0.0)) == 2
    assert len(_find(m, 1.0, 0.0)) == 2
    assert len(_find(m, 0.0, 0.0)) == 1
    assert m.check_conformity()


def test_crack_duplicate_pairs_bitwise_equal():
    m = generate_crack_domain(4)
    lower = np.flatnonzero(m.markers == VertexMarker.SLIT_LOWER)
    upper = np.flatnonzero(m.markers == VertexMarker.SLIT_UPPER)
    assert len(lower) == len(upper) == 4
    key = lambda ids: sorted(map(tuple, m.points[ids].tolist()))
    assert key(lower) == key(upper)
    above = m.barycenters[:, 1] > 0
    assert not np.isin(m.triangles[above], lower).any()
    assert not np.isin(m.triangles[~above], upper).any()


def test_crack_walk_goes_round_the_tip():
    m = generate_crack_domain(4)
    nb = m.triangle_neighbors
    bc = m.barycenters
    locate = lambda p: int(np.argmin(np.hypot(*(bc - p).T)))
    start, goal = locate((0.5, 0.25)), locate((0.5, -0.25))
    prev = {start: None}
    queue = deque([start])
    while queue:
        t = queue.popleft()
        if t == goal:
            break
        for s in nb[t]:
            if s >= 0 and s not in prev:
                prev[s] = t
                queue.append(s)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    assert min(m.points[m.triangles[path]][..., 0].min(axis=1)) <= 0.0


def test_crack_rejects_odd():
    with pytest.raises(ValueError):
        generate_crack_domain(3)


def test_slit_markers_need_slit():
    m = generate_uniform("regular", 1)
    markers = m.markers.copy()
    markers[0] = VertexMarker.SLIT_LOWER
    with pytest.raises(MeshError):
        Mesh(m.points, m.triangles, markers)


# -- size and angles ----------------------------------------------------------

def test_mesh_size_regular():
    h, hmin, angle = mesh_size(generate_uniform("regular", 2))
    assert h == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert h >= hmin
    for n in (1, 5, 8):
        assert mesh_size(generate_uniform("regular", n))[2] == pytest.approx(math.pi / 4, abs=1e-14)


def test_initial_refinement_edge_is_longest():
    m = generate_uniform("crisscross", 2)
    p = m.points[m.triangles]
    idx = m.refinement_edge.astype(int)
    r = np.arange(m.n_triangles)
    opp = p[r, (idx + 1) % 3] - p[r, (idx + 2) % 3]
    lengths = np.hypot(opp[:, 0], opp[:, 1])
    for i in range(3):
        e = p[:, (i + 1) % 3] - p[:, (i + 2) % 3]
        assert np.all(lengths >= np.hypot(e[:, 0], e[:, 1]) - 1e-14)


# -- bisection ----------------------------------------------------------------

def test_bisect_empty_is_identity():
    m = generate_uniform("regular", 2)
    assert bisect(m, []) is m


def test_bisect_single_triangle_closure():
    m = generate_uniform("regular", 1)
    out = bisect(m, [0])
    assert out.n_triangles in (4, 5, 6)
    assert out.check_conformity()
    assert out.generation == 1


def test_bisect_unknown_id():
    with pytest.raises(MeshError):
        bisect(generate_uniform("regular", 1), [7])


def test_uniform_bisection_keeps_angles():
    m = generate_uniform("regular", 1)
    a0 = m.min_angle
    start = _angle_triples(m)
    for _ in range(10):
        m = bisect(m, np.arange(m.n_triangles))
        assert m.min_angle == pytest.approx(a0, abs=1e-12)
    assert m.n_triangles == 2 * 2 ** 10
    assert len(_angle_triples(m)) <= 4 * len(start)
    assert m.check_conformity()


def test_children_inherit_regions():
    quad = lambda x, y: np.where((x > 0) & (y > 0), Region.MINUS, Region.PLUS)
    m = generate_uniform("regular", 4, (-1, 1, -1, 1), region_of=quad)
    for _ in range(3):
        m = bisect(m, np.flatnonzero(m.region == Region.MINUS)[:5])
    bc = m.barycenters
    assert np.array_equal(m.region, quad(bc[:, 0], bc[:, 1]).astype(np.int8))


def test_bisect_on_slit_keeps_copies_apart():
    m = generate_crack_domain(2)
    for _ in range(4):
        near = np.flatnonzero(np.hypot(*m.barycenters.T) < 0.6)
        m = bisect(m, near)
    assert m.check_conformity()
    lower = m.points[m.markers == VertexMarker.SLIT_LOWER]
    upper = m.points[m.markers == VertexMarker.SLIT_UPPER]
    assert sorted(map(tuple, lower.tolist())) == sorted(map(tuple, upper.tolist()))
    assert np.all(lower[:, 1] == 0) and np.all(lower[:, 0] > 0)


def test_parent_edges_give_midpoints():
    m = generate_uniform("chevron", 3)
    out = bisect(m, [0, 5, 9])
    new = out.points[m.n_vertices:]
    mid = 0.5 * (m.points[out.parent_edges[:, 0]] + m.points[out.parent_edges[:, 1]])
    assert np.array_equal(new, mid)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=6), st.integers(0, 2**31 - 1))
def test_random_bisection_invariants(_picks, seed):
    rng = np.random.default_rng(seed)
    m = generate_crack_domain(2)
    h0 = mesh_size(m)[0]
    for p in _picks:
        k = 1 + p % 4
        m = bisect(m, rng.choice(m.n_triangles, size=min(k, m.n_triangles), replace=False))
        assert m.check_conformity()
        assert np.all(m.areas >= 1e-14 * h0 ** 2)
        assert m.min_angle >= m.min_angle_floor


def test_refiner_matches_batch_bisection():
    m = generate_uniform("unionjack", 2)
    r = MeshRefiner(m)
    r.bisect([3])
    r.audit_round()
    batch = bisect(m, [3])
    snap = r.to_mesh()
    assert snap.check_conformity()
    key = lambda mm: sorted(tuple(sorted(map(tuple, mm.points[t].tolist()))) for t in mm.triangles)
    assert key(snap) == key(batch)


def test_refiner_rejects_dead_triangle():
    r = MeshRefiner(generate_uniform("regular", 1))
    r.bisect([0])
    with pytest.raises(MeshError):
        r.bisect([0])


# -- node/ele files -----------------------------------------------------------

def test_round_trip_square():
    m = generate_uniform("regular", 1)
    node, ele = write_mesh(m)
    back = read_mesh(node, ele)
    assert np.array_equal(back.points, m.points)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.markers, m.markers)
    assert write_mesh(back) == (node, ele)


def test_round_trip_perturbed_points():
    m = generate_uniform("regular", 3)
    rng = np.random.default_rng(1)
    pts = m.points + 1e-3 * rng.standard_normal(m.points.shape) * (m.markers == 0)[:, None]
    m = Mesh(pts, m.triangles, m.markers)
    back = read_mesh(*write_mesh(m))
    assert np.array_equal(back.points, m.points)


def test_round_trip_crack():
    m = generate_crack_domain(2)
    back = read_mesh(*write_mesh(m), slit=m.slit)
    assert np.array_equal(back.markers, m.markers)
    assert back.check_conformity()


def test_read_rejects_out_of_range_vertex():
    node, _ = write_mesh(generate_uniform("regular", 1))
    ele = "2 3 1\n0 0 1 2 0\n1 0 2 99 0\n"
    with pytest.raises(ValueError, match="outside"):
        read_mesh(node, ele)


def test_read_missing_region_column():
    node, _ = write_mesh(generate_uniform("regular", 1))
    m = read_mesh(node, "2 3 0\n0 0 1 3\n1 0 3 2\n")
    assert np.all(m.region == Region.NONE)


@pytest.mark.parametrize("node,ele", [
    ("3 2 0 1\n0 0 0 1\n1 1 0 1\n", "1 3 1\n0 0 1 2 0\n"),
    ("3 2 0 1\n0 0 0 1\n1 1 0 1\n2 0 x 1\n", "1 3 1\n0 0 1 2 0\n"),
    ("3 2 0 1\n0 0 0 1\n1 1 0 1\n2 0 1 1\n", "1 3 1\n0 0 1\n"),
])
def test_read_rejects_malformed(node, ele):
    with pytest.raises(ValueError):
        read_mesh(node, ele)
