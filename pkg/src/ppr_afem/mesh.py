"""Conforming triangle meshes, uniform generators and newest vertex bisection.

Triangles are stored counterclockwise. ``refinement_edge[t] = i`` tags the
edge opposite local vertex ``i`` (the newest vertex) as the edge to bisect.
Children produced by :func:`bisect` are stored with their newest vertex first,
so their refinement edge index is 0.
"""
from __future__ import annotations

import math
from enum import IntEnum
from functools import cached_property

import numpy as np
from scipy import sparse

__all__ = [
    "VertexMarker",
    "Region",
    "Mesh",
    "MeshError",
    "generate_uniform",
    "generate_crack_domain",
    "mesh_size",
    "bisect",
    "MeshRefiner",
    "read_mesh",
    "write_mesh",
]

CLOSURE_GUARD = 10**6


class MeshError(RuntimeError):
    """Raised for invalid meshes or refinement failures."""


class VertexMarker(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    SLIT_LOWER = 2
    SLIT_UPPER = 3


class Region(IntEnum):
    NONE = 0
    MINUS = 1
    PLUS = 2


def _signed_areas(points, tris):
    p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _angles(points, tris):
    """Interior angles (M x 3), angle i at local vertex i."""
    out = np.empty(tris.shape, dtype=float)
    for i in range(3):
        p = points[tris[:, i]]
        u = points[tris[:, (i + 1) % 3]] - p
        v = points[tris[:, (i + 2) % 3]] - p
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        dot = (u * v).sum(axis=1)
        out[:, i] = np.arctan2(np.abs(cross), dot)
    return out


def _longest_edge(points, tris):
    """Local index of the vertex opposite the longest edge; ties go to the
    smallest opposite-vertex id."""
    lengths = np.empty(tris.shape, dtype=float)
    for i in range(3):
        d = points[tris[:, (i + 1) % 3]] - points[tris[:, (i + 2) % 3]]
        lengths[:, i] = np.hypot(d[:, 0], d[:, 1])
    longest = lengths.max(axis=1, keepdims=True)
    # relative tolerance so that bitwise-different equal lengths still tie
    is_max = lengths >= longest * (1.0 - 1e-12)
    ids = np.where(is_max, tris, np.iinfo(tris.dtype).max)
    return np.argmin(ids, axis=1).astype(np.int8)


class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    points : (N, 2) array
    triangles : (M, 3) int array, counterclockwise
    markers : (N,) int array of :class:`VertexMarker`
    refinement_edge : (M,) array, optional
        Defaults to the longest edge of each triangle.
    region : (M,) array of :class:`Region`, optional
    domain_tag : {"square", "crack_square", "unit_square"}
    generation : int
        Number of refinement rounds applied since creation.
    min_angle_floor : float, optional
        Lower bound recorded at creation; defaults to min angle / 4.
    slit : tuple of two points, optional
        Segment of the domain that is cut (crack), if any.
    """

    def __init__(self, points, triangles, markers=None, refinement_edge=None,
                 region=None, domain_tag="square", generation=0,
                 min_angle_floor=None, slit=None):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise MeshError("points must be an (N, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (M, 3) array")
        if not np.all(np.isfinite(self.points)):
            raise MeshError("vertex coordinates must be finite")
        nv = len(self.points)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise MeshError("triangle references a vertex out of range")
        if markers is None:
            markers = np.zeros(nv, dtype=np.int8)
        self.markers = np.asarray(markers, dtype=np.int8)
        if refinement_edge is None:
            refinement_edge = _longest_edge(self.points, self.triangles)
        self.refinement_edge = np.asarray(refinement_edge, dtype=np.int8)
        if region is None:
            region = np.zeros(len(self.triangles), dtype=np.int8)
        self.region = np.asarray(region, dtype=np.int8)
        self.domain_tag = domain_tag
        self.generation = int(generation)
        self.slit = slit
        if slit is None and np.any(self.markers >= VertexMarker.SLIT_LOWER):
            raise MeshError("slit markers present but the domain declares no slit")
        if np.any(self.areas <= 0):
            raise MeshError("triangles must have positive (counterclockwise) area")
        if min_angle_floor is None:
            min_angle_floor = self.min_angle / 4.0
        self.min_angle_floor = float(min_angle_floor)
        self.parent_edges = None
        for arr in (self.points, self.triangles, self.markers,
                    self.refinement_edge, self.region):
            arr.setflags(write=False)

    def __repr__(self):
        return (f"Mesh({self.n_vertices} vertices, {self.n_triangles} triangles, "
                f"domain={self.domain_tag!r}, generation={self.generation})")

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        return _signed_areas(self.points, self.triangles)

    @cached_property
    def angles(self):
        return _angles(self.points, self.triangles)

    @property
    def min_angle(self):
        return float(self.angles.min())

    @cached_property
    def barycenters(self):
        return self.points[self.triangles].mean(axis=1)

    @cached_property
    def _edge_data(self):
        tris = self.triangles
        m = len(tris)
        local = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(m, 3)
        counts = np.bincount(inverse.ravel(), minlength=len(edges))
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        flat = inverse.ravel()
        owner = np.repeat(np.arange(m), 3)
        order = np.argsort(flat, kind="stable")
        sorted_edges = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris[sorted_edges[first], 0] = owner[order][first]
        second = ~first
        edge_tris[sorted_edges[second], 1] = owner[order][second]
        return edges, inverse, counts, edge_tris

    @property
    def edges(self):
        """(E, 2) sorted vertex pairs, in lexicographic order."""
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """(M, 3) edge ids; column i is the edge opposite local vertex i."""
        return self._edge_data[1]

    @property
    def edge_counts(self):
        return self._edge_data[2]

    @property
    def edge_triangles(self):
        """(E, 2) incident triangles, -1 where absent."""
        return self._edge_data[3]

    @cached_property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_counts == 1)

    @cached_property
    def boundary_vertices(self):
        """Boolean mask of vertices on a boundary (or slit) edge."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @cached_property
    def vertex_triangles(self):
        """Sparse (N x M) vertex/triangle incidence, CSR."""
        m = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(m), 3)
        data = np.ones(3 * m, dtype=np.int8)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, m))

    @cached_property
    def triangle_neighbors(self):
        """(M, 3) neighbor across the edge opposite local vertex i, -1 on boundary."""
        et = self.edge_triangles[self.triangle_edges]
        own = np.arange(self.n_triangles)[:, None]
        return np.where(et[..., 0] == own, et[..., 1], et[..., 0])

    def check_conformity(self):
        """Raise :class:`MeshError` unless the mesh is conforming.

        Every edge must have one or two incident triangles, and edges with a
        single triangle must join two non-interior vertices (a hanging node
        leaves an unmatched edge with an interior endpoint).
        """
        if np.any(self.edge_counts > 2):
            raise MeshError("edge shared by more than two triangles")
        key = np.sort(self.triangles, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise MeshError("duplicate triangles")
        bnd = self.edges[self.boundary_edges]
        if np.any(self.markers[bnd] == VertexMarker.INTERIOR):
            raise MeshError("unmatched edge with an interior endpoint (hanging node)")
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError("vertex not referenced by any triangle")
        if np.any(self.areas <= 1e-14 * mesh_size(self)[0] ** 2):
            raise MeshError("degenerate triangle")
        return True


# --------------------------------------------------------------------------
# generators

_PATTERNS = ("regular", "chevron", "crisscross", "unionjack")


def _rect_markers(points, domain):
    x0, x1, y0, y1 = domain
    on = ((points[:, 0] == x0) | (points[:, 0] == x1)
          | (points[:, 1] == y0) | (points[:, 1] == y1))
    return np.where(on, VertexMarker.DIRICHLET, VertexMarker.INTERIOR).astype(np.int8)


def _assign_regions(points, tris, region_of):
    if region_of is None:
        return None
    bary = points[tris].mean(axis=1)
    region = np.asarray(region_of(bary[:, 0], bary[:, 1]), dtype=np.int8)
    # the interface must follow mesh lines: points pulled toward each vertex
    # must fall in the same region as the barycenter
    for i in range(3):
        q = 0.999 * points[tris[:, i]] + 0.001 * bary
        if np.any(np.asarray(region_of(q[:, 0], q[:, 1]), dtype=np.int8) != region):
            raise MeshError("subdomain interface does not lie on mesh lines")
    return region


def generate_uniform(pattern="regular", n=4, domain=(0.0, 1.0, 0.0, 1.0),
                     region_of=None, domain_tag=None):
    """Uniform triangulation of a rectangle with ``n`` cells per side.

    Parameters
    ----------
    pattern : {"regular", "chevron", "crisscross", "unionjack"}
        ``regular`` splits every cell along the (0,0)-(1,1) diagonal;
        ``chevron`` alternates diagonal direction by column; ``crisscross``
        adds a cell-center vertex; ``unionjack`` alternates in a checkerboard.
    n : int
        Cells per side, at least 1.
    domain : (x0, x1, y0, y1)
    region_of : callable, optional
        Maps barycenter coordinate arrays to :class:`Region` codes.
    """
    if pattern not in _PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {_PATTERNS}")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    x0, x1, y0, y1 = map(float, domain)
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    points = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    centers = []
    for j in range(n):
        for i in range(n):
            p00, p10, p11, p01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if pattern == "regular":
                slash = True
            elif pattern == "chevron":
                slash = i % 2 == 0
            elif pattern == "unionjack":
                slash = (i + j) % 2 == 0
            else:
                c = len(points) + len(centers)
                centers.append(((xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2))
                tris += [(p00, p10, c), (p10, p11, c), (p11, p01, c), (p01, p00, c)]
                continue
            if slash:
                tris += [(p00, p10, p11), (p00, p11, p01)]
            else:
                tris += [(p00, p10, p01), (p10, p11, p01)]
    if centers:
        points = np.vstack([points, np.array(centers)])
    tris = np.array(tris, dtype=np.int64)
    markers = _rect_markers(points, (x0, x1, y0, y1))
    if domain_tag is None:
        domain_tag = "unit_square" if (x0, x1, y0, y1) == (0.0, 1.0, 0.0, 1.0) else "square"
    region = _assign_regions(points, tris, region_of)
    return Mesh(points, tris, markers, region=region, domain_tag=domain_tag)


def generate_crack_domain(n=4):
    """Regular-pattern mesh of (-1, 1)^2 cut along {(x, 0): 0 <= x <= 1}.

    ``n`` is the number of cells per unit length (mesh width 1/n); it must be
    even. Vertices with y = 0 and x > 0 are duplicated: triangles above the
    slit use the ``SLIT_UPPER`` copy and triangles below the ``SLIT_LOWER``
    copy. The tip (0, 0) is shared.
    """
    if int(n) != n or n < 2 or n % 2:
        raise ValueError("crack domain needs an even number of cells per unit length")
    n = int(n)
    base = generate_uniform("regular", 2 * n, (-1.0, 1.0, -1.0, 1.0))
    points = base.points.copy()
    markers = base.markers.copy()
    tris = base.triangles.copy()
    on_slit = np.flatnonzero((points[:, 1] == 0.0) & (points[:, 0] > 0.0))
    markers[on_slit] = VertexMarker.SLIT_LOWER
    markers[(points[:, 1] == 0.0) & (points[:, 0] == 0.0)] = VertexMarker.DIRICHLET
    copies = np.arange(len(points), len(points) + len(on_slit))
    points = np.vstack([points, points[on_slit]])
    markers = np.concatenate([markers, np.full(len(on_slit), VertexMarker.SLIT_UPPER, np.int8)])
    remap = np.arange(len(base.points))
    remap[on_slit] = copies
    upper = base.barycenters[:, 1] > 0
    tris[upper] = remap[tris[upper]]
    return Mesh(points, tris, markers, domain_tag="crack_square",
                slit=((0.0, 0.0), (1.0, 0.0)))


def mesh_size(mesh):
    """Return ``(h, h_min, min_angle)``: largest and smallest element
    diameter and the smallest interior angle in radians."""
    if mesh.n_triangles == 0:
        raise MeshError("empty mesh")
    p, t = mesh.points, mesh.triangles
    diam = np.zeros(len(t))
    for i in range(3):
        d = p[t[:, (i + 1) % 3]] - p[t[:, (i + 2) % 3]]
        diam = np.maximum(diam, np.hypot(d[:, 0], d[:, 1]))
    return float(diam.max()), float(diam.min()), mesh.min_angle


# --------------------------------------------------------------------------
# newest vertex bisection

def _on_slit(slit, pts):
    if slit is None:
        return np.zeros(len(pts), dtype=bool)
    (ax, ay), (bx, by) = slit
    d = np.array([bx - ax, by - ay])
    rel = pts - np.array([ax, ay])
    cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
    t = rel @ d / (d @ d)
    scale = math.hypot(*d)
    return (np.abs(cross) <= 1e-13 * scale) & (t > 0.0) & (t <= 1.0 + 1e-13)


def _midpoint_markers(mesh, cut_edges):
    """Markers for midpoints of the given edges."""
    pairs = mesh.edges[cut_edges]
    out = np.zeros(len(cut_edges), dtype=np.int8)
    bnd = mesh.edge_counts[cut_edges] == 1
    out[bnd] = VertexMarker.DIRICHLET
    mids = 0.5 * (mesh.points[pairs[:, 0]] + mesh.points[pairs[:, 1]])
    slit = bnd & _on_slit(mesh.slit, mids)
    if slit.any():
        end_markers = mesh.markers[pairs[slit]]
        out[slit] = end_markers.max(axis=1)
    return out


def bisect(mesh, marked):
    """Refine ``mesh`` by newest vertex bisection.

    Every triangle in ``marked`` is bisected at its refinement edge and the
    mesh is closed to a conforming one by bisecting neighbours as needed.
    Untouched triangles keep their order (first); children follow.
    Returns ``mesh`` itself when ``marked`` is empty.
    """
    marked = np.unique(np.fromiter(marked, dtype=np.int64)) if not isinstance(
        marked, np.ndarray) else np.unique(marked.astype(np.int64))
    if marked.size == 0:
        return mesh
    m = mesh.n_triangles
    if marked[0] < 0 or marked[-1] >= m:
        bad = marked[(marked < 0) | (marked >= m)]
        raise MeshError(f"unknown triangle id(s): {bad.tolist()}")
    tri_edges = mesh.triangle_edges
    ref = mesh.refinement_edge.astype(np.int64)
    ref_edge = tri_edges[np.arange(m), ref]
    cut = np.zeros(len(mesh.edges), dtype=bool)
    cut[ref_edge[marked]] = True
    steps = 0
    while True:
        need = cut[tri_edges].any(axis=1) & ~cut[ref_edge]
        if not need.any():
            break
        cut[ref_edge[need]] = True
        steps += int(need.sum())
        if steps > CLOSURE_GUARD:
            raise MeshError("conforming closure did not terminate")

    cut_ids = np.flatnonzero(cut)
    nv = mesh.n_vertices
    pairs = mesh.edges[cut_ids]
    new_pts = 0.5 * (mesh.points[pairs[:, 0]] + mesh.points[pairs[:, 1]])
    new_markers = _midpoint_markers(mesh, cut_ids)
    stride = nv + len(cut_ids)
    keys = pairs[:, 0] * stride + pairs[:, 1]  # edges are sorted lexicographically
    mid_ids = nv + np.arange(len(cut_ids))

    def midpoint(b, c):
        lo, hi = np.minimum(b, c), np.maximum(b, c)
        k = lo * stride + hi
        pos = np.searchsorted(keys, k)
        pos = np.minimum(pos, len(keys) - 1)
        hit = keys[pos] == k
        return np.where(hit, mid_ids[pos], -1)

    split = cut[ref_edge]
    keep = ~split
    # rotate to newest-vertex-first so the refinement edge is (1, 2)
    idx = np.flatnonzero(split)
    rot = (ref[idx][:, None] + np.arange(3)) % 3
    work = mesh.triangles[idx[:, None], rot]
    work_region = mesh.region[idx]
    done_t, done_r = [], []
    for _ in range(4):
        if len(work) == 0:
            break
        a, b, c = work[:, 0], work[:, 1], work[:, 2]
        mid = midpoint(b, c)
        hit = mid >= 0
        done_t.append(work[~hit])
        done_r.append(work_region[~hit])
        a, b, c, mid = a[hit], b[hit], c[hit], mid[hit]
        reg = work_region[hit]
        work = np.concatenate([np.column_stack([mid, a, b]), np.column_stack([mid, c, a])])
        work_region = np.concatenate([reg, reg])
    if len(work):
        raise MeshError("bisection did not converge")
    children = np.concatenate(done_t) if done_t else np.empty((0, 3), np.int64)
    child_region = np.concatenate(done_r) if done_r else np.empty(0, np.int8)
    tris = np.concatenate([mesh.triangles[keep], children])
    refe = np.concatenate([mesh.refinement_edge[keep], np.zeros(len(children), np.int8)])
    region = np.concatenate([mesh.region[keep], child_region])
    out = Mesh(np.vstack([mesh.points, new_pts]), tris,
               np.concatenate([mesh.markers, new_markers]), refe, region,
               mesh.domain_tag, mesh.generation + 1, mesh.min_angle_floor, mesh.slit)
    # vertex ids nv, nv+1, ... are the midpoints of these parent edges
    out.parent_edges = pairs
    return out


class MeshRefiner:
    """Incremental newest vertex bisection for long sequences of small markings.

    Keeps neighbour information in dictionaries so a single bisection costs
    time proportional to its closure, not to the mesh size. Mutates its own
    state; call :meth:`to_mesh` for an immutable snapshot.
    """

    def __init__(self, mesh):
        self.points = [tuple(p) for p in mesh.points.tolist()]
        self.markers = mesh.markers.tolist()
        self.slit = mesh.slit
        self.domain_tag = mesh.domain_tag
        self.min_angle_floor = mesh.min_angle_floor
        self.h0 = mesh_size(mesh)[0]
        self.tris = []
        self.region = []
        self.alive = []
        self.edge_tris = {}
        self.boundary = set()
        self.mid = {}
        self.generation = mesh.generation
        for t, r in zip(mesh.triangles.tolist(), mesh.refinement_edge.tolist()):
            t = t[r:] + t[:r]
            self._add(tuple(t), None)
        for t, reg in enumerate(mesh.region.tolist()):
            self.region[t] = reg
        for e in mesh.edges[mesh.boundary_edges].tolist():
            self.boundary.add(tuple(e))
        self.touched = set()
        self.new_tris = []

    @staticmethod
    def _key(a, b):
        return (a, b) if a < b else (b, a)

    def _add(self, tri, region):
        t = len(self.tris)
        self.tris.append(tri)
        self.region.append(region)
        self.alive.append(True)
        a, b, c = tri
        for e in ((b, c), (c, a), (a, b)):
            k = self._key(*e)
            self.edge_tris.setdefault(k, []).append(t)
            if hasattr(self, "touched"):
                self.touched.add(k)
        if hasattr(self, "new_tris"):
            self.new_tris.append(t)
        return t

    def _remove(self, t):
        self.alive[t] = False
        a, b, c = self.tris[t]
        for e in ((b, c), (c, a), (a, b)):
            k = self._key(*e)
            lst = self.edge_tris[k]
            lst.remove(t)
            if not lst:
                del self.edge_tris[k]
            self.touched.add(k)

    def _neighbor(self, t, edge):
        for s in self.edge_tris.get(self._key(*edge), ()):
            if s != t:
                return s
        return None

    def _midpoint(self, b, c):
        k = self._key(b, c)
        if k in self.mid:
            return self.mid[k]
        pb, pc = self.points[b], self.points[c]
        p = (0.5 * (pb[0] + pc[0]), 0.5 * (pb[1] + pc[1]))
        if k in self.boundary:
            marker = VertexMarker.DIRICHLET
            if _on_slit(self.slit, np.array([p]))[0]:
                marker = max(self.markers[b], self.markers[c])
            self.boundary.discard(k)
            v = len(self.points)
            self.boundary.add(self._key(b, v))
            self.boundary.add(self._key(v, c))
        else:
            marker = VertexMarker.INTERIOR
            v = len(self.points)
        self.points.append(p)
        self.markers.append(int(marker))
        self.mid[k] = v
        return v

    def _split(self, t):
        a, b, c = self.tris[t]
        m = self._midpoint(b, c)
        reg = self.region[t]
        self._remove(t)
        self._add((m, a, b), reg)
        self._add((m, c, a), reg)

    def _bisect_one(self, t, budget):
        stack = [t]
        while stack:
            budget[0] += 1
            if budget[0] > CLOSURE_GUARD:
                raise MeshError("conforming closure did not terminate")
            t = stack[-1]
            if not self.alive[t]:
                stack.pop()
                continue
            a, b, c = self.tris[t]
            nb = self._neighbor(t, (b, c))
            if nb is not None:
                na, nb_b, nb_c = self.tris[nb]
                if self._key(nb_b, nb_c) != self._key(b, c):
                    stack.append(nb)
                    continue
                self._split(nb)
            self._split(t)
            stack.pop()

    def bisect(self, marked):
        """Bisect the given live triangle ids (with conforming closure)."""
        self.touched = set()
        self.new_tris = []
        budget = [0]
        for t in marked:
            if not (0 <= t < len(self.tris)) or not self.alive[t]:
                raise MeshError(f"unknown triangle id {t}")
        for t in marked:
            if self.alive[t]:
                self._bisect_one(t, budget)
        self.generation += 1
        return self.new_tris

    def live_triangles(self):
        return [t for t, ok in enumerate(self.alive) if ok]

    def audit_round(self):
        """Check conformity, positive area and the angle floor for everything
        touched by the last :meth:`bisect` call. Raises :class:`MeshError`."""
        for k in self.touched:
            owners = self.edge_tris.get(k)
            if owners is None:
                continue
            if len(owners) > 2:
                raise MeshError(f"edge {k} has {len(owners)} triangles")
            if len(owners) == 1 and k not in self.boundary:
                raise MeshError(f"hanging edge {k}")
        new = [t for t in self.new_tris if self.alive[t]]
        if not new:
            return True
        tris = [self.tris[t] for t in new]
        pts = np.array([self.points[v] for tri in tris for v in tri])
        tris = np.arange(len(pts)).reshape(-1, 3)
        area = _signed_areas(pts, tris)
        if np.any(area < 1e-14 * self.h0 ** 2):
            raise MeshError("non-positive triangle area")
        if _angles(pts, tris).min() < self.min_angle_floor:
            raise MeshError("minimum angle fell below the recorded floor")
        return True

    def to_mesh(self):
        live = self.live_triangles()
        tris = np.array([self.tris[t] for t in live], dtype=np.int64)
        region = np.array([self.region[t] for t in live], dtype=np.int8)
        return Mesh(np.array(self.points), tris, np.array(self.markers, np.int8),
                    np.zeros(len(live), np.int8), region, self.domain_tag,
                    self.generation, self.min_angle_floor, self.slit)


# --------------------------------------------------------------------------
# Triangle-style node/ele text files

def write_mesh(mesh):
    """Return ``(node_text, ele_text)`` in Triangle's node/ele format."""
    node = [f"{mesh.n_vertices} 2 0 1"]
    for i, ((x, y), mk) in enumerate(zip(mesh.points.tolist(), mesh.markers.tolist())):
        node.append(f"{i} {x!r} {y!r} {mk}")
    ele = [f"{mesh.n_triangles} 3 1"]
    for i, ((a, b, c), r) in enumerate(zip(mesh.triangles.tolist(), mesh.region.tolist())):
        ele.append(f"{i} {a} {b} {c} {r}")
    return "\n".join(node) + "\n", "\n".join(ele) + "\n"


def _data_lines(text):
    out = []
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln:
            out.append(ln.split())
    return out


def read_mesh(node_text, ele_text, slit=None, domain_tag=None):
    """Parse node/ele texts into a :class:`Mesh`.

    Raises ``ValueError`` for malformed lines, inconsistent counts or
    out-of-range vertex references. A missing region column means
    ``Region.NONE`` everywhere.
    """
    nodes = _data_lines(node_text)
    if not nodes:
        raise ValueError("empty node file")
    try:
        nv, dim = int(nodes[0][0]), int(nodes[0][1])
    except (ValueError, IndexError):
        raise ValueError(f"malformed node header: {' '.join(nodes[0])}") from None
    if dim != 2:
        raise ValueError("only 2D node files are supported")
    if len(nodes) - 1 != nv:
        raise ValueError(f"node header declares {nv} vertices, found {len(nodes) - 1}")
    points = np.empty((nv, 2))
    markers = np.zeros(nv, dtype=np.int8)
    seen = np.zeros(nv, dtype=bool)
    for ln in nodes[1:]:
        if len(ln) < 3:
            raise ValueError(f"malformed node line: {' '.join(ln)}")
        try:
            i, x, y = int(ln[0]), float(ln[1]), float(ln[2])
            mk = int(ln[-1]) if len(ln) >= 4 else 0
        except ValueError:
            raise ValueError(f"malformed node line: {' '.join(ln)}") from None
        if not 0 <= i < nv or seen[i]:
            raise ValueError(f"bad or repeated vertex id {i}")
        if mk not in (0, 1, 2, 3):
            raise ValueError(f"unknown boundary marker {mk}")
        seen[i] = True
        points[i] = (x, y)
        markers[i] = mk
    eles = _data_lines(ele_text)
    if not eles:
        raise ValueError("empty ele file")
    try:
        nt, npe = int(eles[0][0]), int(eles[0][1])
    except (ValueError, IndexError):
        raise ValueError(f"malformed ele header: {' '.join(eles[0])}") from None
    if npe != 3:
        raise ValueError("only 3-node triangles are supported")
    if len(eles) - 1 != nt:
        raise ValueError(f"ele header declares {nt} triangles, found {len(eles) - 1}")
    tris = np.empty((nt, 3), dtype=np.int64)
    region = np.zeros(nt, dtype=np.int8)
    tseen = np.zeros(nt, dtype=bool)
    for ln in eles[1:]:
        if len(ln) not in (4, 5):
            raise ValueError(f"malformed ele line: {' '.join(ln)}")
        try:
            vals = [int(v) for v in ln]
        except ValueError:
            raise ValueError(f"malformed ele line: {' '.join(ln)}") from None
        i = vals[0]
        if not 0 <= i < nt or tseen[i]:
            raise ValueError(f"bad or repeated triangle id {i}")
        if any(not 0 <= v < nv for v in vals[1:4]):
            raise ValueError(f"triangle {i} references a vertex outside 0..{nv - 1}")
        if len(vals) == 5 and vals[4] not in (0, 1, 2):
            raise ValueError(f"unknown region code {vals[4]}")
        tseen[i] = True
        tris[i] = vals[1:4]
        region[i] = vals[4] if len(vals) == 5 else 0
    if np.any(markers >= VertexMarker.SLIT_LOWER) and slit is None:
        slit = ((0.0, 0.0), (1.0, 0.0))
    if domain_tag is None:
        if slit is not None:
            domain_tag = "crack_square"
        elif points.min(axis=0).tolist() == [0.0, 0.0] and points.max(axis=0).tolist() == [1.0, 1.0]:
            domain_tag = "unit_square"
        else:
            domain_tag = "square"
    return Mesh(points, tris, markers, region=region, domain_tag=domain_tag, slit=slit)
