"""Polynomial preserving recovery (PPR) of gradients and Hessians.

At every vertex a polynomial of degree k+1 is fitted by least squares to the
nodal values on a patch of elements, in coordinates centred at the vertex and
scaled by the patch diameter. The recovered gradient at the vertex is the
gradient of the fit there; at P2 edge midpoints it is the average of the two
endpoint fits' gradients. Because the map is linear, it is stored as a pair
of sparse differentiation matrices ``bx``, ``by`` and every recovery is a
matrix-vector product.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .fespace import EDGE, FeSpace, NodalField
from .mesh import Mesh, Region

__all__ = [
    "RecoveryError",
    "Patch",
    "LocalFit",
    "DiffMatrices",
    "VectorNodalField",
    "HessianNodalField",
    "PiecewiseRecoveredField",
    "monomial_exponents",
    "scaled_pseudoinverse",
    "build_layers",
    "build_patch",
    "fit_local",
    "point_weights",
    "recover_at_node",
    "build_diff_matrices",
    "recover_gradient",
    "recover_hessian",
    "recover_interface",
    "recover_simple_average",
    "sub_space",
]

COND_LIMIT = 1e8
MAX_LAYERS = 10


class RecoveryError(RuntimeError):
    """A patch could not host a well-posed least-squares fit."""


def monomial_exponents(degree):
    """Exponents (a, b) of x^a y^b ordered 1, x, y, x^2, xy, y^2, x^3, ..."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def _vandermonde(xi, eta, degree):
    exps = monomial_exponents(degree)
    return np.stack([xi ** a * eta ** b for a, b in exps], axis=-1)


def _dmonomials(xi, eta, degree):
    """x- and y-derivatives of the monomials at (xi, eta): two (..., n) arrays."""
    exps = monomial_exponents(degree)
    dx = np.stack([a * xi ** max(a - 1, 0) * eta ** b for a, b in exps], axis=-1)
    dy = np.stack([b * xi ** a * eta ** max(b - 1, 0) for a, b in exps], axis=-1)
    return dx, dy


def scaled_pseudoinverse(local_coords, degree):
    """Least-squares solution operator for a fit of total degree ``degree``.

    ``local_coords`` are the (m, 2) sampling points already in scaled local
    coordinates. Returns ``(pinv, cond)`` where ``pinv`` is (n, m) and maps
    sample values to monomial coefficients. Uses a QR factorization.
    """
    xy = np.asarray(local_coords, dtype=float)
    A = _vandermonde(xy[:, 0], xy[:, 1], degree)
    n = A.shape[1]
    if len(xy) < n:
        return None, np.inf
    Q, R = np.linalg.qr(A)
    s = np.linalg.svd(R, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if not np.isfinite(cond):
        return None, cond
    return np.linalg.solve(R, Q.T), cond


# --------------------------------------------------------------------------
# patches

@dataclass(frozen=True)
class Patch:
    """Sampling set of a vertex fit."""

    center: int
    sampling: np.ndarray
    layers: int
    diameter: float
    kind: str  # "interior_vertex" or "boundary_vertex"
    elements: np.ndarray = field(repr=False, default=None)


def build_layers(mesh: Mesh, vertex: int, n: int):
    """Element ids of the layer L(vertex, n), sorted.

    L(z, 0) is the vertex alone (no elements), L(z, 1) the elements touching
    z, and L(z, n) adds every element sharing an edge with L(z, n - 1).
    """
    if n < 0:
        raise ValueError("layer count must be non-negative")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    vt = mesh.vertex_triangles
    elems = set(vt.indices[vt.indptr[vertex]:vt.indptr[vertex + 1]].tolist())
    nbr = mesh.triangle_neighbors
    for _ in range(n - 1):
        grown = set(elems)
        for t in elems:
            grown.update(int(s) for s in nbr[t] if s >= 0)
        elems = grown
    return np.array(sorted(elems), dtype=np.int64)


def _dofs_of(space, elems):
    return np.unique(space.element_dofs[elems].ravel())


def _diameter(points):
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1).max()))


def _well_posed(space, center, sampling):
    nk1 = (space.degree + 2) * (space.degree + 3) // 2
    if len(sampling) < nk1:
        return False, 0.0
    pts = space.dof_points[sampling]
    h = _diameter(pts)
    _, cond = scaled_pseudoinverse((pts - space.dof_points[center]) / h, space.degree + 1)
    return cond <= COND_LIMIT, h


def _grow(space, vertex):
    mesh = space.mesh
    prev = None
    for n in range(1, MAX_LAYERS + 1):
        elems = build_layers(mesh, vertex, n)
        if prev is not None and len(elems) == len(prev):
            break
        sampling = _dofs_of(space, elems)
        ok, h = _well_posed(space, vertex, sampling)
        if ok:
            return elems, sampling, n, h
        prev = elems
    raise RecoveryError(
        f"vertex {vertex}: no well-posed patch within {MAX_LAYERS} layers "
        "(mesh too coarse or degenerate)")


def _interior_neighbors(mesh, vertex):
    vt = mesh.vertex_triangles
    elems = vt.indices[vt.indptr[vertex]:vt.indptr[vertex + 1]]
    nbrs = np.unique(mesh.triangles[elems].ravel())
    nbrs = nbrs[nbrs != vertex]
    return nbrs[~mesh.boundary_vertices[nbrs]]


def build_patch(space: FeSpace, dof: int) -> Patch:
    """Patch of a vertex dof.

    Interior vertices grow layers from n = 1 until there are enough sampling
    points and the scaled fit has condition number at most 1e8. Boundary
    (and slit) vertices take the union of the patches of their adjacent
    interior vertices, falling back to layer growth when there is none or
    the union is ill-posed.
    """
    mesh = space.mesh
    if not 0 <= dof < mesh.n_vertices:
        raise ValueError(f"dof {dof} is not a vertex")
    if not mesh.boundary_vertices[dof]:
        elems, sampling, n, h = _grow(space, dof)
        return Patch(dof, sampling, n, h, "interior_vertex", elems)
    nbrs = _interior_neighbors(mesh, dof)
    if len(nbrs):
        parts = [build_patch(space, int(z)) for z in nbrs]
        elems = np.unique(np.concatenate([p.elements for p in parts]))
        sampling = _dofs_of(space, elems)
        ok, h = _well_posed(space, dof, sampling)
        if ok:
            return Patch(dof, sampling, max(p.layers for p in parts), h,
                         "boundary_vertex", elems)
    elems, sampling, n, h = _grow(space, dof)
    return Patch(dof, sampling, n, h, "boundary_vertex", elems)


# --------------------------------------------------------------------------
# local fits

@dataclass(frozen=True)
class LocalFit:
    """Fitted polynomial in scaled coordinates ((x, y) - center) / scale."""

    coefficients: np.ndarray
    center: np.ndarray
    scale: float
    degree: int

    def value(self, point):
        xi = (np.asarray(point, dtype=float) - self.center) / self.scale
        return float(_vandermonde(xi[0], xi[1], self.degree) @ self.coefficients)

    def gradient(self, point=None):
        """Gradient of the fit at ``point`` (defaults to the centre)."""
        if point is None:
            return np.array(self.coefficients[1:3]) / self.scale
        xi = (np.asarray(point, dtype=float) - self.center) / self.scale
        dx, dy = _dmonomials(xi[0], xi[1], self.degree)
        return np.array([dx @ self.coefficients, dy @ self.coefficients]) / self.scale


def fit_local(space: FeSpace, patch: Patch, values) -> LocalFit:
    """Least-squares fit of degree k+1 to ``values`` at the patch samples."""
    values = np.asarray(values, dtype=float)
    if values.shape != patch.sampling.shape:
        raise ValueError("one value per sampling point is required")
    if not np.all(np.isfinite(values)):
        raise ValueError("sample values must be finite")
    center = space.dof_points[patch.center]
    local = (space.dof_points[patch.sampling] - center) / patch.diameter
    pinv, cond = scaled_pseudoinverse(local, space.degree + 1)
    if pinv is None or cond > COND_LIMIT:
        raise RecoveryError(f"rank-deficient fit at dof {patch.center}")
    return LocalFit(pinv @ values, center.copy(), patch.diameter, space.degree + 1)


def point_weights(point, vertices):
    """Weights for combining vertex fits at a node.

    Two vertices (edge node): the weight of each endpoint is the distance to
    the *other* endpoint divided by the edge length, so the nearer endpoint
    counts more and a midpoint gets 1/2 each. Three vertices (interior node):
    barycentric coordinates.
    """
    p = np.asarray(point, dtype=float)
    v = np.asarray(vertices, dtype=float)
    if len(v) == 2:
        length = np.linalg.norm(v[1] - v[0])
        w0 = np.linalg.norm(p - v[1]) / length
        return np.array([w0, 1.0 - w0])
    if len(v) == 3:
        T = np.column_stack([v[1] - v[0], v[2] - v[0]])
        l12 = np.linalg.solve(T, p - v[0])
        return np.array([1.0 - l12.sum(), l12[0], l12[1]])
    raise ValueError("expected two or three vertices")


def recover_at_node(fits, point, vertices):
    """Recovered gradient at an edge node or element-interior node.

    ``fits`` are the vertex fits of the two edge endpoints or the three
    element vertices, combined with :func:`point_weights`.
    """
    w = point_weights(point, vertices)
    return sum(wi * f.gradient(point) for wi, f in zip(w, fits))


# --------------------------------------------------------------------------
# batched patch construction

def _group_rows(samp, rows, m):
    """(len(rows), m) index array of CSR rows that all hold m entries."""
    return samp.indices[samp.indptr[rows][:, None] + np.arange(m)]


class _PatchSet:
    """Sampling sets and least-squares fits for every vertex of a space.

    Fits are stored in groups of equal sampling size: each group holds the
    centre vertices, the (G, m) sampling ids, the (G, n, m) pseudoinverses
    and the (G,) patch diameters.
    """

    def __init__(self, space):
        self.space = space
        mesh = space.mesh
        nv = mesh.n_vertices
        m = mesh.n_triangles
        k1 = space.degree + 1
        self.nk1 = (k1 + 1) * (k1 + 2) // 2
        self.groups = []
        self.layers = np.zeros(nv, dtype=np.int64)
        self._elem_rows, self._elem_cols = [], []

        vt = mesh.vertex_triangles.astype(bool).astype(np.int32)
        nbr = mesh.triangle_neighbors
        r = np.repeat(np.arange(m), 3)
        c = nbr.ravel()
        ok = c >= 0
        grow = sparse.csr_matrix((np.ones(ok.sum(), np.int32), (r[ok], c[ok])), shape=(m, m))
        self._grow = (grow + sparse.identity(m, dtype=np.int32, format="csr")).tocsr()
        nloc = space.n_local
        self._td = sparse.csr_matrix(
            (np.ones(m * nloc, np.int32), (np.repeat(np.arange(m), nloc), space.element_dofs.ravel())),
            shape=(m, space.n_dofs))
        self._vt = vt
        boundary = mesh.boundary_vertices

        interior = np.flatnonzero(~boundary)
        self._grow_layers(interior)

        bnd = np.flatnonzero(boundary)
        if len(bnd):
            a, b = mesh.edges[:, 0], mesh.edges[:, 1]
            sel_ab = boundary[a] & ~boundary[b]
            sel_ba = boundary[b] & ~boundary[a]
            rows = np.concatenate([a[sel_ab], b[sel_ba]])
            cols = np.concatenate([b[sel_ab], a[sel_ba]])
            adj = sparse.csr_matrix((np.ones(len(rows), np.int32), (rows, cols)), shape=(nv, nv))
            has_nbr = np.diff(adj.indptr)[bnd] > 0
            merged = bnd[has_nbr]
            fallback = bnd[~has_nbr]
            if len(merged):
                int_elems = sparse.csr_matrix(
                    (np.ones(sum(len(x) for x in self._elem_rows), np.int32),
                     (np.concatenate(self._elem_rows), np.concatenate(self._elem_cols))),
                    shape=(nv, m))
                A = adj[merged]
                union = (A @ int_elems).tocsr()
                union.data[:] = 1
                done = self._fit_rows(merged, union)
                lay = A.multiply(self.layers[None, :]).max(axis=1).toarray().ravel()
                self.layers[merged[done]] = lay[done]
                fallback = np.concatenate([fallback, merged[~done]])
            if len(fallback):
                self._grow_layers(np.sort(fallback))
        self._index()

    def _fit_rows(self, centers, L):
        """Fit every patch whose elements are the rows of ``L``; returns the
        mask of well-posed rows and records their element sets."""
        space = self.space
        samp = (L @ self._td).tocsr()
        samp.sort_indices()
        lengths = np.diff(samp.indptr)
        done = np.zeros(len(centers), dtype=bool)
        k1 = space.degree + 1
        for mlen in np.unique(lengths):
            if mlen < self.nk1:
                continue
            grp = np.flatnonzero(lengths == mlen)
            for start in range(0, len(grp), 4096):
                g = grp[start:start + 4096]
                idx = _group_rows(samp, g, mlen)
                pts = space.dof_points[idx]
                d = pts[:, :, None, :] - pts[:, None, :, :]
                h = np.sqrt((d ** 2).sum(-1).max(axis=(1, 2)))
                local = (pts - space.dof_points[centers[g]][:, None, :]) / h[:, None, None]
                A = _vandermonde(local[..., 0], local[..., 1], k1)
                Q, R = np.linalg.qr(A)
                s = np.linalg.svd(R, compute_uv=False)
                with np.errstate(divide="ignore"):
                    cond = np.where(s[:, -1] > 0, s[:, 0] / s[:, -1], np.inf)
                good = cond <= COND_LIMIT
                if not good.any():
                    continue
                pinv = np.linalg.solve(R[good], np.swapaxes(Q[good], 1, 2))
                self.groups.append((centers[g[good]], idx[good], pinv, h[good]))
                done[g[good]] = True
        if done.any():
            Ld = L[np.flatnonzero(done)].tocoo()
            self._elem_rows.append(centers[done][Ld.row])
            self._elem_cols.append(Ld.col)
        return done

    def _grow_layers(self, verts):
        pending = np.asarray(verts, dtype=np.int64)
        if len(pending) == 0:
            return
        L = self._vt[pending].tocsr()
        prev_nnz = None
        for n in range(1, MAX_LAYERS + 1):
            done = self._fit_rows(pending, L)
            self.layers[pending[done]] = n
            keep = np.flatnonzero(~done)
            if len(keep) == 0:
                return
            nnz = np.diff(L.indptr)[keep]
            if prev_nnz is not None:
                stalled = nnz == prev_nnz[keep]
                if stalled.any():
                    z = pending[keep[np.flatnonzero(stalled)[0]]]
                    raise RecoveryError(
                        f"vertex {z}: patch covers the whole mesh and is still ill-posed")
            pending = pending[keep]
            L = L[keep]
            prev_nnz = nnz
            L = (L @ self._grow).tocsr()
            L.data[:] = 1
        raise RecoveryError(
            f"vertex {pending[0]}: no well-posed patch within {MAX_LAYERS} layers "
            "(mesh too coarse or degenerate)")

    def _index(self):
        nv = self.space.mesh.n_vertices
        self.group_of = np.full(nv, -1, dtype=np.int64)
        self.pos_of = np.full(nv, -1, dtype=np.int64)
        for gi, (verts, *_rest) in enumerate(self.groups):
            self.group_of[verts] = gi
            self.pos_of[verts] = np.arange(len(verts))
        if np.any(self.group_of < 0):
            z = int(np.flatnonzero(self.group_of < 0)[0])
            raise RecoveryError(f"vertex {z} received no patch")

    def sampling(self, z):
        g = self.groups[self.group_of[z]]
        return g[1][self.pos_of[z]]


# --------------------------------------------------------------------------
# differentiation matrices

@dataclass(frozen=True)
class DiffMatrices:
    """Sparse first-order differentiation matrices (n_dofs x n_dofs)."""

    bx: sparse.csr_matrix
    by: sparse.csr_matrix
    layers: np.ndarray = field(repr=False, default=None)

    def write(self, prefix):
        """Write ``<prefix>_bx.mtx`` and ``<prefix>_by.mtx``; returns the paths."""
        from scipy.io import mmwrite
        paths = [f"{prefix}_bx.mtx", f"{prefix}_by.mtx"]
        for p, m in zip(paths, (self.bx, self.by)):
            mmwrite(p, m.tocoo())
        return paths


def _drop_roundoff(B):
    """Remove entries at round-off level relative to their row maximum, so
    weights that vanish exactly (e.g. the centre of a symmetric stencil)
    are structural zeros."""
    rowmax = np.asarray(abs(B).max(axis=1).todense()).ravel()
    rows = np.repeat(np.arange(B.shape[0]), np.diff(B.indptr))
    B.data[np.abs(B.data) <= 64 * np.finfo(float).eps * rowmax[rows]] = 0.0
    B.eliminate_zeros()


_CACHE: "weakref.WeakKeyDictionary[FeSpace, DiffMatrices]" = weakref.WeakKeyDictionary()


def build_diff_matrices(space: FeSpace) -> DiffMatrices:
    """Assemble B_x, B_y from the pseudoinverse rows of every vertex fit.

    Vertex rows hold (a_2, a_3)/h of the fit; P2 edge-midpoint rows average
    the gradients of the two endpoint fits at the midpoint. Results are
    cached per space.
    """
    cached = _CACHE.get(space)
    if cached is not None:
        return cached
    ps = _PatchSet(space)
    nv = space.mesh.n_vertices
    k1 = space.degree + 1
    rows, cols, vx, vy = [], [], [], []
    for verts, idx, pinv, h in ps.groups:
        m = idx.shape[1]
        rows.append(np.repeat(verts, m))
        cols.append(idx.ravel())
        vx.append((pinv[:, 1] / h[:, None]).ravel())
        vy.append((pinv[:, 2] / h[:, None]).ravel())
    if space.degree == 2:
        edges = space.mesh.edges
        mids = space.dof_points[nv:]
        for end in (0, 1):
            v = edges[:, end]
            gsel = ps.group_of[v]
            order = np.argsort(gsel, kind="stable")
            bounds = np.searchsorted(gsel[order], np.arange(len(ps.groups) + 1))
            for gi, (verts, idx, pinv, h) in enumerate(ps.groups):
                e = order[bounds[gi]:bounds[gi + 1]]
                if len(e) == 0:
                    continue
                pos = ps.pos_of[v[e]]
                xi = (mids[e] - space.dof_points[v[e]]) / h[pos, None]
                dx, dy = _dmonomials(xi[:, 0], xi[:, 1], k1)
                m = idx.shape[1]
                rows.append(np.repeat(nv + e, m))
                cols.append(idx[pos].ravel())
                scale = 0.5 / h[pos, None]
                vx.append((np.einsum("en,enm->em", dx, pinv[pos]) * scale).ravel())
                vy.append((np.einsum("en,enm->em", dy, pinv[pos]) * scale).ravel())
    n = space.n_dofs
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    bx = sparse.csr_matrix((np.concatenate(vx), (r, c)), shape=(n, n))
    by = sparse.csr_matrix((np.concatenate(vy), (r, c)), shape=(n, n))
    for B in (bx, by):
        B.sum_duplicates()
        _drop_roundoff(B)
    out = DiffMatrices(bx, by, ps.layers)
    _CACHE[space] = out
    return out


# --------------------------------------------------------------------------
# recovered fields

@dataclass(frozen=True)
class VectorNodalField:
    x: NodalField
    y: NodalField

    def __post_init__(self):
        if self.x.space is not self.y.space:
            raise ValueError("components must live on the same space")

    @property
    def space(self):
        return self.x.space

    def stacked(self):
        """(n_dofs, 2) array of nodal vectors."""
        return np.column_stack([self.x.values, self.y.values])

    def local(self):
        """(M, nloc, 2) nodal vectors per element."""
        return self.stacked()[self.space.element_dofs]


@dataclass(frozen=True)
class HessianNodalField:
    xx: NodalField
    xy: NodalField
    yx: NodalField
    yy: NodalField
    symmetrized: bool = False

    def symmetrize(self):
        """Replace the mixed components by their mean."""
        if self.symmetrized:
            return self
        mixed = NodalField(self.xy.space, 0.5 * (self.xy.values + self.yx.values))
        return HessianNodalField(self.xx, mixed, mixed, self.yy, True)


def recover_gradient(space: FeSpace, field: NodalField) -> VectorNodalField:
    """PPR gradient, computed as ``(B_x u, B_y u)``."""
    if field.space is not space:
        raise ValueError("field does not live on the given space")
    B = build_diff_matrices(space)
    u = field.values
    return VectorNodalField(NodalField(space, B.bx @ u), NodalField(space, B.by @ u))


def recover_hessian(space: FeSpace, field: NodalField, symmetrize=False) -> HessianNodalField:
    """Apply the gradient recovery to each recovered gradient component:
    xx = B_x B_x u, xy = B_x B_y u, yx = B_y B_x u, yy = B_y B_y u."""
    g = recover_gradient(space, field)
    B = build_diff_matrices(space)
    gx, gy = g.x.values, g.y.values
    H = HessianNodalField(NodalField(space, B.bx @ gx), NodalField(space, B.bx @ gy),
                          NodalField(space, B.by @ gx), NodalField(space, B.by @ gy))
    return H.symmetrize() if symmetrize else H


def recover_simple_average(space: FeSpace, field: NodalField) -> VectorNodalField:
    """Area-weighted average of the elementwise gradients at every node."""
    if space.degree == 1:
        lam = np.eye(3)
    else:
        lam = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1],
                        [0, .5, .5], [.5, 0, .5], [.5, .5, 0]])
    g = field.gradients_at(lam)  # (M, nloc, 2) gradient at each local node
    area = space.mesh.areas
    dofs = space.element_dofs.ravel()
    w = np.repeat(area, space.n_local)
    den = np.bincount(dofs, w, minlength=space.n_dofs)
    gx = np.bincount(dofs, (g[..., 0] * area[:, None]).ravel(), minlength=space.n_dofs) / den
    gy = np.bincount(dofs, (g[..., 1] * area[:, None]).ravel(), minlength=space.n_dofs) / den
    return VectorNodalField(NodalField(space, gx), NodalField(space, gy))


# --------------------------------------------------------------------------
# interface recovery

@dataclass(frozen=True)
class SubSpace:
    """Restriction of a space to the elements of one region."""

    space: FeSpace
    elements: np.ndarray  # global element ids, in sub-mesh order
    dof_map: np.ndarray  # sub dof -> global dof


def sub_space(space: FeSpace, elements) -> SubSpace:
    """Space on the sub-mesh formed by ``elements`` (sorted global ids)."""
    mesh = space.mesh
    elements = np.asarray(elements, dtype=np.int64)
    tris = mesh.triangles[elements]
    used = np.unique(tris)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    sub = Mesh(mesh.points[used], remap[tris], mesh.markers[used],
               mesh.refinement_edge[elements], mesh.region[elements], mesh.domain_tag,
               mesh.generation, mesh.min_angle_floor, mesh.slit)
    V = FeSpace(sub, space.degree)
    if space.degree == 1:
        dof_map = used
    else:
        nv = mesh.n_vertices
        stride = nv
        gkeys = mesh.edges[:, 0] * stride + mesh.edges[:, 1]
        se = used[sub.edges]
        se = np.sort(se, axis=1)
        pos = np.searchsorted(gkeys, se[:, 0] * stride + se[:, 1])
        dof_map = np.concatenate([used, nv + pos])
    return SubSpace(V, elements, dof_map)


@dataclass(frozen=True)
class PiecewiseRecoveredField:
    """Recovered gradient per region; interface dofs carry one value per side."""

    space: FeSpace
    parts: dict  # region code -> (SubSpace, VectorNodalField)

    def local(self):
        """(M, nloc, 2) recovered nodal vectors, each element using its own
        region's recovery."""
        out = np.empty((self.space.mesh.n_triangles, self.space.n_local, 2))
        for sub, rec in self.parts.values():
            out[sub.elements] = rec.local()
        return out

    def at_dof(self, region, dof):
        """Recovered vector at global ``dof`` seen from ``region``."""
        sub, rec = self.parts[region]
        hit = np.flatnonzero(sub.dof_map == dof)
        if len(hit) == 0:
            raise KeyError(f"dof {dof} is not in region {region}")
        return rec.stacked()[hit[0]]


def recover_interface(space: FeSpace, field: NodalField, regions=None) -> PiecewiseRecoveredField:
    """Recover the gradient separately on each region's elements.

    ``regions`` defaults to the labels present on the mesh. A mesh without
    labels is treated as a single region, which reproduces
    :func:`recover_gradient`.
    """
    if field.space is not space:
        raise ValueError("field does not live on the given space")
    labels = space.mesh.region
    if regions is None:
        regions = sorted(set(labels.tolist()))
    parts = {}
    for r in regions:
        elems = np.flatnonzero(labels == r)
        if len(elems) == 0:
            raise RecoveryError(f"region {Region(r).name} has no elements")
        if len(elems) == space.mesh.n_triangles:
            parts[r] = (SubSpace(space, elems, np.arange(space.n_dofs)),
                        recover_gradient(space, field))
            continue
        sub = sub_space(space, elems)
        try:
            rec = recover_gradient(sub.space, NodalField(sub.space, field.values[sub.dof_map]))
        except RecoveryError as exc:
            raise RecoveryError(f"region {Region(r).name}: {exc}") from exc
        parts[r] = (sub, rec)
    return PiecewiseRecoveredField(space, parts)
