"""Continuous Lagrange P1/P2 spaces on triangle meshes.

Dofs are numbered vertices first (mesh order), then edge midpoints in the
order of ``mesh.edges``. Local P2 dofs are the three vertices followed by the
midpoints of the edges opposite local vertices 0, 1 and 2.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh, VertexMarker, _midpoint_markers
from .quadrature import quadrature

__all__ = [
    "FeSpace",
    "NodalField",
    "interpolate",
    "evaluate",
    "basis",
    "basis_dlam",
    "write_field_csv",
    "read_field_csv",
    "VERTEX",
    "EDGE",
]

VERTEX = 0
EDGE = 1


def basis(degree, lam):
    """Shape function values at barycentric points ``lam`` (n x 3) -> (n, nloc)."""
    lam = np.atleast_2d(lam)
    if degree == 1:
        return lam.copy()
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    return np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ])


def basis_dlam(degree, lam):
    """Derivatives of the shape functions with respect to the barycentric
    coordinates: (n, nloc, 3)."""
    lam = np.atleast_2d(lam)
    n = len(lam)
    if degree == 1:
        return np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    out = np.zeros((n, 6, 3))
    for i in range(3):
        out[:, i, i] = 4 * lam[:, i] - 1
        j, k = (i + 1) % 3, (i + 2) % 3
        out[:, 3 + i, j] = 4 * lam[:, k]
        out[:, 3 + i, k] = 4 * lam[:, j]
    return out


class FeSpace:
    """Lagrange space of degree 1 or 2 on ``mesh``."""

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree not in (1, 2):
            raise ValueError("only P1 and P2 are supported")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.n_vertices
        if degree == 1:
            self.dof_points = mesh.points
            self.dof_kind = np.zeros(nv, dtype=np.int8)
            self.dof_markers = mesh.markers
            self.element_dofs = mesh.triangles
        else:
            edges = mesh.edges
            mids = 0.5 * (mesh.points[edges[:, 0]] + mesh.points[edges[:, 1]])
            self.dof_points = np.vstack([mesh.points, mids])
            self.dof_kind = np.concatenate([np.zeros(nv, np.int8), np.ones(len(edges), np.int8)])
            self.dof_markers = np.concatenate(
                [mesh.markers, _midpoint_markers(mesh, np.arange(len(edges)))])
            self.element_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        for arr in (self.dof_points, self.dof_kind, self.dof_markers, self.element_dofs):
            arr.setflags(write=False)

    def __repr__(self):
        return f"FeSpace(P{self.degree}, {self.n_dofs} dofs, {self.mesh!r})"

    @property
    def n_dofs(self):
        return len(self.dof_points)

    @property
    def n_local(self):
        return 3 if self.degree == 1 else 6

    @cached_property
    def boundary_dofs(self):
        """Indices of dofs on boundary or slit edges."""
        mesh = self.mesh
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[:mesh.n_vertices] = mesh.boundary_vertices
        if self.degree == 2:
            mask[mesh.n_vertices + mesh.boundary_edges] = True
        return np.flatnonzero(mask)

    @cached_property
    def dof_sides(self):
        """Side hint per dof: +1 on the upper slit copy, -1 on the lower, 0 else."""
        side = np.zeros(self.n_dofs, dtype=np.int8)
        side[self.dof_markers == VertexMarker.SLIT_UPPER] = 1
        side[self.dof_markers == VertexMarker.SLIT_LOWER] = -1
        return side

    @cached_property
    def element_sides(self):
        """Side hint per element: the region code when regions are labelled,
        otherwise the sign of the barycenter's y on slit domains, else 0."""
        mesh = self.mesh
        if np.any(mesh.region):
            return mesh.region.astype(np.int8)
        if mesh.slit is not None:
            return np.sign(mesh.barycenters[:, 1]).astype(np.int8)
        return np.zeros(mesh.n_triangles, dtype=np.int8)

    @cached_property
    def lambda_gradients(self):
        """Gradients of the barycentric coordinates, (M, 3, 2)."""
        p = self.mesh.points[self.mesh.triangles]
        area2 = 2.0 * self.mesh.areas
        g = np.empty((self.mesh.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        return g

    def physical_points(self, lam):
        """Map barycentric points (n x 3) to every element: (M, n, 2)."""
        p = self.mesh.points[self.mesh.triangles]
        return np.atleast_2d(lam) @ p

    def basis_gradients(self, lam):
        """Physical gradients of the local shape functions: (M, n, nloc, 2)."""
        d = basis_dlam(self.degree, lam)
        q, a, _ = d.shape
        g = d.reshape(q * a, 3) @ self.lambda_gradients
        return g.reshape(-1, q, a, 2)


@dataclass(frozen=True)
class NodalField:
    """Finite element function given by its dof coefficients."""

    space: FeSpace
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field coefficients must be finite")
        object.__setattr__(self, "values", vals)

    def __mul__(self, alpha):
        return NodalField(self.space, alpha * self.values)

    __rmul__ = __mul__

    def local(self):
        """(M, nloc) coefficients per element."""
        return self.values[self.space.element_dofs]

    def values_at(self, lam):
        """Values at barycentric points on every element: (M, n)."""
        return self.local() @ basis(self.space.degree, lam).T

    def gradients_at(self, lam):
        """Elementwise gradients at barycentric points: (M, n, 2)."""
        d = basis_dlam(self.space.degree, lam)  # (q, a, 3)
        w = np.tensordot(self.local(), d, axes=([1], [1]))  # (M, q, 3)
        return w @ self.space.lambda_gradients


def interpolate(space, f, side_aware=False):
    """Nodal interpolant of ``f``.

    ``f`` is called with coordinate arrays ``(x, y)``; with ``side_aware`` it
    also receives the per-dof side hint (+1 upper slit, -1 lower slit, 0).
    """
    x, y = space.dof_points[:, 0], space.dof_points[:, 1]
    vals = f(x, y, space.dof_sides) if side_aware else f(x, y)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (space.n_dofs,)).copy()
    if not np.all(np.isfinite(vals)):
        bad = np.flatnonzero(~np.isfinite(vals))[:5]
        raise ValueError(f"interpolated function is not finite at dofs {bad.tolist()}")
    return NodalField(space, vals)


def evaluate(field, triangle, lam):
    """Value and (elementwise) gradient of ``field`` at one barycentric point."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (3,) or np.any(lam < -1e-14) or abs(lam.sum() - 1.0) > 1e-12:
        raise ValueError(f"invalid barycentric point {lam.tolist()}")
    space = field.space
    if not 0 <= triangle < space.mesh.n_triangles:
        raise ValueError(f"unknown triangle {triangle}")
    coeff = field.values[space.element_dofs[triangle]]
    value = float(basis(space.degree, lam[None])[0] @ coeff)
    d = basis_dlam(space.degree, lam[None])[0]
    grad = coeff @ (d @ space.lambda_gradients[triangle])
    return value, grad


def integrate(space, integrand, degree):
    """Elementwise integrals of ``integrand(points (M,n,2), lam) -> (M, n)``."""
    rule = quadrature(degree)
    pts = space.physical_points(rule.points)
    vals = integrand(pts, rule.points)
    return (vals @ rule.weights) * space.mesh.areas


def write_field_csv(field, fh=None):
    """Write ``dof,x,y,value`` rows with 17 significant digits.

    Returns the text when ``fh`` is None.
    """
    out = io.StringIO() if fh is None else fh
    out.write("dof,x,y,value\n")
    for i, ((x, y), v) in enumerate(zip(field.space.dof_points.tolist(), field.values.tolist())):
        out.write(f"{i},{x:.17g},{y:.17g},{v:.17g}\n")
    if fh is None:
        return out.getvalue()
    return None


def read_field_csv(space, text):
    """Parse a ``dof,x,y,value`` CSV into a :class:`NodalField` on ``space``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["dof", "x", "y", "value"]:
        raise ValueError("field CSV must start with header dof,x,y,value")
    body = [r for r in rows[1:] if r]
    if len(body) != space.n_dofs:
        raise ValueError(f"field CSV has {len(body)} rows but the space has {space.n_dofs} dofs")
    vals = np.full(space.n_dofs, np.nan)
    for r in body:
        try:
            i, v = int(r[0]), float(r[3])
        except (ValueError, IndexError):
            raise ValueError(f"malformed field row: {','.join(r)}") from None
        if not 0 <= i < space.n_dofs:
            raise ValueError(f"dof id {i} out of range")
        vals[i] = v
    if np.any(np.isnan(vals)):
        raise ValueError("field CSV does not cover every dof")
    return NodalField(space, vals)
