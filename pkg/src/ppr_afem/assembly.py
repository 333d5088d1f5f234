"""Galerkin assembly and solution of -div(beta grad u) = f with Dirichlet data.

beta is piecewise constant: ``beta_minus`` on elements labelled
``Region.MINUS`` and ``beta_plus`` on ``Region.PLUS``. An optional flux jump
``g`` on the interface enters the load as ``-<g, v>_Gamma``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.io import mmwrite

from .fespace import FeSpace, NodalField, basis
from .mesh import Region
from .quadrature import gauss_line, quadrature

__all__ = [
    "ProblemSpec",
    "ConvergenceError",
    "assemble",
    "apply_dirichlet",
    "solve_cg",
    "solve_problem",
    "element_beta",
    "export_matrix_market",
]

log = logging.getLogger(__name__)

CG_TOL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class ProblemSpec:
    """Data of the diffusion problem.

    Every callable takes ``(x, y, side)`` arrays, where ``side`` is the
    per-point hint from :class:`~ppr_afem.fespace.FeSpace` (region code or
    slit side), and returns an array of the same shape.
    """

    rhs: Callable
    dirichlet: Callable
    beta_minus: float = 1.0
    beta_plus: float = 1.0
    interface_flux: Optional[Callable] = None
    subdomain: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_gradient: Optional[Callable] = None

    def __post_init__(self):
        if not (self.beta_minus > 0 and self.beta_plus > 0):
            raise ValueError("diffusion coefficients must be positive")
        if self.subdomain is None and self.beta_plus != self.beta_minus:
            raise ValueError("beta_plus must equal beta_minus without a subdomain predicate")

    @property
    def has_interface(self):
        return self.subdomain is not None


def element_beta(space, problem):
    """Piecewise constant diffusion coefficient per element."""
    region = space.mesh.region
    if not problem.has_interface:
        return np.full(space.mesh.n_triangles, float(problem.beta_minus))
    if np.any(region == Region.NONE):
        bad = np.flatnonzero(region == Region.NONE)[:5]
        raise ValueError(f"elements {bad.tolist()} carry no region label")
    return np.where(region == Region.MINUS, problem.beta_minus, problem.beta_plus).astype(float)


def _scatter(space, local):
    dofs = space.element_dofs
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    n = space.n_dofs
    A = sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A


def stiffness(space, beta=None):
    rule = quadrature(2 * space.degree)
    g = space.basis_gradients(rule.points)  # (M, q, a, 2)
    g = g * np.sqrt(rule.weights)[None, :, None, None]
    X = g.transpose(0, 2, 1, 3).reshape(g.shape[0], g.shape[2], -1)
    K = X @ X.transpose(0, 2, 1)
    scale = space.mesh.areas if beta is None else space.mesh.areas * beta
    return _scatter(space, K * scale[:, None, None])


def _interface_edges(mesh):
    et = mesh.edge_triangles
    inner = np.flatnonzero(et[:, 1] >= 0)
    r = mesh.region
    jump = r[et[inner, 0]] != r[et[inner, 1]]
    return inner[jump]


def assemble(space: FeSpace, problem: ProblemSpec):
    """Return ``(A, rhs)`` before boundary conditions are applied."""
    beta = element_beta(space, problem)
    A = stiffness(space, beta)
    rule = quadrature(2 * space.degree + 2)
    pts = space.physical_points(rule.points)
    side = np.broadcast_to(space.element_sides[:, None], pts.shape[:2])
    f = np.asarray(problem.rhs(pts[..., 0], pts[..., 1], side), dtype=float)
    f = np.broadcast_to(f, pts.shape[:2])
    phi = basis(space.degree, rule.points)  # (q, a)
    Floc = np.einsum("q,mq,qa->ma", rule.weights, f, phi) * space.mesh.areas[:, None]
    rhs = np.bincount(space.element_dofs.ravel(), Floc.ravel(), minlength=space.n_dofs)
    if problem.interface_flux is not None and problem.has_interface:
        rhs -= _interface_load(space, problem.interface_flux)
    return A, rhs


def _interface_load(space, g):
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    edges = _interface_edges(mesh)
    if len(edges) == 0:
        return out
    s, w = gauss_line(3)
    tri = mesh.edge_triangles[edges, 0]
    local = np.argmax(mesh.triangle_edges[tri] == edges[:, None], axis=1)
    for e, t, i in zip(edges, tri, local):
        j, k = (i + 1) % 3, (i + 2) % 3
        lam = np.zeros((len(s), 3))
        lam[:, j] = 1 - s
        lam[:, k] = s
        p = lam @ mesh.points[mesh.triangles[t]]
        length = np.hypot(*(mesh.points[mesh.triangles[t, k]] - mesh.points[mesh.triangles[t, j]]))
        gv = np.asarray(g(p[:, 0], p[:, 1], np.zeros(len(s), np.int8)), dtype=float)
        contrib = (w * gv) @ basis(space.degree, lam) * length
        np.add.at(out, space.element_dofs[t], contrib)
    return out


def apply_dirichlet(A, rhs, space, g):
    """Eliminate boundary and slit dofs symmetrically.

    Constrained rows and columns are replaced by the identity and the
    right-hand side carries the prescribed values.
    """
    bd = space.boundary_dofs
    x, y = space.dof_points[bd, 0], space.dof_points[bd, 1]
    gvals = np.asarray(g(x, y, space.dof_sides[bd]), dtype=float)
    gvals = np.broadcast_to(gvals, bd.shape)
    if not np.all(np.isfinite(gvals)):
        raise ValueError("Dirichlet data is not finite at a boundary dof")
    n = A.shape[0]
    ubd = np.zeros(n)
    ubd[bd] = gvals
    fixed = np.zeros(n, dtype=bool)
    fixed[bd] = True
    rhs2 = rhs - A @ ubd
    rhs2[bd] = gvals
    keep = sparse.diags((~fixed).astype(float))
    A2 = (keep @ A @ keep + sparse.diags(fixed.astype(float))).tocsr()
    A2.eliminate_zeros()
    return A2, rhs2


def solve_cg(A, b, tol=CG_TOL, max_iter=None, x0=None, return_info=False):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``|A x - b| <= tol |b|``. Raises :class:`ConvergenceError`
    with the residual reached if ``max_iter`` is exceeded.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = max(10 * n, 1000)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, {"iterations": 0, "residual": 0.0}) if return_info else x
    dinv = 1.0 / A.diagonal()
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    it = 0
    if rel > tol:
        z = dinv * r
        p = z.copy()
        rz = r @ z
        while True:
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rel = np.linalg.norm(r) / bnorm
            if rel <= tol:
                break
            if it >= max_iter:
                raise ConvergenceError(
                    f"CG did not converge in {it} iterations (relative residual {rel:.3e})",
                    rel, it)
            z = dinv * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
        # guard against drift of the recursive residual
        rel = np.linalg.norm(b - A @ x) / bnorm
    log.debug("CG: %d iterations, relative residual %.3e", it, rel)
    if return_info:
        return x, {"iterations": it, "residual": rel}
    return x


def solve_problem(space, problem, tol=CG_TOL, x0=None):
    """Assemble, constrain and solve; returns the discrete solution."""
    A, rhs = assemble(space, problem)
    A2, rhs2 = apply_dirichlet(A, rhs, space, problem.dirichlet)
    u = solve_cg(A2, rhs2, tol=tol, x0=x0)
    return NodalField(space, u)


def export_matrix_market(A, target):
    """Write a sparse matrix as MatrixMarket coordinate text."""
    mmwrite(target, sparse.coo_matrix(A))
