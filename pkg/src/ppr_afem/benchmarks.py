"""Benchmark problems with known solutions and exact error evaluation.

``crack``
    -Δu = 1 on (-1, 1)^2 cut along {(x, 0): 0 <= x <= 1},
    u = sqrt(2)/2 sqrt(r - x) - r^2/4.
``wavefront``
    unit square, u = arctan(a (r - r0)) about (-0.05, -0.05), r0 = 0.7, a = 50.
``gaussian``
    unit square, two Gaussian bumps centred at (0.25, 0.25) and (0.75, 0.75)
    with standard deviation sqrt(1e-3).
``kellogg_quadrant``
    -div(beta grad u) = 0 on (-1, 1)^2 with beta = ratio on the quadrant
    {x > 0, y > 0} and 1 elsewhere; u = r^mu (cos(mu (theta - pi/4)) in the
    quadrant, nu cos(mu (theta - 5 pi/4)) outside).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import ProblemSpec, element_beta
from .fespace import FeSpace, NodalField, basis
from .mesh import Region, generate_crack_domain, generate_uniform
from .quadrature import quadrature

__all__ = [
    "CATALOG",
    "BenchmarkProblem",
    "catalog",
    "kellogg_exponents",
    "exact_errors",
    "sample_grid_csv",
]

CATALOG = ("crack", "wavefront", "gaussian", "kellogg_quadrant")

ERROR_QUADRATURE = 8


@dataclass
class BenchmarkProblem:
    name: str
    domain_tag: str
    spec: ProblemSpec
    degree: int
    mesh_factory: Callable = field(repr=False)
    side_aware: bool = False
    params: dict = field(default_factory=dict)

    def initial_mesh(self):
        return self.mesh_factory()


# --------------------------------------------------------------------------
# crack

_S2 = math.sqrt(2.0) / 2.0


def _crack_s(x, y):
    """sqrt(r - x) without cancellation for x > 0."""
    r = np.hypot(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(x > 0, np.abs(y) / np.sqrt(r + np.where(x > 0, x, 0.0)),
                     np.sqrt(r - np.minimum(x, 0.0)))
    return r, s


def crack_u(x, y, side=0):
    x, y = np.asarray(x, float), np.asarray(y, float)
    r, s = _crack_s(x, y)
    return _S2 * s - 0.25 * r * r


def crack_grad(x, y, side=0):
    """Gradient; on the slit the side hint (+1 upper, -1 lower) picks the trace."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    side = np.broadcast_to(np.asarray(side), x.shape)
    r, s = _crack_s(x, y)
    sgn = np.where(y != 0, np.sign(y), np.where(side != 0, np.sign(side), 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        y_over_s = np.where(x > 0, sgn * np.sqrt(r + np.maximum(x, 0.0)), y / s)
        gx = -_S2 * s / (2 * r) - 0.5 * x
        gy = _S2 * y_over_s / (2 * r) - 0.5 * y
    return gx, gy


def _crack():
    spec = ProblemSpec(
        rhs=lambda x, y, side: np.ones_like(x, dtype=float),
        dirichlet=crack_u,
        exact=crack_u,
        exact_gradient=crack_grad,
    )
    return BenchmarkProblem("crack", "crack_square", spec, 1,
                            lambda: generate_crack_domain(4), side_aware=True)


# --------------------------------------------------------------------------
# wavefront

def _wavefront(r0=0.7, a=50.0, center=(-0.05, -0.05)):
    x0, y0 = center

    def radial(x, y):
        return np.hypot(x - x0, y - y0)

    def u(x, y, side=0):
        return np.arctan(a * (radial(x, y) - r0))

    def du(r):
        return a / (1 + (a * (r - r0)) ** 2)

    def grad(x, y, side=0):
        r = radial(x, y)
        d = du(r) / r
        return d * (x - x0), d * (y - y0)

    def rhs(x, y, side=0):
        r = radial(x, y)
        t = a * (r - r0)
        d2 = -2 * a ** 3 * (r - r0) / (1 + t * t) ** 2
        return -(d2 + du(r) / r)

    spec = ProblemSpec(rhs=rhs, dirichlet=u, exact=u, exact_gradient=grad)
    return BenchmarkProblem("wavefront", "unit_square", spec, 2,
                            lambda: generate_uniform("regular", 4, domain_tag="unit_square"),
                            params={"r0": r0, "a": a, "center": center})


# --------------------------------------------------------------------------
# gaussian

def _gaussian(sigma=math.sqrt(1e-3), mu1=0.25, mu2=0.75):
    amp = 1.0 / (2 * math.pi * sigma)
    centers = ((mu1, mu1), (mu2, mu2))

    def bumps(x, y):
        for cx, cy in centers:
            dx, dy = x - cx, y - cy
            yield dx, dy, amp * np.exp(-0.5 * (dx * dx + dy * dy) / sigma ** 2)

    def u(x, y, side=0):
        return sum(g for _, _, g in bumps(x, y))

    def grad(x, y, side=0):
        gx = sum(-dx / sigma ** 2 * g for dx, _, g in bumps(x, y))
        gy = sum(-dy / sigma ** 2 * g for _, dy, g in bumps(x, y))
        return gx, gy

    def rhs(x, y, side=0):
        return -sum(g * ((dx * dx + dy * dy) / sigma ** 4 - 2 / sigma ** 2)
                    for dx, dy, g in bumps(x, y))

    spec = ProblemSpec(rhs=rhs, dirichlet=u, exact=u, exact_gradient=grad)
    return BenchmarkProblem("gaussian", "unit_square", spec, 2,
                            lambda: generate_uniform("regular", 4, domain_tag="unit_square"),
                            params={"sigma": sigma, "centers": centers})


# --------------------------------------------------------------------------
# kellogg quadrant

def kellogg_exponents(ratio):
    """Singular exponent mu and amplitude nu for coefficient ``ratio`` on the
    quadrant and 1 outside.

    Continuity and flux balance on the rays theta = 0 and theta = pi/2 give
    tan(3 mu pi/4) = -ratio tan(mu pi/4), whose smallest positive root is
    mu = (4/pi) arctan(sqrt((3 + ratio) / (1 + 3 ratio))).
    """
    if not ratio > 0:
        raise ValueError("coefficient ratio must be positive")
    mu = 4.0 / math.pi * math.atan(math.sqrt((3.0 + ratio) / (1.0 + 3.0 * ratio)))
    nu = -ratio * math.sin(mu * math.pi / 4) / math.sin(3 * mu * math.pi / 4)
    return mu, nu


def _kellogg_branches(x, y, side):
    """Angle in [0, 2 pi) and a mask selecting the quadrant branch."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    side = np.broadcast_to(np.asarray(side), theta.shape)
    inside = (x >= 0) & (y >= 0)
    minus = np.where(side == Region.MINUS, True, np.where(side == Region.PLUS, False, inside))
    # a point on the ray theta = 0 seen from outside the quadrant sits at 2 pi
    theta = np.where(~minus & (theta < np.pi / 4), theta + 2 * np.pi, theta)
    return np.hypot(x, y), theta, minus


def _kellogg(ratio=1000.0):
    mu, nu = kellogg_exponents(ratio)

    def phase(theta, minus):
        return np.where(minus, mu * (theta - np.pi / 4), mu * (theta - 5 * np.pi / 4))

    def u(x, y, side=0):
        r, theta, minus = _kellogg_branches(x, y, side)
        return np.where(minus, 1.0, nu) * r ** mu * np.cos(phase(theta, minus))

    def grad(x, y, side=0):
        r, theta, minus = _kellogg_branches(x, y, side)
        phi = phase(theta, minus)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(minus, 1.0, nu) * mu * r ** (mu - 1)
        return c * np.cos(phi - theta), c * np.sin(theta - phi)

    def subdomain(x, y):
        return np.where((x > 0) & (y > 0), Region.MINUS, Region.PLUS)

    spec = ProblemSpec(
        rhs=lambda x, y, side: np.zeros_like(x, dtype=float),
        dirichlet=u,
        beta_minus=float(ratio),
        beta_plus=1.0,
        subdomain=subdomain,
        exact=u,
        exact_gradient=grad,
    )
    factory = lambda: generate_uniform("regular", 4, (-1.0, 1.0, -1.0, 1.0),  # noqa: E731
                                       region_of=subdomain, domain_tag="square")
    return BenchmarkProblem("kellogg_quadrant", "square", spec, 1, factory,
                            params={"ratio": float(ratio), "mu": mu, "nu": nu})


_BUILDERS = {
    "crack": _crack,
    "wavefront": _wavefront,
    "gaussian": _gaussian,
    "kellogg_quadrant": _kellogg,
}


def catalog(name, **params) -> BenchmarkProblem:
    """Fully populated benchmark ``name``; keyword ``params`` override
    problem constants (``ratio`` for kellogg_quadrant, ``a``/``r0`` for
    wavefront, ``sigma`` for gaussian)."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(CATALOG)}") from None
    return builder(**params)


# --------------------------------------------------------------------------
# errors

def _spec(problem):
    return problem.spec if isinstance(problem, BenchmarkProblem) else problem


def exact_errors(space: FeSpace, u_h: NodalField, problem, recovered=None):
    """Energy error ||grad u - grad u_h|| and recovered error
    ||grad u - G_h u_h|| (``None`` without ``recovered``).

    Both are evaluated elementwise with quadrature of exactness 8 and are
    weighted by beta^(1/2) for interface problems.
    """
    spec = _spec(problem)
    if spec.exact_gradient is None:
        raise ValueError("problem has no exact gradient")
    rule = quadrature(ERROR_QUADRATURE)
    pts = space.physical_points(rule.points)
    side = np.broadcast_to(space.element_sides[:, None], pts.shape[:2])
    gx, gy = spec.exact_gradient(pts[..., 0], pts[..., 1], side)
    exact = np.stack([np.broadcast_to(gx, pts.shape[:2]),
                      np.broadcast_to(gy, pts.shape[:2])], axis=-1)
    weight = space.mesh.areas
    if spec.has_interface:
        weight = weight * element_beta(space, spec)
    gh = u_h.gradients_at(rule.points)
    energy = math.sqrt(float(np.einsum("q,mq,m->", rule.weights,
                                       ((exact - gh) ** 2).sum(-1), weight)))
    if recovered is None:
        return energy, None
    phi = basis(space.degree, rule.points)
    rec = np.einsum("qa,mad->mqd", phi, recovered.local())
    rec_err = math.sqrt(float(np.einsum("q,mq,m->", rule.weights,
                                        ((exact - rec) ** 2).sum(-1), weight)))
    return energy, rec_err


def sample_grid_csv(problem, n=64, fh=None):
    """Exact solution on an (n+1) x (n+1) grid over the problem's bounding
    box as ``x,y,u`` rows (17 significant digits)."""
    spec = _spec(problem)
    tag = problem.domain_tag if isinstance(problem, BenchmarkProblem) else "unit_square"
    lo, hi = (0.0, 1.0) if tag == "unit_square" else (-1.0, 1.0)
    t = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(t, t)
    U = np.broadcast_to(spec.exact(X.ravel(), Y.ravel(), np.zeros(X.size, np.int8)), (X.size,))
    out = io.StringIO() if fh is None else fh
    out.write("x,y,u\n")
    for x, y, v in zip(X.ravel().tolist(), Y.ravel().tolist(), U.tolist()):
        out.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    return out.getvalue() if fh is None else None
