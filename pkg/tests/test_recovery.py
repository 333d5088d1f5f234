import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import io as spio

from ppr_afem.benchmarks import catalog
from ppr_afem.fespace import FeSpace, NodalField, basis, interpolate
from ppr_afem.mesh import Mesh, Region, bisect, generate_crack_domain, generate_uniform
from ppr_afem.quadrature import quadrature
from ppr_afem.recovery import (
    RecoveryError, build_diff_matrices, build_layers, build_patch, fit_local,
    monomial_exponents, point_weights, recover_at_node, recover_gradient, recover_hessian,
    recover_interface, recover_simple_average, scaled_pseudoinverse,
)

EXAMPLE1 = np.array([
    [6, 0, 0, 0, 0, 0, 0],
    [0, 2, 1, -1, -2, -1, 1],
    [0, -1, 1, 2, 1, -1, -2],
    [-6, 3, 0, 0, 3, 0, 0],
    [6, -3, 3, -3, -3, 3, -3],
    [-6, 0, 0, 3, 0, 0, 3],
]) / 6


def perturbed(pattern="regular", n=6, seed=0, amount=0.15):
    m = generate_uniform(pattern, n)
    shift = np.random.default_rng(seed).uniform(-amount, amount, m.points.shape) / n
    shift[m.markers != 0] = 0
    return Mesh(m.points + shift, m.triangles, m.markers)


def vertex_at(mesh, x, y):
    return int(np.flatnonzero((np.abs(mesh.points[:, 0] - x) < 1e-12)
                              & (np.abs(mesh.points[:, 1] - y) < 1e-12))[0])


def random_poly(degree, rng):
    c = rng.standard_normal(len(monomial_exponents(degree)))
    exps = monomial_exponents(degree)

    def f(x, y):
        return sum(ci * x ** a * y ** b for ci, (a, b) in zip(c, exps))

    def grad(x, y):
        gx = sum(ci * a * x ** max(a - 1, 0) * y ** b for ci, (a, b) in zip(c, exps))
        gy = sum(ci * b * x ** a * y ** max(b - 1, 0) for ci, (a, b) in zip(c, exps))
        return gx, gy

    return f, grad


# -- layers and patches -------------------------------------------------------

def test_layers_regular_star():
    m = generate_uniform("regular", 4)
    z = vertex_at(m, 0.5, 0.5)
    assert len(build_layers(m, z, 1)) == 6
    assert len(build_layers(m, z, 0)) == 0
    two = build_layers(m, z, 2)
    assert set(build_layers(m, z, 1)) < set(two)


def test_layers_valence_four():
    # the union-jack pattern has interior vertices of valence 4
    m = generate_uniform("unionjack", 4)
    z = vertex_at(m, 0.25, 0.5)
    assert len(build_layers(m, z, 1)) == 4


def test_layers_reject_negative():
    with pytest.raises(ValueError):
        build_layers(generate_uniform("regular", 2), 0, -1)


def test_interior_regular_patch_p1():
    V = FeSpace(generate_uniform("regular", 4), 1)
    p = build_patch(V, vertex_at(V.mesh, 0.5, 0.5))
    assert len(p.sampling) == 7 and p.layers == 1 and p.kind == "interior_vertex"
    assert p.diameter == pytest.approx(2 * math.sqrt(2) / 4)


def test_valence_four_grows():
    V = FeSpace(generate_uniform("unionjack", 4), 1)
    p = build_patch(V, vertex_at(V.mesh, 0.25, 0.5))
    assert len(np.unique(V.element_dofs[build_layers(V.mesh, p.center, 1)])) == 5
    assert p.layers == 2 and len(p.sampling) >= 6


def test_corner_patch_is_union():
    V = FeSpace(generate_uniform("regular", 4), 1)
    corner = vertex_at(V.mesh, 0.0, 0.0)
    p = build_patch(V, corner)
    inner = build_patch(V, vertex_at(V.mesh, 0.25, 0.25))
    assert p.kind == "boundary_vertex"
    assert np.array_equal(p.elements, inner.elements)


@pytest.mark.parametrize("degree", [1, 2])
def test_patch_invariants(degree):
    V = FeSpace(perturbed("crisscross", 4), degree)
    nk1 = (degree + 2) * (degree + 3) // 2
    for z in range(V.mesh.n_vertices):
        p = build_patch(V, z)
        assert len(p.sampling) >= nk1
        local = (V.dof_points[p.sampling] - V.dof_points[z]) / p.diameter
        _, cond = scaled_pseudoinverse(local, degree + 1)
        assert cond <= 1e8
        if p.kind == "interior_vertex":
            assert set(p.elements) <= set(build_layers(V.mesh, z, p.layers))


def test_patch_rejects_edge_dof():
    V = FeSpace(generate_uniform("regular", 2), 2)
    with pytest.raises(ValueError):
        build_patch(V, V.n_dofs - 1)


def test_too_coarse_mesh_fails():
    with pytest.raises(RecoveryError):
        build_diff_matrices(FeSpace(generate_uniform("regular", 1), 2))


def test_slit_patches_stay_on_their_side():
    V = FeSpace(generate_crack_domain(4), 1)
    m = V.mesh
    for z in np.flatnonzero(V.dof_sides != 0):
        p = build_patch(V, int(z))
        side = np.sign(m.barycenters[p.elements, 1])
        assert np.all(side == V.dof_sides[z])


# -- fitting ------------------------------------------------------------------

def test_example_pseudoinverse():
    xi = [0, 1, 1, 0, -1, -1, 0]
    eta = [0, 0, 1, 1, 0, -1, -1]
    pinv, cond = scaled_pseudoinverse(np.column_stack([xi, eta]), 2)
    assert np.abs(pinv - EXAMPLE1).max() <= 1e-12
    assert cond < 1e8


def test_underdetermined_fit():
    pinv, cond = scaled_pseudoinverse(np.zeros((3, 2)), 2)
    assert pinv is None and cond == np.inf


def test_constant_fit():
    V = FeSpace(perturbed(), 1)
    p = build_patch(V, 20)
    fit = fit_local(V, p, np.full(len(p.sampling), 2.5))
    assert np.allclose(fit.coefficients, [2.5, 0, 0, 0, 0, 0], atol=1e-12)


def test_fit_matches_dense_lstsq():
    V = FeSpace(perturbed(seed=4), 1)
    z = 17
    p = build_patch(V, z)
    x, y = V.dof_points[p.sampling].T
    fit = fit_local(V, p, x ** 2 + y)
    h, (cx, cy) = p.diameter, V.dof_points[z]
    # x^2 + y in scaled coordinates
    expect = np.array([cx ** 2 + cy, 2 * cx * h, h, h * h, 0, 0])
    xi = (V.dof_points[p.sampling] - V.dof_points[z]) / h
    A = np.column_stack([xi[:, 0] ** a * xi[:, 1] ** b for a, b in monomial_exponents(2)])
    oracle = np.linalg.lstsq(A, x ** 2 + y, rcond=None)[0]
    assert np.abs(fit.coefficients - expect).max() <= 1e-10
    assert np.abs(fit.coefficients - oracle).max() <= 1e-10
    assert np.allclose(fit.gradient(), [2 * cx, 1.0])
    assert fit.value(V.dof_points[z]) == pytest.approx(cx ** 2 + cy)


def test_fit_rejects_bad_values():
    V = FeSpace(perturbed(), 1)
    p = build_patch(V, 20)
    with pytest.raises(ValueError):
        fit_local(V, p, np.ones(3))
    with pytest.raises(ValueError):
        fit_local(V, p, np.full(len(p.sampling), np.inf))


def test_point_weights():
    assert np.allclose(point_weights([0.5, 0], [[0, 0], [1, 0]]), [0.5, 0.5])
    assert np.allclose(point_weights([0.25, 0], [[0, 0], [1, 0]]), [0.75, 0.25])
    assert np.allclose(point_weights([1 / 3, 1 / 3], [[0, 0], [1, 0], [0, 1]]), [1 / 3] * 3)
    with pytest.raises(ValueError):
        point_weights([0, 0], [[0, 0]])


def test_recover_at_synthetic_nodes():
    V = FeSpace(perturbed(seed=2), 1)
    f, grad = random_poly(2, np.random.default_rng(0))
    u = interpolate(V, f)
    t = 25
    verts = V.mesh.triangles[t]
    fits = [fit_local(V, p, u.values[p.sampling]) for p in (build_patch(V, int(v)) for v in verts)]
    pts = V.mesh.points[verts]
    for q, idx in ((pts.mean(axis=0), [0, 1, 2]), (0.3 * pts[0] + 0.7 * pts[1], [0, 1])):
        g = recover_at_node([fits[i] for i in idx], q, pts[idx])
        assert np.allclose(g, grad(*q), atol=1e-10)


# -- stencils -----------------------------------------------------------------

def stencil(B, V, z, h):
    row = B.getrow(z)
    off = np.round((V.dof_points[row.indices] - V.dof_points[z]) / h).astype(int)
    return {tuple(o): v for o, v in zip(off.tolist(), row.data)}


def test_regular_stencil():
    n = 8
    h = 1 / n
    V = FeSpace(generate_uniform("regular", n), 1)
    B = build_diff_matrices(V)
    z = vertex_at(V.mesh, 0.5, 0.5)
    # u1..u6 at offsets (1,0), (1,1), (0,1), (-1,0), (-1,-1), (0,-1)
    offs = [(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)]
    wx, wy = [2, 1, -1, -2, -1, 1], [-1, 1, 2, 1, -1, -2]
    sx, sy = stencil(B.bx, V, z, h), stencil(B.by, V, z, h)
    for o, a, b in zip(offs, wx, wy):
        assert abs(sx[o] * 6 * h - a) <= 1e-12 and abs(sy[o] * 6 * h - b) <= 1e-12
    assert B.bx.getrow(z).nnz == 6 and B.by.getrow(z).nnz == 6
    assert np.count_nonzero(np.abs(B.bx.getrow(z).data) > 1e-12) == 6


def test_matrix_path_equals_operator_path():
    V = FeSpace(generate_uniform("regular", 2), 1)
    u = NodalField(V, np.random.default_rng(0).standard_normal(V.n_dofs))
    g = recover_gradient(V, u)
    B = build_diff_matrices(V)
    assert np.array_equal(g.x.values, B.bx @ u.values)
    assert np.array_equal(g.y.values, B.by @ u.values)
    # and the per-vertex oracle
    for z in range(V.mesh.n_vertices):
        p = build_patch(V, z)
        assert np.allclose(fit_local(V, p, u.values[p.sampling]).gradient(),
                           [g.x.values[z], g.y.values[z]], atol=1e-13)


@pytest.mark.parametrize("degree", [1, 2])
def test_constants_in_kernel(degree):
    B = build_diff_matrices(FeSpace(perturbed(), degree))
    one = np.ones(B.bx.shape[0])
    assert np.abs(B.bx @ one).max() <= 1e-12 and np.abs(B.by @ one).max() <= 1e-12


def test_matrices_cached_and_written(tmp_path):
    V = FeSpace(generate_uniform("regular", 4), 1)
    B = build_diff_matrices(V)
    assert build_diff_matrices(V) is B
    px, py = B.write(str(tmp_path / "d"))
    assert abs(spio.mmread(px).tocsr() - B.bx).max() == 0
    assert abs(spio.mmread(py).tocsr() - B.by).max() == 0


# -- preservation and consistency ---------------------------------------------

@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["regular", "chevron", "crisscross", "unionjack"]),
       st.sampled_from([1, 2]))
def test_gradient_preserves_polynomials(seed, pattern, degree):
    rng = np.random.default_rng(seed)
    V = FeSpace(perturbed(pattern, 5, seed=seed % 97), degree)
    f, grad = random_poly(degree + 1, rng)
    g = recover_gradient(V, interpolate(V, f))
    gx, gy = grad(*V.dof_points.T)
    scale = max(np.abs(gx).max(), np.abs(gy).max(), 1.0)
    assert np.abs(g.x.values - gx).max() <= 1e-9 * scale
    assert np.abs(g.y.values - gy).max() <= 1e-9 * scale


@pytest.mark.parametrize("degree", [1, 2])
def test_hessian_preserves_polynomials(degree):
    rng = np.random.default_rng(5)
    V = FeSpace(perturbed("regular", 6, seed=1), degree)
    c = rng.standard_normal(6)
    f = lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    H = recover_hessian(V, interpolate(V, f))
    for comp, exact in ((H.xx, 2 * c[3]), (H.xy, c[4]), (H.yx, c[4]), (H.yy, 2 * c[5])):
        assert np.abs(comp.values - exact).max() <= 1e-8 * np.abs(c).max()


def test_symmetrize_bitwise_and_idempotent():
    V = FeSpace(perturbed(), 2)
    u = NodalField(V, np.random.default_rng(0).standard_normal(V.n_dofs))
    H = recover_hessian(V, u, symmetrize=True)
    assert H.symmetrized and np.array_equal(H.xy.values, H.yx.values)
    assert H.symmetrize() is H
    raw = recover_hessian(V, u)
    assert not np.array_equal(raw.xy.values, raw.yx.values)
    assert np.array_equal(raw.symmetrize().xy.values, 0.5 * (raw.xy.values + raw.yx.values))


@settings(max_examples=15, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(0, 100))
def test_linearity(alpha, seed):
    V = FeSpace(perturbed(n=4), 1)
    u = NodalField(V, np.random.default_rng(seed).standard_normal(V.n_dofs))
    a = recover_gradient(V, alpha * u)
    b = recover_gradient(V, u)
    assert np.allclose(a.x.values, alpha * b.x.values, rtol=1e-12, atol=1e-12 * (1 + abs(alpha)))


def test_boundedness():
    V = FeSpace(perturbed("crisscross", 6, seed=3), 1)
    m = V.mesh
    rule = quadrature(4)
    phi = basis(1, rule.points)
    patches = [build_patch(V, z).elements for z in range(m.n_vertices)]
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        u = NodalField(V, rng.standard_normal(V.n_dofs))
        rec = np.einsum("qa,mad->mqd", phi, recover_gradient(V, u).local())
        gk = ((rec ** 2).sum(-1) @ rule.weights) * m.areas
        grad = u.gradients_at(rule.points)[:, 0]
        ek = (grad ** 2).sum(-1) * m.areas
        for t in range(m.n_triangles):
            omega = np.unique(np.concatenate([patches[v] for v in m.triangles[t]]))
            worst = max(worst, math.sqrt(gk[t] / ek[omega].sum()))
    assert worst <= 10


def test_sin_sin_consistency_rates():
    u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    ux = lambda x, y: np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
    uy = lambda x, y: np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
    for degree, target in ((1, 1.8), (2, 2.8)):
        hs, errs = [], []
        for n in (8, 16, 32):
            V = FeSpace(generate_uniform("regular", n), degree)
            g = recover_gradient(V, interpolate(V, u))
            x, y = V.dof_points.T
            errs.append(max(np.abs(g.x.values - ux(x, y)).max(), np.abs(g.y.values - uy(x, y)).max()))
            hs.append(1 / n)
        assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= target


# -- simple averaging ---------------------------------------------------------

def test_simple_average_linear_exact():
    V = FeSpace(perturbed(), 2)
    g = recover_simple_average(V, interpolate(V, lambda x, y: 3 * x - y))
    assert np.allclose(g.x.values, 3) and np.allclose(g.y.values, -1)


def test_simple_average_matches_ppr_on_regular():
    V = FeSpace(generate_uniform("regular", 8), 1)
    u = interpolate(V, lambda x, y: x * x)
    a, b = recover_simple_average(V, u), recover_gradient(V, u)
    inner = np.flatnonzero(V.mesh.markers == 0)
    assert np.allclose(a.x.values[inner], b.x.values[inner], atol=1e-12)


def test_simple_average_first_order_on_chevron():
    errs_avg, errs_ppr, hs = [], [], []
    for n in (8, 16, 32):
        V = FeSpace(generate_uniform("chevron", n), 1)
        u = interpolate(V, lambda x, y: y * y)
        inner = np.flatnonzero(V.mesh.markers == 0)
        exact = 2 * V.dof_points[inner, 1]
        errs_avg.append(np.abs(recover_simple_average(V, u).y.values[inner] - exact).max())
        errs_ppr.append(np.abs(recover_gradient(V, u).y.values[inner] - exact).max())
        hs.append(1 / n)
    assert np.polyfit(np.log(hs), np.log(errs_avg), 1)[0] == pytest.approx(1.0, abs=0.1)
    assert max(errs_ppr) <= 1e-10


# -- interface recovery -------------------------------------------------------

def quadrant_mesh(n=8):
    quad = lambda x, y: np.where((x > 0) & (y > 0), Region.MINUS, Region.PLUS)
    return generate_uniform("regular", n, (-1, 1, -1, 1), region_of=quad)


def piecewise_poly(degree, rng):
    """Continuous field p + [x>0, y>0] x y q with deg p = k+1, deg q = k-1."""
    f, grad = random_poly(degree + 1, rng)
    q, qgrad = random_poly(degree - 1, rng)

    def u(x, y):
        return f(x, y) + np.where((x > 0) & (y > 0), x * y * q(x, y), 0.0)

    def grad_side(region, x, y):
        gx, gy = grad(x, y)
        if region == Region.MINUS:
            qx, qy = qgrad(x, y)
            gx = gx + y * q(x, y) + x * y * qx
            gy = gy + x * q(x, y) + x * y * qy
        return np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)

    return u, grad_side


@pytest.mark.parametrize("degree", [1, 2])
def test_interface_preserves_piecewise_polynomials(degree):
    V = FeSpace(quadrant_mesh(), degree)
    u, grad_side = piecewise_poly(degree, np.random.default_rng(9))
    rec = recover_interface(V, interpolate(V, u))
    for r, (sub, field) in rec.parts.items():
        gx, gy = grad_side(r, *sub.space.dof_points.T)
        assert np.abs(field.x.values - gx).max() <= 1e-9 * max(1, np.abs(gx).max())
        assert np.abs(field.y.values - gy).max() <= 1e-9 * max(1, np.abs(gy).max())


def test_interface_piecewise_exact_on_continuous_field():
    # u = x y on the minus quadrant and 0 elsewhere is continuous and piecewise quadratic
    m = quadrant_mesh()
    V = FeSpace(m, 1)
    u = interpolate(V, lambda x, y: np.where((x > 0) & (y > 0), x * y, 0.0))
    rec = recover_interface(V, u)
    iface = int(np.flatnonzero((np.abs(V.dof_points[:, 0]) < 1e-14) & (np.abs(V.dof_points[:, 1] - 0.5) < 1e-14))[0])
    assert np.allclose(rec.at_dof(Region.MINUS, iface), [0.5, 0.0], atol=1e-12)
    assert np.allclose(rec.at_dof(Region.PLUS, iface), [0.0, 0.0], atol=1e-12)


def test_kellogg_interface_values_differ():
    prob = catalog("kellogg_quadrant", ratio=10.0)
    m = prob.initial_mesh()
    m = bisect(m, np.arange(m.n_triangles))
    V = FeSpace(m, 1)
    u = interpolate(V, lambda x, y: prob.spec.exact(x, y, np.zeros_like(x)))
    rec = recover_interface(V, u)
    iface = int(np.flatnonzero((np.abs(V.dof_points[:, 0]) < 1e-14) & (np.abs(V.dof_points[:, 1] - 0.5) < 1e-14))[0])
    gm, gp = rec.at_dof(Region.MINUS, iface), rec.at_dof(Region.PLUS, iface)
    assert abs(gm[0] - gp[0]) > 0.1 * max(abs(gm[0]), abs(gp[0]))


def test_single_region_is_plain_recovery():
    V = FeSpace(perturbed(), 2)
    u = NodalField(V, np.random.default_rng(0).standard_normal(V.n_dofs))
    rec = recover_interface(V, u)
    g = recover_gradient(V, u)
    assert np.array_equal(rec.local(), g.local())


def test_interface_missing_region():
    V = FeSpace(quadrant_mesh(), 1)
    with pytest.raises(RecoveryError):
        recover_interface(V, NodalField(V, np.zeros(V.n_dofs)), regions=[Region.MINUS, Region.NONE])
