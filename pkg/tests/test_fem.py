import numpy as np
import pytest

from nsfrac.fem import (build_space, dirichlet_dofs, eval_basis, interpolate,
                        lattice_points, quadrature_rule)
from nsfrac.mesh import build_rectangle, mesh_from_arrays
from nsfrac.problems import cavity_stretch
from nsfrac.verify import l2_error

RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# quadrature

@pytest.mark.parametrize("exactness", [0, 1, 2, 3, 5, 7, 9, 12, 16])
def test_quadrature_moments(exactness):
    from math import factorial

    rule = quadrature_rule(exactness)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            got = 0.5 * np.dot(rule.weights, x ** a * y ** b)
            want = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert got == pytest.approx(want, abs=1e-14 * max(1.0, 10 * want))


# ---------------------------------------------------------------------------
# reference basis

@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_partition_of_unity(degree):
    pts = RNG.dirichlet([1, 1, 1], size=20)
    vals, grads = eval_basis(degree, pts)
    assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-12)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_nodal_property(degree):
    nodes = lattice_points(degree)
    vals, _ = eval_basis(degree, nodes)
    assert np.allclose(vals, np.eye(len(nodes)), atol=1e-12)


def test_p1_basis_is_barycentric():
    pts = RNG.dirichlet([1, 1, 1], size=5)
    vals, _ = eval_basis(1, pts)
    assert np.allclose(vals, pts, atol=1e-14)


def test_p2_edge_basis_closed_form():
    # quadratic edge function 4*lam_a*lam_b evaluated at the lattice
    pts = RNG.dirichlet([1, 1, 1], size=10)
    vals, _ = eval_basis(2, pts)
    lam = pts
    # local order: vertices 0..2, then edges (0,1), (1,2), (2,0)
    assert np.allclose(vals[:, 3], 4 * lam[:, 0] * lam[:, 1], atol=1e-13)
    assert np.allclose(vals[:, 4], 4 * lam[:, 1] * lam[:, 2], atol=1e-13)
    assert np.allclose(vals[:, 5], 4 * lam[:, 2] * lam[:, 0], atol=1e-13)
    vander, _ = eval_basis(2, lattice_points(2))
    assert np.allclose(vander, np.eye(6), atol=1e-13)


def test_unsupported_degree():
    with pytest.raises(ValueError):
        eval_basis(5, [[1, 0, 0]])
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        build_space(m, 0)


# ---------------------------------------------------------------------------
# spaces and dof maps

def test_dof_counts_basic():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    assert build_space(m, 1).ndofs == 4
    assert build_space(m, 2).ndofs == 9  # 4 vertices + 5 edges


@pytest.mark.parametrize("n", [2, 3, 5])
def test_dof_counts_doubly_periodic(n):
    m = build_rectangle(0, 0, 2, 2, n, n, periodic_x=True, periodic_y=True)
    # torus: V = n^2, E = 3n^2, T = 2n^2
    for degree, expected in ((1, n * n), (2, 4 * n * n), (3, 9 * n * n),
                             (4, 16 * n * n)):
        assert build_space(m, degree).ndofs == expected


def test_local_dof_count():
    m = build_rectangle(0, 0, 1, 1, 2, 2)
    for degree in (1, 2, 3, 4):
        sp = build_space(m, degree)
        assert sp.cell_dofs.shape[1] == (degree + 1) * (degree + 2) // 2
        assert sp.cell_dofs.max() < sp.ndofs


def test_shared_edges_share_dofs():
    m = build_rectangle(0, 0, 1, 1, 2, 2)
    sp = build_space(m, 3)
    # every interior edge dof appears in exactly two cells
    counts = np.bincount(sp.cell_dofs.ravel(), minlength=sp.ndofs)
    assert counts.min() >= 1


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_interpolation_reproduces_polynomials(degree):
    m = build_rectangle(0, 0, 1, 1, 3, 3, transform=lambda p: cavity_stretch(p))
    sp = build_space(m, degree)
    coef = RNG.standard_normal((degree + 1, degree + 1))

    def poly(x, y):
        out = np.zeros_like(np.asarray(x, dtype=float))
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                out = out + coef[a, b] * x ** a * y ** b
        return out

    f = interpolate(sp, poly)
    assert l2_error(f, poly) < 1e-12


def test_interpolate_constant_and_values():
    m = build_rectangle(0, 0, 2, 2, 4, 4)
    sp = build_space(m, 2)
    ones = interpolate(sp, 1.0)
    assert np.all(ones.dofs == 1.0)
    # nodal values of the vortex initial condition at selected points
    from nsfrac.problems import taylor_green_pressure, taylor_green_velocity
    fx, fy = taylor_green_velocity(0.01, 0.0)
    assert fx(0.5, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert fy(0.5, 0.0) == pytest.approx(1.0, rel=1e-15)
    assert taylor_green_pressure(0.01, 0.0)(0.5, 0.5) == pytest.approx(0.5)
    u1 = interpolate(sp, fy)
    at = np.flatnonzero((sp.dof_coords[:, 0] == 0.5) & (sp.dof_coords[:, 1] == 0.0))
    assert u1.dofs[at] == pytest.approx(1.0)


def test_periodic_interpolation_consistent():
    m = build_rectangle(0, 0, 2, 2, 4, 4, periodic_x=True, periodic_y=True)
    sp = build_space(m, 2)

    def f(x, y):
        return np.sin(np.pi * x) * np.cos(np.pi * y)

    # interpolant must be single-valued across the identified boundary
    fld = interpolate(sp, f)
    assert l2_error(fld, f) < 0.2  # smooth function, coarse mesh


# ---------------------------------------------------------------------------
# Dirichlet collection

def test_lid_dof_counts():
    m = build_rectangle(0, 0, 1, 1, 50, 50, transform=lambda p: cavity_stretch(p))
    top = lambda x, y: np.abs(y - 1) < 1e-8  # noqa: E731
    sp1 = build_space(m, 1)
    bc = dirichlet_dofs(sp1, top, 1.0)
    assert len(bc.dofs) == 51
    assert np.all(bc.values == 1.0)
    sp2 = build_space(m, 2)
    bc2 = dirichlet_dofs(sp2, top, 1.0)
    assert len(bc2.dofs) == 101


def test_doubly_periodic_has_no_dirichlet_dofs():
    m = build_rectangle(0, 0, 2, 2, 4, 4, periodic_x=True, periodic_y=True)
    sp = build_space(m, 2)
    assert len(sp.boundary_dofs) == 0
    with pytest.warns(UserWarning):
        bc = dirichlet_dofs(sp, lambda x, y: np.ones_like(x, dtype=bool), 0.0)
    assert len(bc.dofs) == 0


def test_empty_predicate_warns_not_raises():
    m = build_rectangle(0, 0, 1, 1, 3, 3)
    sp = build_space(m, 1)
    with pytest.warns(UserWarning):
        dirichlet_dofs(sp, lambda x, y: np.zeros_like(x, dtype=bool), 0.0)


def test_dirichlet_value_function():
    m = build_rectangle(0, 0, 1, 1, 4, 4)
    sp = build_space(m, 2)
    bc = dirichlet_dofs(sp, lambda x, y: np.abs(y - 1) < 1e-8, lambda x, y: x)
    assert np.allclose(bc.values, sp.dof_coords[bc.dofs, 0])
