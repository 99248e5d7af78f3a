"""Independent reference implementations used as test oracles.

Everything here is deliberately slow and loop-based: per-entry quadrature
for every bilinear form, evaluated cell by cell, point by point, basis
function by basis function. The only shared machinery with the package
is the reference basis evaluation (itself tested against closed forms)
and the quadrature rule (tested against analytic moments).
"""
import numpy as np

from nsfrac.fem import eval_basis, quadrature_rule


def cell_geometry(mesh, c):
    v = mesh.vertices[mesh.cells[c]]
    jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
    area = 0.5 * np.linalg.det(jac)
    inv_jt = np.linalg.inv(jac).T
    return v, jac, inv_jt, area


def reference_matrix(row_space, col_space, kind, exactness, coeff=None):
    """Assemble integral(kernel(phi^col_j, phi^row_i)) entry by entry.

    kind: 'mass', 'stiffness', 'convection', 'dx', 'dy'. For 'convection'
    ``coeff`` holds the two dof vectors of the convecting velocity (on the
    column space). 'dx'/'dy' differentiate the column-space basis.
    """
    rule = quadrature_rule(exactness)
    mesh = row_space.mesh
    vals_r, grads_r = eval_basis(row_space.degree, rule.points)
    vals_c, grads_c = eval_basis(col_space.degree, rule.points)
    A = np.zeros((row_space.ndofs, col_space.ndofs))
    for c in range(mesh.num_cells):
        _, _, inv_jt, area = cell_geometry(mesh, c)
        rdofs = row_space.cell_dofs[c]
        cdofs = col_space.cell_dofs[c]
        for p, w in enumerate(rule.weights):
            gr = grads_r[p] @ inv_jt.T
            gc = grads_c[p] @ inv_jt.T
            if kind == "convection":
                ubar = np.array([
                    np.dot(coeff[0][cdofs], vals_c[p]),
                    np.dot(coeff[1][cdofs], vals_c[p])])
            for i in range(len(rdofs)):
                for j in range(len(cdofs)):
                    if kind == "mass":
                        k = vals_c[p, j] * vals_r[p, i]
                    elif kind == "stiffness":
                        k = np.dot(gc[j], gr[i])
                    elif kind == "convection":
                        k = np.dot(ubar, gc[j]) * vals_r[p, i]
                    elif kind == "dx":
                        k = gc[j, 0] * vals_r[p, i]
                    elif kind == "dy":
                        k = gc[j, 1] * vals_r[p, i]
                    else:
                        raise ValueError(kind)
                    A[rdofs[i], cdofs[j]] += w * area * k
    return A


def reference_load(space, f, exactness):
    """Per-entry quadrature of integral(f phi_i)."""
    rule = quadrature_rule(exactness)
    vals, _ = eval_basis(space.degree, rule.points)
    b = np.zeros(space.ndofs)
    mesh = space.mesh
    for c in range(mesh.num_cells):
        v, jac, _, area = cell_geometry(mesh, c)
        dofs = space.cell_dofs[c]
        for p, w in enumerate(rule.weights):
            xy = v[0] + jac @ rule.points[p, 1:]
            fval = f(xy[0], xy[1]) if callable(f) else f
            for i in range(len(dofs)):
                b[dofs[i]] += w * area * fval * vals[p, i]
    return b


def dense_pinned_solve(A, b, weights):
    """Dense oracle for singular Poisson systems: pin dof 0, then remove
    the weighted mean."""
    Ad = A.copy()
    Ad[0, :] = 0.0
    Ad[0, 0] = 1.0
    bd = b.copy()
    bd[0] = 0.0
    x = np.linalg.solve(Ad, bd)
    return x - np.dot(weights, x) / weights.sum()
