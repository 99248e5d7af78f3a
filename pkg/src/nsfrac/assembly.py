"""Element kernels and global assembly.

Mass, stiffness and convection matrices on a velocity space, the pressure
Laplacian, the pressure-gradient and velocity-divergence coupling
matrices, load vectors and row-only Dirichlet application. All assembly
is vectorized over cells and scatters into frozen CSR patterns; matrices
living on the same space share one pattern so in-pattern axpy works
between them.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fem import eval_basis, quadrature_rule
from .sparse import CsrMatrix, PatternMismatchError, csr_from_coo_pattern

__all__ = [
    "assemble_mass",
    "assemble_stiffness",
    "assemble_convection",
    "assemble_gradient",
    "assemble_divergence",
    "assemble_load",
    "assemble_body_force",
    "gradient_rhs",
    "divergence_rhs",
    "apply_dirichlet",
    "apply_dirichlet_single",
    "apply_bc_values",
    "bc_rows",
    "Operators",
    "build_operators",
]


# ---------------------------------------------------------------------------
# cached geometry, tabulated bases and frozen patterns

_geometry_cache = weakref.WeakKeyDictionary()
_grad_cache = weakref.WeakKeyDictionary()
_square_pattern_cache = weakref.WeakKeyDictionary()
_rect_pattern_cache = weakref.WeakKeyDictionary()


def _geometry(mesh):
    """Per-cell inverse-transpose Jacobians and areas of the affine maps."""
    hit = _geometry_cache.get(mesh)
    if hit is not None:
        return hit
    v0 = mesh.vertices[mesh.cells[:, 0]]
    v1 = mesh.vertices[mesh.cells[:, 1]]
    v2 = mesh.vertices[mesh.cells[:, 2]]
    j00 = v1[:, 0] - v0[:, 0]
    j10 = v1[:, 1] - v0[:, 1]
    j01 = v2[:, 0] - v0[:, 0]
    j11 = v2[:, 1] - v0[:, 1]
    det = j00 * j11 - j01 * j10
    inv_jt = np.empty((mesh.num_cells, 2, 2))
    inv_jt[:, 0, 0] = j11 / det
    inv_jt[:, 0, 1] = -j10 / det
    inv_jt[:, 1, 0] = -j01 / det
    inv_jt[:, 1, 1] = j00 / det
    area = 0.5 * det
    _geometry_cache[mesh] = (inv_jt, area, v0, j00, j10, j01, j11)
    return _geometry_cache[mesh]


@lru_cache(maxsize=None)
def _basis_at(degree, exactness):
    rule = quadrature_rule(exactness)
    vals, grads = eval_basis(degree, rule.points)
    vals.setflags(write=False)
    grads.setflags(write=False)
    return rule, vals, grads


def _phys_grads(space, exactness):
    """Physical basis gradients at quadrature points, shape (T, npts, nloc, 2)."""
    per_space = _grad_cache.setdefault(space, {})
    if exactness not in per_space:
        _, _, ref = _basis_at(space.degree, exactness)
        inv_jt, _, *_ = _geometry(space.mesh)
        per_space[exactness] = np.einsum("cab,pnb->cpna", inv_jt, ref)
    return per_space[exactness]


def _quad_points_xy(mesh, rule):
    """Physical coordinates of quadrature points, shapes (T, npts) each."""
    _, _, v0, j00, j10, j01, j11 = _geometry(mesh)
    xr, yr = rule.points[:, 1], rule.points[:, 2]
    x = v0[:, 0, None] + np.outer(j00, xr) + np.outer(j01, yr)
    y = v0[:, 1, None] + np.outer(j10, xr) + np.outer(j11, yr)
    return x, y


def _square_pattern(space):
    hit = _square_pattern_cache.get(space)
    if hit is None:
        dofs = space.cell_dofs
        n = dofs.shape[1]
        rows = np.repeat(dofs, n, axis=1).ravel()
        cols = np.tile(dofs, (1, n)).ravel()
        mat, scatter = csr_from_coo_pattern(rows, cols, (space.ndofs, space.ndofs))
        hit = (mat, scatter)
        _square_pattern_cache[space] = hit
    return hit


def _rect_pattern(row_space, col_space):
    per_row = _rect_pattern_cache.setdefault(row_space, weakref.WeakKeyDictionary())
    hit = per_row.get(col_space)
    if hit is None:
        rdofs, cdofs = row_space.cell_dofs, col_space.cell_dofs
        nr, nc = rdofs.shape[1], cdofs.shape[1]
        rows = np.repeat(rdofs, nc, axis=1).ravel()
        cols = np.tile(cdofs, (1, nr)).ravel()
        mat, scatter = csr_from_coo_pattern(rows, cols,
                                            (row_space.ndofs, col_space.ndofs))
        hit = (mat, scatter)
        per_row[col_space] = hit
    return hit


def _new_on_pattern(pattern_mat):
    return pattern_mat.copy(share_pattern=True)


def _scatter_matrix(mat, scatter, local):
    mat.data += np.bincount(scatter, weights=local.ravel(), minlength=mat.nnz)


def _scatter_vector(vec, cell_dofs, local):
    vec += np.bincount(cell_dofs.ravel(), weights=local.ravel(), minlength=len(vec))


def _default_exactness(*degrees):
    return 2 * max(degrees) + 1


def _check_out(out, pattern_mat):
    if not out.pattern_equals(pattern_mat):
        raise PatternMismatchError(
            f"output matrix pattern (nnz={out.nnz}) does not match the "
            f"space pattern (nnz={pattern_mat.nnz})")


# ---------------------------------------------------------------------------
# bilinear forms

def assemble_mass(space, exactness=None, out=None):
    """Mass matrix M_ij = integral(phi_j phi_i)."""
    exactness = exactness or _default_exactness(space.degree)
    rule, vals, _ = _basis_at(space.degree, exactness)
    _, area, *_ = _geometry(space.mesh)
    ref = np.einsum("p,pi,pj->ij", rule.weights, vals, vals)
    local = area[:, None, None] * ref
    return _fill_square(space, local, out)


def assemble_stiffness(space, exactness=None, out=None):
    """Stiffness matrix K_ij = integral(grad phi_j . grad phi_i)."""
    exactness = exactness or _default_exactness(space.degree)
    rule, _, _ = _basis_at(space.degree, exactness)
    grads = _phys_grads(space, exactness)
    _, area, *_ = _geometry(space.mesh)
    local = np.einsum("p,cpia,cpja->cij", rule.weights, grads, grads)
    local *= area[:, None, None]
    return _fill_square(space, local, out)


def assemble_convection(space, u_ab, exactness=None, out=None):
    """Convection matrix C_ij = integral((u_ab . grad phi_j) phi_i).

    ``u_ab`` holds the two components of the convecting velocity as
    Fields or dof arrays on ``space``. Passing ``out`` reassembles into
    that matrix's frozen pattern (values reset, pattern kept).
    """
    exactness = exactness or _default_exactness(space.degree)
    rule, vals, _ = _basis_at(space.degree, exactness)
    grads = _phys_grads(space, exactness)
    _, area, *_ = _geometry(space.mesh)
    comps = [np.asarray(getattr(u, "dofs", u), dtype=float) for u in u_ab]
    cd = space.cell_dofs
    ux = comps[0][cd] @ vals.T              # (T, npts)
    uy = comps[1][cd] @ vals.T
    conv = ux[:, :, None] * grads[:, :, :, 0] + uy[:, :, None] * grads[:, :, :, 1]
    local = np.einsum("p,pi,cpj->cij", rule.weights, vals, conv)
    local *= area[:, None, None]
    return _fill_square(space, local, out)


def _fill_square(space, local, out):
    pattern, scatter = _square_pattern(space)
    if out is None:
        out = _new_on_pattern(pattern)
    else:
        _check_out(out, pattern)
    out.set_zero()
    _scatter_matrix(out, scatter, local)
    return out


def assemble_gradient(velocity_space, pressure_space, exactness=None):
    """Pressure-gradient matrices dP^k_ij = integral(d_k phihat_j phi_i).

    Rows live on the velocity space, columns on the pressure space;
    returns one matrix per direction.
    """
    exactness = exactness or _default_exactness(velocity_space.degree,
                                                pressure_space.degree)
    rule, vals_v, _ = _basis_at(velocity_space.degree, exactness)
    grads_p = _phys_grads(pressure_space, exactness)
    _, area, *_ = _geometry(velocity_space.mesh)
    pattern, scatter = _rect_pattern(velocity_space, pressure_space)
    mats = []
    for k in range(2):
        local = np.einsum("p,pi,cpj->cij", rule.weights, vals_v, grads_p[:, :, :, k])
        local *= area[:, None, None]
        mat = _new_on_pattern(pattern)
        _scatter_matrix(mat, scatter, local)
        mats.append(mat)
    return mats


def assemble_divergence(velocity_space, pressure_space, exactness=None):
    """Velocity-divergence matrices dU^k_ij = integral(d_k phi_j phihat_i).

    Rows live on the pressure space, columns on the velocity space. On
    equal spaces dU^k coincides entrywise with dP^k (and, on fully
    periodic meshes, equals -dP^k transposed by integration by parts).
    """
    exactness = exactness or _default_exactness(velocity_space.degree,
                                                pressure_space.degree)
    rule, vals_p, _ = _basis_at(pressure_space.degree, exactness)
    grads_v = _phys_grads(velocity_space, exactness)
    _, area, *_ = _geometry(velocity_space.mesh)
    pattern, scatter = _rect_pattern(pressure_space, velocity_space)
    mats = []
    for k in range(2):
        local = np.einsum("p,pi,cpj->cij", rule.weights, vals_p, grads_v[:, :, :, k])
        local *= area[:, None, None]
        mat = _new_on_pattern(pattern)
        _scatter_matrix(mat, scatter, local)
        mats.append(mat)
    return mats


# ---------------------------------------------------------------------------
# linear forms

def assemble_load(space, f, exactness=None):
    """Load vector b_i = integral(f phi_i); f is a constant or f(x, y)."""
    exactness = exactness or _default_exactness(space.degree)
    rule, vals, _ = _basis_at(space.degree, exactness)
    _, area, *_ = _geometry(space.mesh)
    out = np.zeros(space.ndofs)
    if callable(f):
        x, y = _quad_points_xy(space.mesh, rule)
        fq = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)
        local = np.einsum("p,cp,pi->ci", rule.weights, fq, vals)
    else:
        f = float(f)
        if f == 0.0:
            return out
        local = f * np.einsum("p,pi->i", rule.weights, vals)[None, :].repeat(
            space.mesh.num_cells, axis=0)
    local = local * area[:, None]
    _scatter_vector(out, space.cell_dofs, local)
    return out


def assemble_body_force(space, f):
    """One load vector per velocity component; f is a 2-tuple."""
    return [assemble_load(space, fk) for fk in f]


def gradient_rhs(velocity_space, pressure_space, p_dofs, k, exactness=None):
    """Directly assembled integral(d_k p phi_i), the low-memory gradient path."""
    exactness = exactness or _default_exactness(velocity_space.degree,
                                                pressure_space.degree)
    rule, vals_v, _ = _basis_at(velocity_space.degree, exactness)
    grads_p = _phys_grads(pressure_space, exactness)
    _, area, *_ = _geometry(velocity_space.mesh)
    p = np.asarray(getattr(p_dofs, "dofs", p_dofs), dtype=float)
    dp = np.einsum("cj,cpj->cp", p[pressure_space.cell_dofs], grads_p[:, :, :, k])
    local = np.einsum("p,cp,pi->ci", rule.weights, dp, vals_v) * area[:, None]
    out = np.zeros(velocity_space.ndofs)
    _scatter_vector(out, velocity_space.cell_dofs, local)
    return out


def divergence_rhs(pressure_space, velocity_space, u_dofs, exactness=None):
    """Directly assembled integral(div(u) phihat_i), the low-memory path."""
    exactness = exactness or _default_exactness(velocity_space.degree,
                                                pressure_space.degree)
    rule, vals_p, _ = _basis_at(pressure_space.degree, exactness)
    grads_v = _phys_grads(velocity_space, exactness)
    _, area, *_ = _geometry(velocity_space.mesh)
    cd = velocity_space.cell_dofs
    div = np.zeros((velocity_space.mesh.num_cells, len(rule.weights)))
    for k in range(2):
        uk = np.asarray(getattr(u_dofs[k], "dofs", u_dofs[k]), dtype=float)
        div += np.einsum("cj,cpj->cp", uk[cd], grads_v[:, :, :, k])
    local = np.einsum("p,cp,pi->ci", rule.weights, div, vals_p) * area[:, None]
    out = np.zeros(pressure_space.ndofs)
    _scatter_vector(out, pressure_space.cell_dofs, local)
    return out


# ---------------------------------------------------------------------------
# Dirichlet application (row-only)

def bc_rows(bcs):
    """Union of constrained dofs over a list of DirichletBC."""
    if not bcs:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate([bc.dofs for bc in bcs]))


def apply_bc_values(vec, bcs):
    """Write bc values into a vector, later conditions overriding earlier."""
    for bc in bcs:
        vec[bc.dofs] = bc.values


def apply_dirichlet(A, bs, bc_sets):
    """Apply per-component Dirichlet conditions to a shared matrix.

    All components must constrain the same dof locations (values may
    differ): the rows are zeroed with a unit diagonal once, and each
    right-hand side gets its own component values.
    """
    if len(bs) != len(bc_sets):
        raise ValueError("need one right-hand side per component bc set")
    row_sets = [bc_rows(bcs) for bcs in bc_sets]
    for rows in row_sets[1:]:
        if not np.array_equal(rows, row_sets[0]):
            raise ValueError(
                "velocity components constrain different Dirichlet dof sets; "
                "a shared coefficient matrix requires identical locations")
    if len(row_sets[0]):
        A.zero_rows_unit_diagonal(row_sets[0])
    for b, bcs in zip(bs, bc_sets):
        apply_bc_values(b, bcs)


def apply_dirichlet_single(A, b, bcs):
    """Row-only Dirichlet application for a single-field system."""
    rows = bc_rows(bcs)
    if len(rows):
        A.zero_rows_unit_diagonal(rows)
    apply_bc_values(b, bcs)


# ---------------------------------------------------------------------------
# preassembled operator bundle

@dataclass(eq=False)
class Operators:
    """The time-constant matrices of the optimized fractional-step solver.

    ``work`` shares the velocity-space pattern with ``mass`` and
    ``stiffness`` and is rebuilt in place every step. With equal velocity
    and pressure spaces the divergence matrices are not stored; transpose
    products of the gradient matrices are used instead. In low-memory
    mode neither coupling matrix is stored and the gradient/divergence
    terms are assembled directly per step.
    """

    vspace: object
    pspace: object
    mass: CsrMatrix
    stiffness: CsrMatrix
    work: CsrMatrix
    pressure_laplacian: CsrMatrix
    grad_p: list | None
    div_u: list | None
    mass_lumped: np.ndarray
    pressure_mass_lumped: np.ndarray
    low_memory: bool
    spaces_equal: bool

    def apply_gradient(self, p_dofs, k):
        """Velocity-space vector integral(d_k p phi_i)."""
        if self.low_memory:
            return gradient_rhs(self.vspace, self.pspace, p_dofs, k)
        return self.grad_p[k].matvec(p_dofs)

    def apply_divergence(self, u_dofs):
        """Pressure-space vector sum_k integral(d_k u_k phihat_i).

        On equal spaces the divergence matrices coincide entrywise with
        the gradient matrices, so the stored gradient matrices serve
        double duty.
        """
        if self.low_memory:
            return divergence_rhs(self.pspace, self.vspace, u_dofs)
        if self.div_u is None:
            out = self.grad_p[0].matvec(u_dofs[0])
            out += self.grad_p[1].matvec(u_dofs[1])
            return out
        out = self.div_u[0].matvec(u_dofs[0])
        out += self.div_u[1].matvec(u_dofs[1])
        return out


def build_operators(velocity_space, pressure_space, low_memory=False):
    """Preassemble every time-constant matrix of the scheme."""
    pattern, _ = _square_pattern(velocity_space)
    mass = assemble_mass(velocity_space, out=_new_on_pattern(pattern))
    stiffness = assemble_stiffness(velocity_space, out=_new_on_pattern(pattern))
    work = _new_on_pattern(pattern)
    spaces_equal = (velocity_space is pressure_space
                    or (velocity_space.mesh is pressure_space.mesh
                        and velocity_space.degree == pressure_space.degree))
    if spaces_equal:
        laplacian = stiffness.copy(share_pattern=True)
        p_lumped = mass.lump()
    else:
        laplacian = assemble_stiffness(pressure_space)
        p_lumped = assemble_mass(pressure_space).lump()
    grad_p = div_u = None
    if not low_memory:
        grad_p = assemble_gradient(velocity_space, pressure_space)
        if not spaces_equal:
            div_u = assemble_divergence(velocity_space, pressure_space)
    return Operators(velocity_space, pressure_space, mass, stiffness, work,
                     laplacian, grad_p, div_u, mass.lump(), p_lumped,
                     low_memory, spaces_equal)
