"""Continuous Lagrange elements of degree 1-4 on triangles.

Reference basis evaluation, triangle quadrature, global dof maps with
periodic merging, nodal interpolation and Dirichlet dof collection.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "QuadratureRule",
    "quadrature_rule",
    "eval_basis",
    "lattice_points",
    "LagrangeSpace",
    "build_space",
    "Field",
    "interpolate",
    "DirichletBC",
    "dirichlet_dofs",
]

# local edges of the reference triangle, by local vertex index
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Quadrature on the reference triangle.

    ``points`` are barycentric (n, 3); ``weights`` sum to one, so the
    integral of f over a physical cell is area * sum(w_i f(p_i)).
    ``degree`` is the polynomial exactness.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_rule(exactness):
    """Conical-product Gauss rule exact for polynomials up to ``exactness``.

    Built from Gauss-Jacobi (weight 1-u) x Gauss-Legendre points mapped to
    the triangle by x = u, y = v(1-u); exact to machine precision for any
    requested degree.
    """
    if exactness < 0:
        raise ValueError("exactness must be nonnegative")
    n = max(1, (exactness + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)      # weight (1-x) on [-1, 1]
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj                          # integrates g(u)(1-u) on [0, 1]
    xl, wl = np.polynomial.legendre.leggauss(n)
    v = 0.5 * (xl + 1.0)
    wv = 0.5 * wl
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel()
    points = np.column_stack([1.0 - x - y, x, y])
    weights = w / 0.5                       # reference area normalized out
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, exactness)


# ---------------------------------------------------------------------------
# reference basis

@lru_cache(maxsize=None)
def _lattice_multis(degree):
    """Node multi-indices (m0, m1, m2), summing to ``degree``, local order:
    3 vertices, then degree-1 nodes per edge (along the local edge), then
    interior nodes."""
    k = degree
    multis = []
    for vtx in range(3):
        m = [0, 0, 0]
        m[vtx] = k
        multis.append(tuple(m))
    for a, b in LOCAL_EDGES:
        for step in range(1, k):
            m = [0, 0, 0]
            m[a] = k - step
            m[b] = step
            multis.append(tuple(m))
    for m0 in range(1, k):
        for m1 in range(1, k - m0):
            multis.append((m0, m1, k - m0 - m1))
    return np.array(multis, dtype=np.int64)


def lattice_points(degree):
    """Barycentric coordinates of the local nodes, shape (nloc, 3)."""
    return _lattice_multis(degree) / float(degree)


def _silvester(k, m, t):
    """P_m(t) = prod_{r<m} (k t - r) / (m - r); P_0 = 1."""
    out = np.ones_like(t)
    for r in range(m):
        out = out * (k * t - r) / (m - r)
    return out


def _silvester_deriv(k, m, t):
    out = np.zeros_like(t)
    for skip in range(m):
        term = np.full_like(t, k / (m - skip))
        for r in range(m):
            if r != skip:
                term = term * (k * t - r) / (m - r)
        out += term
    return out


# d lambda_c / d (x, y) on the reference triangle (0,0)-(1,0)-(0,1)
_DLAMBDA = np.array([[-1.0, 1.0, 0.0],
                     [-1.0, 0.0, 1.0]])


@lru_cache(maxsize=None)
def _basis_nloc(degree):
    return (degree + 1) * (degree + 2) // 2


def eval_basis(degree, points):
    """Evaluate all local basis functions at barycentric ``points``.

    Returns ``(values, gradients)`` with shapes (npts, nloc) and
    (npts, nloc, 2); gradients are with respect to the reference
    coordinates (x, y) = (lambda_1, lambda_2).
    """
    if not 1 <= degree <= 4:
        raise ValueError(f"unsupported degree {degree}; expected 1..4")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    multis = _lattice_multis(degree)
    npts, nloc = len(pts), len(multis)

    P = np.empty((npts, nloc, 3))
    dP = np.empty((npts, nloc, 3))
    for c in range(3):
        t = pts[:, c]
        for node in range(nloc):
            m = int(multis[node, c])
            P[:, node, c] = _silvester(degree, m, t)
            dP[:, node, c] = _silvester_deriv(degree, m, t)

    values = P[:, :, 0] * P[:, :, 1] * P[:, :, 2]
    dN = np.empty((npts, nloc, 3))
    dN[:, :, 0] = dP[:, :, 0] * P[:, :, 1] * P[:, :, 2]
    dN[:, :, 1] = P[:, :, 0] * dP[:, :, 1] * P[:, :, 2]
    dN[:, :, 2] = P[:, :, 0] * P[:, :, 1] * dP[:, :, 2]
    gradients = np.einsum("pnc,rc->pnr", dN, _DLAMBDA)
    return values, gradients


# ---------------------------------------------------------------------------
# function spaces

@dataclass(frozen=True, eq=False)
class LagrangeSpace:
    """Continuous Lagrange space on a triangle mesh.

    ``cell_dofs`` maps each cell to its global dof indices (shared edges
    and vertices share indices, periodic slaves are merged away), and
    ``dof_coords`` holds one coordinate per remaining dof.
    """

    mesh: object
    degree: int
    cell_dofs: np.ndarray
    ndofs: int
    dof_coords: np.ndarray
    vertex_dofs: np.ndarray
    boundary_dofs: np.ndarray
    edge_vertices: np.ndarray

    @property
    def nloc(self):
        return _basis_nloc(self.degree)


def _unique_edges(cells):
    """Unique mesh edges and the (T, 3) cell-to-edge map (local edge order)."""
    raw = np.concatenate([cells[:, [a, b]] for a, b in LOCAL_EDGES])
    key = np.sort(raw, axis=1)
    edge_vertices, inverse = np.unique(key, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(3, len(cells)).T
    return edge_vertices, cell_edges


def build_space(mesh, degree):
    """Build a degree 1-4 Lagrange space with periodic dofs merged."""
    if not 1 <= degree <= 4:
        raise ValueError(f"unsupported degree {degree}; expected 1..4")
    k = degree
    cells = mesh.cells
    V = mesh.num_vertices
    T = mesh.num_cells
    edge_vertices, cell_edges = _unique_edges(cells)
    E = len(edge_vertices)
    n_edge = k - 1
    n_int = (k - 1) * (k - 2) // 2
    nloc = _basis_nloc(k)
    n_raw = V + E * n_edge + T * n_int

    cell_dofs = np.empty((T, nloc), dtype=np.int64)
    cell_dofs[:, :3] = cells
    for le, (a, b) in enumerate(LOCAL_EDGES):
        if k < 2:
            break
        ga, gb = cells[:, a], cells[:, b]
        e = cell_edges[:, le]
        forward = ga < gb  # stored edge dofs run from the smaller vertex id
        for step in range(1, k):
            slot = np.where(forward, step - 1, k - 1 - step)
            cell_dofs[:, 3 + le * n_edge + (step - 1)] = V + e * n_edge + slot
    if n_int:
        base = V + E * n_edge + np.arange(T) * n_int
        for s in range(n_int):
            cell_dofs[:, 3 + 3 * n_edge + s] = base + s

    # raw dof coordinates
    coords = np.empty((n_raw, 2))
    coords[:V] = mesh.vertices
    if n_edge:
        pa = mesh.vertices[edge_vertices[:, 0]]
        pb = mesh.vertices[edge_vertices[:, 1]]
        for s in range(n_edge):
            t = (s + 1) / k
            coords[V + np.arange(E) * n_edge + s] = (1 - t) * pa + t * pb
    if n_int:
        bary = lattice_points(k)[3 + 3 * n_edge:]
        v0 = mesh.vertices[cells[:, 0]]
        v1 = mesh.vertices[cells[:, 1]]
        v2 = mesh.vertices[cells[:, 2]]
        for s, lam in enumerate(bary):
            pt = lam[0] * v0 + lam[1] * v1 + lam[2] * v2
            coords[V + E * n_edge + np.arange(T) * n_int + s] = pt

    # periodic merging at the dof level
    master = np.arange(n_raw, dtype=np.int64)
    if mesh.periodic_pairs:
        edge_lookup = None
        if n_edge:
            edge_lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edge_vertices)}
        for _, (slaves, masters) in mesh.periodic_pairs.items():
            master[slaves] = masters
            if not n_edge:
                continue
            pd = dict(zip(slaves.tolist(), masters.tolist()))
            on_side = np.isin(edge_vertices[:, 0], slaves) & np.isin(edge_vertices[:, 1], slaves)
            for ei in np.flatnonzero(on_side):
                a, b = int(edge_vertices[ei, 0]), int(edge_vertices[ei, 1])
                ma, mb = pd[a], pd[b]
                me = edge_lookup.get((min(ma, mb), max(ma, mb)))
                if me is None:
                    raise ValueError(
                        f"periodic image of boundary edge ({a},{b}) is not a mesh edge")
                for s in range(n_edge):
                    tgt = s if ma < mb else n_edge - 1 - s
                    master[V + ei * n_edge + s] = V + me * n_edge + tgt
        # resolve chains (corner vertices hop twice under double periodicity)
        while True:
            nxt = master[master]
            if np.array_equal(nxt, master):
                break
            master = nxt

    reps = np.unique(master)
    renumber = np.empty(n_raw, dtype=np.int64)
    renumber[reps] = np.arange(len(reps))
    glob = renumber[master]
    cell_dofs = glob[cell_dofs]
    dof_coords = coords[reps]
    vertex_dofs = glob[:V]
    ndofs = len(reps)

    # dofs on the (non-periodic) boundary
    parts = []
    if len(mesh.boundary_facets):
        parts.append(vertex_dofs[np.unique(mesh.boundary_facets)])
        if n_edge:
            edge_lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(edge_vertices)}
            ids = []
            for a, b in np.sort(mesh.boundary_facets, axis=1):
                ei = edge_lookup[(int(a), int(b))]
                ids.extend(range(V + ei * n_edge, V + (ei + 1) * n_edge))
            parts.append(glob[np.array(ids, dtype=np.int64)])
    boundary_dofs = (np.unique(np.concatenate(parts)) if parts
                     else np.empty(0, dtype=np.int64))

    for arr in (cell_dofs, dof_coords, vertex_dofs, boundary_dofs):
        arr.setflags(write=False)
    return LagrangeSpace(mesh, k, cell_dofs, ndofs, dof_coords,
                         vertex_dofs, boundary_dofs, edge_vertices)


# ---------------------------------------------------------------------------
# fields and boundary conditions

@dataclass(eq=False)
class Field:
    """Dof-coefficient vector bound to a space."""

    space: LagrangeSpace
    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if self.dofs.shape != (self.space.ndofs,):
            raise ValueError(
                f"dof vector has length {self.dofs.shape}, space has {self.space.ndofs}")

    def copy(self):
        return Field(self.space, self.dofs.copy())


def interpolate(space, f):
    """Nodal interpolation: dof_i = f(x_i) at the dof coordinates.

    ``f`` may be a constant or a callable f(x, y) accepting arrays.
    """
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    if callable(f):
        vals = np.broadcast_to(np.asarray(f(x, y), dtype=float), (space.ndofs,)).copy()
    else:
        vals = np.full(space.ndofs, float(f))
    return Field(space, vals)


@dataclass(frozen=True, eq=False)
class DirichletBC:
    """A set of constrained dofs with their prescribed values."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.dofs.shape != self.values.shape:
            raise ValueError("dofs and values must have matching shapes")


def dirichlet_dofs(space, predicate, value):
    """Collect boundary dofs whose coordinates satisfy ``predicate``.

    Includes edge dofs for degree >= 2. An empty match issues a warning
    rather than an error. ``value`` is a constant or a callable f(x, y).
    """
    cand = space.boundary_dofs
    if len(cand):
        x, y = space.dof_coords[cand, 0], space.dof_coords[cand, 1]
        keep = np.asarray(predicate(x, y), dtype=bool)
        dofs = cand[keep]
    else:
        dofs = cand
    if len(dofs) == 0:
        warnings.warn("Dirichlet predicate matched no boundary dofs", stacklevel=2)
    xd, yd = space.dof_coords[dofs, 0], space.dof_coords[dofs, 1]
    if callable(value):
        values = np.broadcast_to(np.asarray(value(xd, yd), dtype=float), dofs.shape).copy()
    else:
        values = np.full(len(dofs), float(value))
    return DirichletBC(dofs, values)
