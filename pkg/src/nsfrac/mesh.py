"""Structured triangulations of rectangles.

Uniform right-triangle grids with optional coordinate stretching and
periodic identification of opposite sides, plus the geometric queries
used by the rest of the package (mesh size, boundary lookup, VTK dump).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "build_rectangle",
    "mesh_from_arrays",
    "mesh_size_h",
    "boundary_vertices",
    "cell_areas",
    "write_vtk",
    "LEFT",
    "RIGHT",
    "BOTTOM",
    "TOP",
    "UNMARKED",
]

# side markers for boundary facets
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
UNMARKED = -1


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangulation.

    Attributes
    ----------
    vertices : (V, 2) float array
        Vertex coordinates.
    cells : (T, 3) int array
        Vertex indices per triangle, counterclockwise.
    boundary_facets : (F, 2) int array
        Vertex pairs of facets on the non-periodic part of the boundary.
    facet_markers : (F,) int array
        Side code per facet (LEFT/RIGHT/BOTTOM/TOP, or UNMARKED for
        hand-built meshes).
    periodic_pairs : dict
        Maps direction 'x'/'y' to a pair of int arrays (slaves, masters);
        slave vertices are identified with their master across the domain.
    extents : tuple
        (xmin, ymin, xmax, ymax) of the final (possibly transformed)
        coordinates.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    facet_markers: np.ndarray
    periodic_pairs: dict = field(default_factory=dict)
    extents: tuple = (0.0, 0.0, 1.0, 1.0)
    periodic_x: bool = False
    periodic_y: bool = False

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)


def _signed_areas(vertices, cells):
    p0 = vertices[cells[:, 0]]
    p1 = vertices[cells[:, 1]]
    p2 = vertices[cells[:, 2]]
    return 0.5 * np.cross(p1 - p0, p2 - p0)


def cell_areas(mesh):
    """Areas of all cells (positive for a valid mesh)."""
    return _signed_areas(mesh.vertices, mesh.cells)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _generic_boundary_facets(cells):
    """Edges incident to exactly one cell, as (F, 2) vertex pairs."""
    edges = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return edges[counts[inverse] == 1]


def build_rectangle(x0, y0, x1, y1, nx, ny, periodic_x=False, periodic_y=False,
                    transform=None):
    """Triangulate the rectangle [x0, x1] x [y0, y1] with 2*nx*ny cells.

    Every grid quad is split along its lower-left to upper-right diagonal,
    giving a mesh of right triangles that is uniform in both directions.
    Periodic flags identify the right/top boundary vertices with their
    partners on the left/bottom side; the pairing is computed on the
    uniform grid before the optional coordinate ``transform`` is applied
    vertex-wise, so stretched meshes keep valid pairs.

    Parameters
    ----------
    x0, y0, x1, y1 : float
        Rectangle corners, x1 > x0 and y1 > y0.
    nx, ny : int
        Number of grid cells per axis (>= 1).
    periodic_x, periodic_y : bool
        Identify opposite sides in the given direction.
    transform : callable, optional
        Maps an (V, 2) coordinate array to new coordinates. Must map the
        boundary to the boundary; a transform that produces a cell of
        nonpositive area raises ``ValueError`` naming the cell.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("require x1 > x0 and y1 > y0")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # index [iy, ix], vertex id = iy*(nx+1) + ix
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    ll = (iy * (nx + 1) + ix).ravel()
    lr = ll + 1
    ul = ll + (nx + 1)
    ur = ul + 1
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([ll, lr, ur])
    cells[1::2] = np.column_stack([ll, ur, ul])

    periodic_pairs = {}
    if periodic_x:
        rows = np.arange(ny + 1)
        periodic_pairs["x"] = (rows * (nx + 1) + nx, rows * (nx + 1))
    if periodic_y:
        cols = np.arange(nx + 1)
        periodic_pairs["y"] = (ny * (nx + 1) + cols, cols)

    # structured boundary facets with side markers; periodic sides dropped
    facets, markers = [], []
    if not periodic_x:
        rows = np.arange(ny)
        left = np.column_stack([rows * (nx + 1), (rows + 1) * (nx + 1)])
        right = left + nx
        facets += [left, right]
        markers += [np.full(ny, LEFT), np.full(ny, RIGHT)]
    if not periodic_y:
        cols = np.arange(nx)
        bottom = np.column_stack([cols, cols + 1])
        top = bottom + ny * (nx + 1)
        facets += [bottom, top]
        markers += [np.full(nx, BOTTOM), np.full(nx, TOP)]
    if facets:
        boundary_facets = np.concatenate(facets).astype(np.int64)
        facet_markers = np.concatenate(markers).astype(np.int64)
    else:
        boundary_facets = np.empty((0, 2), dtype=np.int64)
        facet_markers = np.empty(0, dtype=np.int64)

    if transform is not None:
        vertices = np.array(transform(vertices.copy()), dtype=float)
        if vertices.shape != (len(X.ravel()), 2):
            raise ValueError("transform must return an (V, 2) coordinate array")
        areas = _signed_areas(vertices, cells)
        bad = np.flatnonzero(areas <= 0)
        if len(bad):
            raise ValueError(
                f"transform produced nonpositive area in cell {bad[0]} "
                f"(area {areas[bad[0]]:.3e})")

    extents = (vertices[:, 0].min(), vertices[:, 1].min(),
               vertices[:, 0].max(), vertices[:, 1].max())

    # periodic pairs must still match in the tangential coordinate
    for direction, (slaves, masters) in periodic_pairs.items():
        tang = 1 if direction == "x" else 0
        span = extents[tang + 2] - extents[tang]
        gap = np.abs(vertices[slaves, tang] - vertices[masters, tang])
        if gap.max(initial=0.0) > 1e-12 * span:
            raise ValueError(
                f"periodic {direction}-pairs lost tangential alignment after "
                f"transform (max offset {gap.max():.3e})")

    _freeze(vertices, cells, boundary_facets, facet_markers)
    return Mesh(vertices, cells, boundary_facets, facet_markers,
                periodic_pairs, extents, periodic_x, periodic_y)


def mesh_from_arrays(vertices, cells):
    """Wrap explicit vertex/cell arrays as a Mesh (mainly for tests).

    Cells must be counterclockwise; boundary facets are detected as edges
    incident to exactly one cell and carry no side markers.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    areas = _signed_areas(vertices, cells)
    bad = np.flatnonzero(areas <= 0)
    if len(bad):
        raise ValueError(f"cell {bad[0]} is not counterclockwise (area {areas[bad[0]]:.3e})")
    boundary_facets = _generic_boundary_facets(cells)
    facet_markers = np.full(len(boundary_facets), UNMARKED, dtype=np.int64)
    extents = (vertices[:, 0].min(), vertices[:, 1].min(),
               vertices[:, 0].max(), vertices[:, 1].max())
    _freeze(vertices, cells, boundary_facets, facet_markers)
    return Mesh(vertices, cells, boundary_facets, facet_markers, {}, extents)


def mesh_size_h(mesh):
    """Mesh size: the maximum over cells of twice the circumradius."""
    if mesh.num_cells == 0:
        raise ValueError("empty mesh")
    p0 = mesh.vertices[mesh.cells[:, 0]]
    p1 = mesh.vertices[mesh.cells[:, 1]]
    p2 = mesh.vertices[mesh.cells[:, 2]]
    a = np.linalg.norm(p1 - p0, axis=1)
    b = np.linalg.norm(p2 - p1, axis=1)
    c = np.linalg.norm(p0 - p2, axis=1)
    areas = _signed_areas(mesh.vertices, mesh.cells)
    return float(np.max(a * b * c / (2.0 * areas)))


def boundary_vertices(mesh, predicate):
    """Vertices on the (non-periodic) boundary satisfying ``predicate``.

    ``predicate(x, y)`` receives coordinate arrays and must return a
    boolean array.
    """
    idx = np.unique(mesh.boundary_facets)
    if len(idx) == 0:
        return idx
    keep = np.asarray(predicate(mesh.vertices[idx, 0], mesh.vertices[idx, 1]), dtype=bool)
    return idx[keep]


def write_vtk(mesh, path):
    """Dump the mesh as legacy-VTK ASCII (POINTS/CELLS) for inspection."""
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("nsfrac mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x!r} {y!r} 0.0\n")
        f.write(f"CELLS {mesh.num_cells} {4 * mesh.num_cells}\n")
        for v0, v1, v2 in mesh.cells:
            f.write(f"3 {v0} {v1} {v2}\n")
        f.write(f"CELL_TYPES {mesh.num_cells}\n")
        f.write("\n".join(["5"] * mesh.num_cells) + "\n")
