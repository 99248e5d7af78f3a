"""Problem plug-in interface and the built-in flow cases.

A Problem supplies the mesh, boundary conditions, initialization, body
force, optional scalars and hooks; everything not overridden falls back
to benign defaults. Ships with the doubly periodic Taylor-Green vortex,
the lid-driven cavity on a cosine-stretched grid and a 2D pressure-driven
channel that is periodic in x and wall-refined in y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import dirichlet_dofs, interpolate
from .fracstep import Hooks, NSParameters
from .mesh import build_rectangle

__all__ = [
    "Problem",
    "ScalarSpec",
    "ExactSolution",
    "TaylorGreen2D",
    "DrivenCavity",
    "Channel2D",
    "PROBLEMS",
    "get_problem",
    "schema_check",
    "cavity_stretch",
    "channel_stretch",
    "taylor_green_velocity",
    "taylor_green_pressure",
]


@dataclass
class ScalarSpec:
    """A passive species: name, diffusivity, initial condition, source."""

    name: str
    diffusivity: float
    ic: object = None
    source: object = None


@dataclass
class ExactSolution:
    """Time-parametrized reference fields for verification runs."""

    u: object   # t -> (fx(x, y), fy(x, y))
    p: object   # t -> f(x, y)


class Problem:
    """Base class for flow cases.

    Subclasses override ``default_config`` (problem-specific keys, e.g.
    mesh resolution), ``parameter_defaults`` (solver parameter overrides)
    and the behavioral methods below. Construction keyword arguments may
    override any key from either map; unknown keys raise.
    """

    name = "Problem"
    reference_solution = None

    def __init__(self, **overrides):
        self.config = dict(self.default_config())
        pf = dict(self.parameter_defaults())
        known = set(NSParameters.field_names())
        for key, val in overrides.items():
            if key in self.config:
                self.config[key] = val
            elif key in known:
                pf[key] = val
            else:
                valid = sorted(self.config) + sorted(known)
                raise ValueError(
                    f"unknown parameter '{key}' for {self.name}; valid keys: "
                    + ", ".join(valid))
        self.params = NSParameters(**pf)

    def default_config(self):
        return {}

    def parameter_defaults(self):
        return {}

    def mesh(self):
        raise NotImplementedError

    def create_bcs(self, vspace, pspace):
        return {}

    def initialize(self, state):
        pass

    def body_force(self):
        return (0.0, 0.0)

    def scalars(self):
        return []

    def hooks(self):
        return Hooks()


# ---------------------------------------------------------------------------
# Taylor-Green vortex

def taylor_green_velocity(nu, t):
    """Analytic velocity components of the 2D Taylor-Green vortex."""
    decay = np.exp(-2.0 * np.pi ** 2 * nu * t)

    def fx(x, y):
        return -np.sin(np.pi * y) * np.cos(np.pi * x) * decay

    def fy(x, y):
        return np.sin(np.pi * x) * np.cos(np.pi * y) * decay

    return fx, fy


def taylor_green_pressure(nu, t):
    """Analytic pressure of the 2D Taylor-Green vortex (mean zero)."""
    decay = np.exp(-4.0 * np.pi ** 2 * nu * t)

    def f(x, y):
        return -0.25 * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y)) * decay

    return f


class TaylorGreen2D(Problem):
    """Decaying vortex on the doubly periodic square [0, 2] x [0, 2].

    The analytic solution initializes the run and serves as the
    reference for convergence studies.
    """

    name = "TaylorGreen2D"

    def default_config(self):
        return {"N": 10}

    def parameter_defaults(self):
        return dict(nu=0.01, dt=0.001, T=1.0,
                    velocity_degree=2, pressure_degree=1)

    def mesh(self):
        n = self.config["N"]
        return build_rectangle(0.0, 0.0, 2.0, 2.0, n, n,
                               periodic_x=True, periodic_y=True)

    def initialize(self, state):
        fx, fy = taylor_green_velocity(self.params.nu, 0.0)
        state.q1[0][:] = interpolate(state.vspace, fx).dofs
        state.q1[1][:] = interpolate(state.vspace, fy).dofs
        state.q2[0][:] = state.q1[0]
        state.q2[1][:] = state.q1[1]
        state.p[:] = interpolate(state.pspace,
                                 taylor_green_pressure(self.params.nu, 0.0)).dofs

    @property
    def reference_solution(self):
        nu = self.params.nu
        return ExactSolution(
            u=lambda t: taylor_green_velocity(nu, t),
            p=lambda t: taylor_green_pressure(nu, t))


# ---------------------------------------------------------------------------
# lid-driven cavity

def cavity_stretch(s):
    """Cosine grading of [0, 1] towards both ends; fixes 0, 1/2 and 1."""
    u = 2.0 * np.asarray(s) - 1.0
    return 0.5 * (np.cos(np.pi * (u - 1.0) / 2.0) + 1.0)


def _noslip(x, y):
    return np.abs(x * y * (1.0 - x)) < 1e-8


def _lid(x, y):
    return np.abs(y - 1.0) < 1e-8


class DrivenCavity(Problem):
    """Lid-driven cavity on the unit square, grid skewed towards walls.

    The lid (y=1) moves with velocity (1, 0); the remaining walls are
    no-slip, and the lid's value loses to no-slip at the two top corners.
    The fluid starts at rest with the boundary values enforced on both
    stored history levels.
    """

    name = "DrivenCavity"

    def default_config(self):
        return {"Nx": 50, "Ny": 50}

    def parameter_defaults(self):
        return dict(nu=0.001, dt=0.001, T=1.0)

    def mesh(self):
        return build_rectangle(0.0, 0.0, 1.0, 1.0,
                               self.config["Nx"], self.config["Ny"],
                               transform=lambda pts: cavity_stretch(pts))

    def create_bcs(self, vspace, pspace):
        lid_u0 = dirichlet_dofs(vspace, _lid, 1.0)
        lid_u1 = dirichlet_dofs(vspace, _lid, 0.0)
        walls = dirichlet_dofs(vspace, _noslip, 0.0)
        return {"u0": [lid_u0, walls], "u1": [lid_u1, walls], "p": []}

    def initialize(self, state):
        bcs = self.create_bcs(state.vspace, state.pspace)
        for k in range(2):
            for bc in bcs[f"u{k}"]:
                state.q1[k][bc.dofs] = bc.values
                state.q2[k][bc.dofs] = bc.values


# ---------------------------------------------------------------------------
# plane channel, 2D laminar analogue

def channel_stretch(y):
    """arctan grading of [-1, 1] towards the walls; fixes -1, 0 and 1."""
    return np.arctan(np.pi * np.asarray(y)) / np.arctan(np.pi)


class Channel2D(Problem):
    """Pressure-driven flow between walls at y = -1 and y = 1.

    Periodic in x, wall-refined in y, driven by the constant body force
    (u_tau^2, 0) with u_tau = nu * Re_tau. The laminar steady state is
    the parabolic profile u(y) = u_tau^2 (1 - y^2) / (2 nu). Setting the
    ``steady_tol`` config key stops the run once the relative velocity
    change per step drops below it.
    """

    name = "Channel2D"

    def default_config(self):
        return {"Nx": 128, "Ny": 128, "Lx": 2.0 * np.pi,
                "Re_tau": 395.0, "steady_tol": 0.0}

    def parameter_defaults(self):
        return dict(nu=2e-5, dt=0.05, T=1.0, velocity_degree=1)

    @property
    def u_tau(self):
        return self.params.nu * self.config["Re_tau"]

    def mesh(self):
        def stretch(pts):
            pts[:, 1] = channel_stretch(pts[:, 1])
            return pts

        return build_rectangle(0.0, -1.0, self.config["Lx"], 1.0,
                               self.config["Nx"], self.config["Ny"],
                               periodic_x=True, transform=stretch)

    def create_bcs(self, vspace, pspace):
        def walls(x, y):
            return np.abs((1.0 - y) * (1.0 + y)) < 1e-8

        bc = dirichlet_dofs(vspace, walls, 0.0)
        return {"u0": [bc], "u1": [bc], "p": []}

    def body_force(self):
        return (self.u_tau ** 2, 0.0)

    def steady_profile(self):
        """Analytic laminar steady state (fx(x, y), fy(x, y))."""
        scale = self.u_tau ** 2 / (2.0 * self.params.nu)

        def fx(x, y):
            return scale * (1.0 - y ** 2)

        def fy(x, y):
            return np.zeros_like(np.asarray(x, dtype=float))

        return fx, fy

    def hooks(self):
        tol = self.config["steady_tol"]
        if not tol > 0:
            return Hooks()

        def check_steady(state, ctx, **kw):
            num = sum(float(np.linalg.norm(state.q[k] - state.q1[k])) for k in range(2))
            den = max(sum(float(np.linalg.norm(state.q[k])) for k in range(2)), 1e-30)
            if num / den < tol:
                state.stop = True

        return Hooks(temporal=check_steady)


# ---------------------------------------------------------------------------
# registry

PROBLEMS = {
    "TaylorGreen2D": TaylorGreen2D,
    "TaylorGreen": TaylorGreen2D,
    "DrivenCavity": DrivenCavity,
    "Channel2D": Channel2D,
    "Channel": Channel2D,
}


def get_problem(name):
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown problem '{name}'; valid: {sorted(set(PROBLEMS))}") from None


def schema_check(problem):
    """Validate a problem instance: mesh sanity, bc keys, finite ICs."""
    from .fem import build_space
    from .fracstep import _VALID_BC_KEYS, new_state
    from .mesh import cell_areas

    mesh = problem.mesh()
    if np.any(cell_areas(mesh) <= 0):
        raise ValueError(f"{problem.name}: mesh has nonpositive cell areas")
    vspace = build_space(mesh, problem.params.velocity_degree)
    pspace = (vspace if problem.params.pressure_degree == problem.params.velocity_degree
              else build_space(mesh, problem.params.pressure_degree))
    specs = list(problem.scalars())
    valid = _VALID_BC_KEYS | {s.name for s in specs}
    bcs = problem.create_bcs(vspace, pspace)
    unknown = set(bcs) - valid
    if unknown:
        raise ValueError(f"{problem.name}: invalid bc keys {sorted(unknown)}")
    state = new_state(vspace, pspace, specs)
    problem.initialize(state)
    for arr in state.q1 + state.q2 + [state.p]:
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{problem.name}: initial condition is not finite")
    return True
