"""Fractional-step time integration for incompressible flow.

One generic time loop with user hooks drives either of two incremental
pressure-correction solvers: a naive one that reassembles every form each
time step (slow, transparent, the oracle for the other) and an optimized
one built on preassembled operators, where the work matrix doubles as the
intermediate right-hand-side operator. Velocity components are solved
segregated; passive scalars ride on the velocity space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .assembly import (apply_bc_values, apply_dirichlet_single, assemble_body_force,
                       assemble_convection, assemble_load, assemble_mass,
                       assemble_stiffness, bc_rows, build_operators, divergence_rhs,
                       gradient_rhs)
from .fem import Field, build_space
from .sparse import KrylovConfig, KrylovError, solve, subtract_mean

__all__ = [
    "NSParameters",
    "SolutionState",
    "Hooks",
    "StepDiagnostics",
    "SolverError",
    "CheckpointError",
    "canonical_solver",
    "run",
    "checkpoint",
    "restore",
    "new_state",
    "kinetic_energy",
    "SOLVER_ALIASES",
]

SOLVER_ALIASES = {
    "ipcs_abcn": "ipcs_abcn",
    "ipcs_naive": "ipcs_naive",
    "IPCS": "ipcs_naive",
    "IPCS_ABCN": "ipcs_abcn",
}


def canonical_solver(name):
    try:
        return SOLVER_ALIASES[name]
    except KeyError:
        raise ValueError(
            f"unknown solver '{name}'; valid: {sorted(SOLVER_ALIASES)}") from None


class SolverError(RuntimeError):
    """Time integration failure, annotated with step and time."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or does not match the discretization."""


def _default_krylov(method):
    return lambda: KrylovConfig(method=method)


@dataclass
class NSParameters:
    """Solver configuration.

    ``solver`` picks the implementation (ipcs_naive | ipcs_abcn),
    ``convection`` the convection discretization (abcn: implicit
    Crank-Nicolson with extrapolated convecting velocity; abe: fully
    explicit Adams-Bashforth) and ``velocity_update`` how the projection
    step is inverted (mass_solve | lumping).
    """

    nu: float = 0.001
    dt: float = 0.001
    T: float = 1.0
    max_iters: int = 1
    velocity_degree: int = 2
    pressure_degree: int = 1
    solver: str = "ipcs_abcn"
    convection: str = "abcn"
    velocity_update: str = "mass_solve"
    low_memory: bool = False
    krylov_velocity: KrylovConfig = field(default_factory=_default_krylov("bicgstab"))
    krylov_pressure: KrylovConfig = field(default_factory=_default_krylov("minres"))
    krylov_update: KrylovConfig = field(default_factory=_default_krylov("cg"))
    krylov_scalar: KrylovConfig = field(default_factory=_default_krylov("bicgstab"))
    checkpoint_interval: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least dt")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        canonical_solver(self.solver)
        if self.convection not in ("abcn", "abe"):
            raise ValueError(f"unknown convection scheme '{self.convection}'")
        if self.velocity_update not in ("mass_solve", "lumping"):
            raise ValueError(f"unknown velocity update '{self.velocity_update}'")

    def replace(self, **kw):
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Hooks:
    """Optional callbacks into the time loop.

    Each receives ``(state, ctx, **kw)`` where ctx is the active solver
    implementation (operators, parameters, boundary conditions and the
    freshly assembled right-hand sides are reachable through it). Absent
    hooks are no-ops.
    """

    start_timestep: object = None
    velocity_tentative: object = None
    pressure: object = None
    scalar: object = None
    temporal: object = None
    theend: object = None


def _merge_hooks(base, override):
    if override is None:
        return base or Hooks()
    if base is None:
        return override
    merged = {}
    for f in fields(Hooks):
        merged[f.name] = getattr(override, f.name) or getattr(base, f.name)
    return Hooks(**merged)


@dataclass
class StepDiagnostics:
    step: int
    t: float
    u_iterations: list
    u_residuals: list
    p_iterations: int
    p_residual: float
    phi_norms: list
    alg2_defect: float
    div_before: float
    div_after: float
    courant: float
    kinetic_energy: float
    pressure_rhs_defect: float


@dataclass(eq=False)
class SolutionState:
    """Velocity/pressure/scalar dof vectors at the three stored time levels."""

    vspace: object
    pspace: object
    q: list
    q1: list
    q2: list
    p: np.ndarray
    phi: np.ndarray
    scalars: dict
    scalars_prev: dict
    diffusivity: dict
    scalar_names: list
    t: float = 0.0
    n: int = 0
    stop: bool = False

    @property
    def u_fields(self):
        return [Field(self.vspace, self.q[k]) for k in range(2)]

    @property
    def p_field(self):
        return Field(self.pspace, self.p)


def new_state(vspace, pspace, scalar_specs=()):
    nv, npr = vspace.ndofs, pspace.ndofs
    state = SolutionState(
        vspace, pspace,
        q=[np.zeros(nv), np.zeros(nv)],
        q1=[np.zeros(nv), np.zeros(nv)],
        q2=[np.zeros(nv), np.zeros(nv)],
        p=np.zeros(npr), phi=np.zeros(npr),
        scalars={}, scalars_prev={}, diffusivity={}, scalar_names=[])
    for spec in scalar_specs:
        state.scalar_names.append(spec.name)
        state.diffusivity[spec.name] = spec.diffusivity
        state.scalars[spec.name] = np.zeros(nv)
        state.scalars_prev[spec.name] = np.zeros(nv)
    return state


# ---------------------------------------------------------------------------
# solver implementations

def _checked_velocity_bc_rows(bcs):
    rows0 = bc_rows(bcs.get("u0", []))
    rows1 = bc_rows(bcs.get("u1", []))
    if not np.array_equal(rows0, rows1):
        raise ValueError(
            "velocity components constrain different Dirichlet dof sets; the "
            "shared coefficient matrix requires identical locations")
    return rows0


class IpcsAbcn:
    """Optimized solver: preassembled constant operators, one work matrix
    rebuilt in place per step that also produces the transport part of the
    right-hand side in an intermediate form."""

    name = "ipcs_abcn"

    def __init__(self, vspace, pspace, params, bcs, b0, scalar_sources,
                 has_scalars=False):
        self.vspace = vspace
        self.pspace = pspace
        self.params = params
        self.bcs = bcs
        self.b0 = b0
        self.scalar_sources = scalar_sources
        self._has_scalars = has_scalars
        self.ops = build_operators(vspace, pspace, low_memory=params.low_memory)
        self.b_tmp = [np.zeros(vspace.ndofs), np.zeros(vspace.ndofs)]
        self.vel_bc_rows = _checked_velocity_bc_rows(bcs)
        self.p_bc_rows = bc_rows(bcs.get("p", []))
        if len(self.p_bc_rows):
            self.ops.pressure_laplacian.zero_rows_unit_diagonal(self.p_bc_rows)
        self._two_m_dt = (2.0 / params.dt) * self.ops.mass.data
        self._conv_stash = None
        self._conv_work = None
        self._scalar_work = None
        self.pressure_rhs = None

    # helpers ---------------------------------------------------------

    def _conv_matrix(self):
        if self._conv_work is None:
            self._conv_work = self.ops.work.copy(share_pattern=True)
        return self._conv_work

    def mass_matrix(self):
        return self.ops.mass

    def divergence_norm(self, u):
        return float(np.linalg.norm(self.ops.apply_divergence(u)))

    # algorithm steps ---------------------------------------------------

    def assemble_first_inner_iter(self, state):
        """Rebuild the work matrix and the constant part of the velocity
        right-hand sides for this step; returns the identity defect
        max|A_final + A_intermediate - 2M/dt|."""
        p = self.params
        ops = self.ops
        A = ops.work
        if p.convection == "abcn":
            u_ab = [1.5 * state.q1[k] - 0.5 * state.q2[k] for k in range(2)]
            assemble_convection(self.vspace, u_ab, out=A)
            self._conv_stash = A.data.copy() if self._has_scalars else None
            A.scale(-0.5)
            A.axpy(1.0 / p.dt, ops.mass)
            A.axpy(-0.5 * p.nu, ops.stiffness)
            for k in range(2):
                self.b_tmp[k] = self.b0[k] + A.matvec(state.q1[k])
        else:  # fully explicit Adams-Bashforth convection
            self._conv_stash = None
            A.set_zero()
            A.axpy(1.0 / p.dt, ops.mass)
            A.axpy(-0.5 * p.nu, ops.stiffness)
            for k in range(2):
                self.b_tmp[k] = self.b0[k] + A.matvec(state.q1[k])
            C = self._conv_matrix()
            assemble_convection(self.vspace, state.q1, out=C)
            for k in range(2):
                self.b_tmp[k] -= 1.5 * C.matvec(state.q1[k])
            assemble_convection(self.vspace, state.q2, out=C)
            for k in range(2):
                self.b_tmp[k] += 0.5 * C.matvec(state.q2[k])
        a_int = A.data.copy()
        A.scale(-1.0)
        A.axpy(2.0 / p.dt, ops.mass)
        defect = float(np.max(np.abs(A.data + a_int - self._two_m_dt)))
        if len(self.vel_bc_rows):
            A.zero_rows_unit_diagonal(self.vel_bc_rows)
        return defect

    def tentative_rhs(self, state, k):
        b = self.b_tmp[k] - self.ops.apply_gradient(state.p, k)
        apply_bc_values(b, self.bcs.get(f"u{k}", []))
        return b

    def solve_tentative(self, state, k, b):
        res = solve(self.ops.work, b, x0=state.q[k], cfg=self.params.krylov_velocity)
        state.q[k] = res.x
        return res

    def pressure_correction(self, state, hook=None):
        ops = self.ops
        dt = self.params.dt
        lap = ops.pressure_laplacian
        rhs = lap.matvec(state.p) - ops.apply_divergence(state.q) / dt
        rhs_defect = 0.0
        if len(self.p_bc_rows):
            apply_bc_values(rhs, self.bcs["p"])
        else:
            rhs_defect = float(abs(rhs.sum()))
            if rhs_defect > 1e-8 * max(1.0, float(np.linalg.norm(rhs))):
                warnings.warn(
                    f"pressure right-hand side is not mean-zero "
                    f"(defect {rhs_defect:.3e}); boundary data may be incompatible")
        self.pressure_rhs = rhs
        if hook is not None:
            hook()
        p_star = state.p.copy()
        res = solve(lap, rhs, x0=state.p, cfg=self.params.krylov_pressure)
        p_new = res.x
        if not len(self.p_bc_rows):
            p_new = subtract_mean(p_new, ops.pressure_mass_lumped)
        state.phi = p_new - p_star
        state.p = p_new
        return res, rhs_defect

    def velocity_update(self, state):
        p = self.params
        for k in range(2):
            g = self.ops.apply_gradient(state.phi, k)
            if p.velocity_update == "lumping":
                state.q[k] = state.q[k] - p.dt * g / self.ops.mass_lumped
            else:
                rhs = self.ops.mass.matvec(state.q[k]) - p.dt * g
                res = solve(self.ops.mass, rhs, x0=state.q[k], cfg=p.krylov_update)
                state.q[k] = res.x
            apply_bc_values(state.q[k], self.bcs.get(f"u{k}", []))

    def _scalar_conv_data(self, state):
        if self._conv_stash is None:
            C = self._conv_matrix()
            u_ab = [1.5 * state.q1[k] - 0.5 * state.q2[k] for k in range(2)]
            assemble_convection(self.vspace, u_ab, out=C)
            self._conv_stash = C.data.copy()
        return self._conv_stash

    def scalar_step(self, state, name):
        p = self.params
        ops = self.ops
        diff = state.diffusivity[name]
        if self._scalar_work is None:
            self._scalar_work = ops.work.copy(share_pattern=True)
        A = self._scalar_work
        A.data[:] = (ops.mass.data / p.dt + 0.5 * self._scalar_conv_data(state)
                     + 0.5 * diff * ops.stiffness.data)
        c1 = state.scalars_prev[name]
        rhs = (2.0 / p.dt) * ops.mass.matvec(c1) - A.matvec(c1)
        src = self.scalar_sources.get(name)
        if src is not None:
            rhs = rhs + src
        apply_dirichlet_single(A, rhs, self.bcs.get(name, []))
        res = solve(A, rhs, x0=state.scalars[name], cfg=p.krylov_scalar)
        state.scalars[name] = res.x
        return res


class IpcsNaive:
    """Reference solver: every form is reassembled term by term each time
    step and the coupling terms are integrated directly, with no reuse of
    the optimized in-place matrix algebra."""

    name = "ipcs_naive"

    def __init__(self, vspace, pspace, params, bcs, b0, scalar_sources,
                 has_scalars=False):
        self.vspace = vspace
        self.pspace = pspace
        self.params = params
        self.bcs = bcs
        self.b0 = b0
        self.scalar_sources = scalar_sources
        self.b_tmp = [np.zeros(vspace.ndofs), np.zeros(vspace.ndofs)]
        self.vel_bc_rows = _checked_velocity_bc_rows(bcs)
        self.p_bc_rows = bc_rows(bcs.get("p", []))
        self._p_weights = assemble_mass(pspace).lump()
        self._mass_for_diag = assemble_mass(vspace)
        self.A = None
        self._mass_step = None
        self._conv_step = None
        self.pressure_rhs = None

    def mass_matrix(self):
        return self._mass_for_diag

    def divergence_norm(self, u):
        return float(np.linalg.norm(divergence_rhs(self.pspace, self.vspace, u)))

    def assemble_first_inner_iter(self, state):
        p = self.params
        vs = self.vspace
        m = assemble_mass(vs)
        k_ = assemble_stiffness(vs)
        A = m.copy(share_pattern=True)
        if p.convection == "abcn":
            u_ab = [1.5 * state.q1[k] - 0.5 * state.q2[k] for k in range(2)]
            c = assemble_convection(vs, u_ab)
            A.data[:] = m.data / p.dt + 0.5 * c.data + 0.5 * p.nu * k_.data
            for k in range(2):
                self.b_tmp[k] = (self.b0[k] + m.matvec(state.q1[k]) / p.dt
                                 - 0.5 * c.matvec(state.q1[k])
                                 - 0.5 * p.nu * k_.matvec(state.q1[k]))
        else:
            c1 = assemble_convection(vs, state.q1)
            c2 = assemble_convection(vs, state.q2)
            c = c1
            A.data[:] = m.data / p.dt + 0.5 * p.nu * k_.data
            for k in range(2):
                self.b_tmp[k] = (self.b0[k] + m.matvec(state.q1[k]) / p.dt
                                 - 0.5 * p.nu * k_.matvec(state.q1[k])
                                 - 1.5 * c1.matvec(state.q1[k])
                                 + 0.5 * c2.matvec(state.q2[k]))
        if len(self.vel_bc_rows):
            A.zero_rows_unit_diagonal(self.vel_bc_rows)
        self.A = A
        self._mass_step = m
        self._conv_step = c
        return None

    def tentative_rhs(self, state, k):
        b = self.b_tmp[k] - gradient_rhs(self.vspace, self.pspace, state.p, k)
        apply_bc_values(b, self.bcs.get(f"u{k}", []))
        return b

    def solve_tentative(self, state, k, b):
        res = solve(self.A, b, x0=state.q[k], cfg=self.params.krylov_velocity)
        state.q[k] = res.x
        return res

    def pressure_correction(self, state, hook=None):
        dt = self.params.dt
        lap = assemble_stiffness(self.pspace)
        rhs = lap.matvec(state.p) - divergence_rhs(self.pspace, self.vspace,
                                                   state.q) / dt
        rhs_defect = 0.0
        if len(self.p_bc_rows):
            lap.zero_rows_unit_diagonal(self.p_bc_rows)
            apply_bc_values(rhs, self.bcs["p"])
        else:
            rhs_defect = float(abs(rhs.sum()))
            if rhs_defect > 1e-8 * max(1.0, float(np.linalg.norm(rhs))):
                warnings.warn(
                    f"pressure right-hand side is not mean-zero "
                    f"(defect {rhs_defect:.3e}); boundary data may be incompatible")
        self.pressure_rhs = rhs
        if hook is not None:
            hook()
        p_star = state.p.copy()
        res = solve(lap, rhs, x0=state.p, cfg=self.params.krylov_pressure)
        p_new = res.x
        if not len(self.p_bc_rows):
            p_new = subtract_mean(p_new, self._p_weights)
        state.phi = p_new - p_star
        state.p = p_new
        return res, rhs_defect

    def velocity_update(self, state):
        p = self.params
        m = self._mass_step
        for k in range(2):
            g = gradient_rhs(self.vspace, self.pspace, state.phi, k)
            if p.velocity_update == "lumping":
                state.q[k] = state.q[k] - p.dt * g / m.lump()
            else:
                rhs = m.matvec(state.q[k]) - p.dt * g
                res = solve(m, rhs, x0=state.q[k], cfg=p.krylov_update)
                state.q[k] = res.x
            apply_bc_values(state.q[k], self.bcs.get(f"u{k}", []))

    def scalar_step(self, state, name):
        p = self.params
        diff = state.diffusivity[name]
        m = self._mass_step
        k_ = assemble_stiffness(self.vspace)
        c = self._conv_step
        if p.convection == "abe":
            c = assemble_convection(
                self.vspace, [1.5 * state.q1[k] - 0.5 * state.q2[k] for k in range(2)])
        A = m.copy(share_pattern=True)
        A.data[:] = m.data / p.dt + 0.5 * c.data + 0.5 * diff * k_.data
        c1 = state.scalars_prev[name]
        rhs = (m.matvec(c1) / p.dt - 0.5 * c.matvec(c1)
               - 0.5 * diff * k_.matvec(c1))
        src = self.scalar_sources.get(name)
        if src is not None:
            rhs = rhs + src
        apply_dirichlet_single(A, rhs, self.bcs.get(name, []))
        res = solve(A, rhs, x0=state.scalars[name], cfg=p.krylov_scalar)
        state.scalars[name] = res.x
        return res


# ---------------------------------------------------------------------------
# time loop

_VALID_BC_KEYS = {"u0", "u1", "p"}


def kinetic_energy(mass, q):
    """0.5 * sum_k q_k . M q_k for velocity dof vectors q."""
    return 0.5 * sum(float(np.dot(q[k], mass.matvec(q[k]))) for k in range(2))


def _min_edge(mesh):
    p0 = mesh.vertices[mesh.cells[:, 0]]
    p1 = mesh.vertices[mesh.cells[:, 1]]
    p2 = mesh.vertices[mesh.cells[:, 2]]
    lengths = np.stack([np.linalg.norm(p1 - p0, axis=1),
                        np.linalg.norm(p2 - p1, axis=1),
                        np.linalg.norm(p0 - p2, axis=1)])
    return float(lengths.min())


def _nan_guard(state):
    for k in range(2):
        if not np.all(np.isfinite(state.q[k])):
            return f"velocity component u{k}"
    if not np.all(np.isfinite(state.p)):
        return "pressure"
    for name, c in state.scalars.items():
        if not np.all(np.isfinite(c)):
            return f"scalar '{name}'"
    return None


def _num_steps(T, dt):
    approx = T / dt
    n = int(round(approx))
    if abs(approx - n) > 1e-8:
        n = int(np.floor(approx + 1e-12))
    return n


def run(problem, params=None, hooks=None, initial_state=None, checkpoint_path=None):
    """Advance the problem from t=0 (or a restored state) to t=T.

    Per step: an inner loop of ``max_iters`` rounds of tentative velocity
    solves (one per component) followed by a pressure correction, then the
    velocity update, then the scalar solves. Returns the final state and
    the list of per-step diagnostics.
    """
    params = params if params is not None else problem.params
    solver_name = canonical_solver(params.solver)
    mesh = problem.mesh()
    vspace = build_space(mesh, params.velocity_degree)
    if params.pressure_degree == params.velocity_degree:
        pspace = vspace
    else:
        pspace = build_space(mesh, params.pressure_degree)
    specs = list(problem.scalars())

    if initial_state is None:
        state = new_state(vspace, pspace, specs)
        for spec in specs:
            if spec.ic is not None:
                from .fem import interpolate
                state.scalars_prev[spec.name][:] = interpolate(vspace, spec.ic).dofs
        problem.initialize(state)
        for k in range(2):
            state.q[k][:] = state.q1[k]
        for name in state.scalar_names:
            state.scalars[name][:] = state.scalars_prev[name]
    else:
        state = initial_state
        if state.vspace.ndofs != vspace.ndofs or state.pspace.ndofs != pspace.ndofs:
            raise CheckpointError("restored state does not match the discretization")
        state.vspace, state.pspace = vspace, pspace

    bcs = dict(problem.create_bcs(vspace, pspace))
    valid_keys = _VALID_BC_KEYS | set(state.scalar_names)
    unknown = set(bcs) - valid_keys
    if unknown:
        raise ValueError(f"boundary condition keys {sorted(unknown)} not in {sorted(valid_keys)}")

    b0 = assemble_body_force(vspace, problem.body_force())
    sources = {spec.name: assemble_load(vspace, spec.source)
               for spec in specs if spec.source is not None}

    impl_cls = IpcsAbcn if solver_name == "ipcs_abcn" else IpcsNaive
    impl = impl_cls(vspace, pspace, params, bcs, b0, sources,
                    has_scalars=bool(specs))
    hooks = _merge_hooks(problem.hooks(), hooks)

    diagnostics = []
    h_min = _min_edge(mesh)
    mass_diag = impl.mass_matrix()
    nsteps = _num_steps(params.T, params.dt)

    for n in range(state.n + 1, nsteps + 1):
        state.n = n
        state.t = n * params.dt
        try:
            if hooks.start_timestep:
                hooks.start_timestep(state, impl)
            u_iters, u_resid, phi_norms = [], [], []
            alg2_defect = np.nan
            p_res = None
            rhs_defect = 0.0
            for inner in range(params.max_iters):
                if inner == 0:
                    d = impl.assemble_first_inner_iter(state)
                    alg2_defect = np.nan if d is None else d
                    if d is not None and d > 1e-12:
                        raise SolverError(
                            f"work-matrix identity defect {d:.3e} exceeds 1e-12 "
                            f"at step {n}")
                for k in range(2):
                    b = impl.tentative_rhs(state, k)
                    if hooks.velocity_tentative:
                        hooks.velocity_tentative(state, impl, component=k, rhs=b)
                    res = impl.solve_tentative(state, k, b)
                    u_iters.append(res.iterations)
                    u_resid.append(res.residual)
                p_hook = None
                if hooks.pressure:
                    p_hook = lambda: hooks.pressure(state, impl)  # noqa: E731
                p_res, rhs_defect = impl.pressure_correction(state, hook=p_hook)
                phi_norms.append(float(np.linalg.norm(state.phi)))
            div_before = impl.divergence_norm(state.q)
            impl.velocity_update(state)
            div_after = impl.divergence_norm(state.q)
            for name in state.scalar_names:
                if hooks.scalar:
                    hooks.scalar(state, impl, name=name)
                impl.scalar_step(state, name)
            if hooks.temporal:
                hooks.temporal(state, impl)
        except KrylovError as exc:
            raise SolverError(
                f"linear solver failed at step {n}, t={state.t:.6g}: {exc}") from exc

        bad = _nan_guard(state)
        if bad is not None:
            raise SolverError(f"NaN detected in {bad} at step {n}, t={state.t:.6g}")

        speed = np.sqrt(state.q[0] ** 2 + state.q[1] ** 2)
        diagnostics.append(StepDiagnostics(
            step=n, t=state.t,
            u_iterations=u_iters, u_residuals=u_resid,
            p_iterations=p_res.iterations, p_residual=p_res.residual,
            phi_norms=phi_norms, alg2_defect=alg2_defect,
            div_before=div_before, div_after=div_after,
            courant=float(speed.max() * params.dt / h_min),
            kinetic_energy=kinetic_energy(mass_diag, state.q),
            pressure_rhs_defect=rhs_defect))

        # rotate time levels: q2 <- q1 <- q, then q starts as a copy of q1
        for k in range(2):
            state.q2[k], state.q1[k], state.q[k] = \
                state.q1[k], state.q[k], state.q2[k]
            state.q[k][:] = state.q1[k]
        for name in state.scalar_names:
            state.scalars_prev[name], state.scalars[name] = \
                state.scalars[name], state.scalars_prev[name]
            state.scalars[name][:] = state.scalars_prev[name]

        if (checkpoint_path and params.checkpoint_interval > 0
                and n % params.checkpoint_interval == 0):
            checkpoint(state, checkpoint_path)
        if state.stop:
            break

    if hooks.theend:
        hooks.theend(state, impl)
    return state, diagnostics


# ---------------------------------------------------------------------------
# checkpointing

_CHECKPOINT_MAGIC = "NSFRAC1"


def checkpoint(state, path):
    """Write the state as text; the round trip is bit-exact."""
    with open(path, "w") as f:
        f.write(f"{_CHECKPOINT_MAGIC} t={state.t!r} n={state.n} "
                f"ndofs_v={state.vspace.ndofs} ndofs_p={state.pspace.ndofs} "
                f"nscalars={len(state.scalar_names)}\n")
        arrays = [state.q1[0], state.q1[1], state.q2[0], state.q2[1], state.p]
        arrays += [state.scalars_prev[name] for name in state.scalar_names]
        for arr in arrays:
            f.write(" ".join(repr(float(v)) for v in arr) + "\n")


def restore(path, vspace, pspace, scalar_specs=()):
    """Rebuild a SolutionState from a checkpoint file."""
    with open(path) as f:
        header = f.readline().split()
        if not header or header[0] != _CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a {_CHECKPOINT_MAGIC} checkpoint")
        try:
            meta = dict(item.split("=", 1) for item in header[1:])
            t = float(meta["t"])
            n = int(meta["n"])
            ndofs_v = int(meta["ndofs_v"])
            ndofs_p = int(meta["ndofs_p"])
            nscalars = int(meta["nscalars"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed header") from exc
        if ndofs_v != vspace.ndofs or ndofs_p != pspace.ndofs:
            raise CheckpointError(
                f"{path}: checkpoint has {ndofs_v}/{ndofs_p} velocity/pressure "
                f"dofs, spaces have {vspace.ndofs}/{pspace.ndofs}")
        specs = list(scalar_specs)
        if nscalars != len(specs):
            raise CheckpointError(
                f"{path}: checkpoint has {nscalars} scalars, problem declares "
                f"{len(specs)}")
        state = new_state(vspace, pspace, specs)
        state.t, state.n = t, n

        def read_array(length, what):
            line = f.readline()
            vals = np.array([float(v) for v in line.split()])
            if len(vals) != length:
                raise CheckpointError(
                    f"{path}: {what} has {len(vals)} values, expected {length}")
            return vals

        for k in range(2):
            state.q1[k][:] = read_array(ndofs_v, f"q1[{k}]")
        for k in range(2):
            state.q2[k][:] = read_array(ndofs_v, f"q2[{k}]")
        state.p[:] = read_array(ndofs_p, "pressure")
        for spec in specs:
            state.scalars_prev[spec.name][:] = read_array(ndofs_v, spec.name)
            state.scalars[spec.name][:] = state.scalars_prev[spec.name]
        for k in range(2):
            state.q[k][:] = state.q1[k]
    return state
