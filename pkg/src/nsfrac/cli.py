"""Command-line entry point.

Replicates the key=value override interface on top of subcommands::

    nsfrac run problem=DrivenCavity Nx=20 Ny=20 [--out DIR]
    nsfrac study-spatial velocity_degree=1 pressure_degree=1 Ns=10,20,30
    nsfrac study-temporal dts=0.5,0.25 N=16
    nsfrac resume problem=... --checkpoint FILE [--out DIR]

Overrides are type-checked against the target parameter; unknown keys are
rejected with the list of valid keys. Runs write a per-step diagnostics
log, the final fields as legacy VTK and periodic checkpoints; studies
write CSV tables. NSFRAC_LOG controls verbosity (debug | info | quiet).
"""
from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fracstep import NSParameters, canonical_solver, restore, run
from .problems import get_problem
from .verify import rows_to_csv, run_spatial_study, run_temporal_study

__all__ = ["RunConfig", "parse_args", "main", "main_argv", "console_main",
           "write_vtk_fields"]

log = logging.getLogger("nsfrac")

_COMMANDS = ("run", "study-spatial", "study-temporal", "resume")

# study-only keys and their expected element type
_STUDY_KEYS = {
    "study-spatial": {"Ns": int, "dt": float, "T": float, "nu": float},
    "study-temporal": {"dts": float, "N": int, "T": float, "nu": float},
}


class CliError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    problem: str = "DrivenCavity"
    solver: str = None
    overrides: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    out: Path = Path("results")
    checkpoint: str = None
    log_level: str = "info"


def _infer(text):
    """key=value type inference: int, float, bool, comma list, else str."""
    if "," in text:
        return [_infer(part) for part in text.split(",")]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _coerce(key, value, target, token):
    """Check an inferred value against the default it overrides."""
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(target, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(target, str):
        if isinstance(value, str):
            return value
    else:
        return value
    raise CliError(
        f"cannot parse '{token}': expected a {type(target).__name__} for '{key}'")


def parse_args(argv):
    """Parse the CLI grammar into a RunConfig."""
    argv = list(argv)
    if not argv:
        raise CliError(f"usage: nsfrac <{'|'.join(_COMMANDS)}> [key=value ...] "
                       "[--out DIR] [--checkpoint FILE]")
    command = argv.pop(0)
    if command not in _COMMANDS:
        raise CliError(f"unknown subcommand '{command}'; valid: {', '.join(_COMMANDS)}")

    cfg = RunConfig(command=command,
                    log_level=os.environ.get("NSFRAC_LOG", "info").lower())
    tokens = []
    it = iter(argv)
    for arg in it:
        if arg == "--out":
            try:
                cfg.out = Path(next(it))
            except StopIteration:
                raise CliError("--out requires a directory argument") from None
        elif arg == "--checkpoint":
            try:
                cfg.checkpoint = next(it)
            except StopIteration:
                raise CliError("--checkpoint requires a file argument") from None
        elif "=" in arg:
            tokens.append(arg)
        else:
            raise CliError(f"malformed token '{arg}': expected key=value")

    pairs = []
    for token in tokens:
        key, _, text = token.partition("=")
        if not key or not text:
            raise CliError(f"malformed token '{token}': expected key=value")
        pairs.append((key, text, token))

    # problem and solver first; they define the valid key set
    for key, text, token in pairs:
        if key == "problem":
            cfg.problem = text
        elif key == "solver":
            cfg.solver = canonical_solver(text)

    problem_cls = get_problem(cfg.problem)
    probe = problem_cls()
    param_defaults = {f: getattr(probe.params, f) for f in NSParameters.field_names()
                      if isinstance(getattr(probe.params, f), (bool, int, float, str))}
    study_keys = _STUDY_KEYS.get(command, {})
    valid = sorted({"problem", "solver", *probe.config, *param_defaults, *study_keys})

    for key, text, token in pairs:
        if key in ("problem", "solver"):
            continue
        value = _infer(text)
        if key in study_keys:
            elem = study_keys[key]
            vals = value if isinstance(value, list) else value
            if isinstance(vals, list):
                if not all(isinstance(v, (int, float)) for v in vals):
                    raise CliError(f"cannot parse '{token}': expected numbers")
                cfg.study[key] = [elem(v) for v in vals]
            else:
                if not isinstance(vals, (int, float)):
                    raise CliError(f"cannot parse '{token}': expected a number")
                cfg.study[key] = elem(vals)
        elif key in probe.config:
            cfg.overrides[key] = _coerce(key, value, probe.config[key], token)
        elif key in param_defaults:
            cfg.overrides[key] = _coerce(key, value, param_defaults[key], token)
        else:
            raise CliError(f"unknown key '{key}'; valid keys: {', '.join(valid)}")

    if command == "resume" and cfg.checkpoint is None:
        raise CliError("resume requires --checkpoint FILE")
    return cfg


# ---------------------------------------------------------------------------
# output writers

def write_vtk_fields(path, mesh, velocity=None, pressure=None, scalars=None):
    """Legacy VTK (v3.0, UNSTRUCTURED_GRID) with vertex-sampled point data."""
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("nsfrac fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x!r} {y!r} 0.0\n")
        f.write(f"CELLS {mesh.num_cells} {4 * mesh.num_cells}\n")
        for v0, v1, v2 in mesh.cells:
            f.write(f"3 {v0} {v1} {v2}\n")
        f.write(f"CELL_TYPES {mesh.num_cells}\n")
        f.write("\n".join(["5"] * mesh.num_cells) + "\n")
        f.write(f"POINT_DATA {mesh.num_vertices}\n")
        if velocity is not None:
            u0, u1 = velocity
            vx = u0.dofs[u0.space.vertex_dofs]
            vy = u1.dofs[u1.space.vertex_dofs]
            f.write("VECTORS velocity double\n")
            for a, b in zip(vx, vy):
                f.write(f"{a!r} {b!r} 0.0\n")
        if pressure is not None:
            vals = pressure.dofs[pressure.space.vertex_dofs]
            f.write("SCALARS pressure double\nLOOKUP_TABLE default\n")
            f.write("\n".join(repr(float(v)) for v in vals) + "\n")
        for name, fld in (scalars or {}).items():
            vals = fld.dofs[fld.space.vertex_dofs]
            f.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
            f.write("\n".join(repr(float(v)) for v in vals) + "\n")


def _write_run_log(path, cfg, params, diagnostics):
    with open(path, "w") as f:
        f.write(f"# nsfrac {cfg.command} problem={cfg.problem}\n")
        for key in sorted(cfg.overrides):
            f.write(f"# override {key}={cfg.overrides[key]}\n")
        f.write(f"# nu={params.nu} dt={params.dt} T={params.T} "
                f"solver={params.solver} max_iters={params.max_iters}\n")
        f.write("step t u_iters p_iters courant energy div_after\n")
        for d in diagnostics:
            f.write(f"{d.step} {d.t:.10g} {sum(d.u_iterations)} {d.p_iterations} "
                    f"{d.courant:.6g} {d.kinetic_energy:.10g} {d.div_after:.6g}\n")


# ---------------------------------------------------------------------------
# orchestration

def _build_problem(cfg):
    overrides = dict(cfg.overrides)
    if cfg.solver is not None:
        overrides["solver"] = cfg.solver
    return get_problem(cfg.problem)(**overrides)


def _finalize_run(cfg, problem, state, diagnostics):
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_run_log(cfg.out / "run.log", cfg, problem.params, diagnostics)
    scalars = {name: type(state.u_fields[0])(state.vspace, state.scalars[name])
               for name in state.scalar_names}
    write_vtk_fields(cfg.out / "final.vtk", state.vspace.mesh,
                     velocity=state.u_fields, pressure=state.p_field,
                     scalars=scalars)
    exact = problem.reference_solution
    if exact is not None:
        from .verify import l2_error
        fx, fy = exact.u(state.t)
        err_u = l2_error(state.u_fields, (fx, fy))
        err_p = l2_error(state.p_field, exact.p(state.t))
        with open(cfg.out / "errors.csv", "w") as f:
            f.write("t,err_u,err_p\n")
            f.write(f"{state.t!r},{err_u!r},{err_p!r}\n")
        log.info("errors at t=%.4g: u %.6e, p %.6e", state.t, err_u, err_p)
    log.info("run finished at t=%.6g after %d steps", state.t, state.n)


def main(cfg):
    """Execute a parsed RunConfig; returns the process exit status."""
    level = {"debug": logging.DEBUG, "info": logging.INFO,
             "quiet": logging.ERROR}.get(cfg.log_level, logging.INFO)
    logging.basicConfig(level=level, format="%(name)s: %(message)s")

    if cfg.command in ("run", "resume"):
        problem = _build_problem(cfg)
        cfg.out.mkdir(parents=True, exist_ok=True)
        initial_state = None
        if cfg.command == "resume":
            from .fem import build_space
            mesh = problem.mesh()
            vspace = build_space(mesh, problem.params.velocity_degree)
            pspace = (vspace
                      if problem.params.pressure_degree == problem.params.velocity_degree
                      else build_space(mesh, problem.params.pressure_degree))
            initial_state = restore(cfg.checkpoint, vspace, pspace,
                                    problem.scalars())
            log.info("resuming from %s at step %d, t=%.6g",
                     cfg.checkpoint, initial_state.n, initial_state.t)
        state, diagnostics = run(problem, initial_state=initial_state,
                                 checkpoint_path=str(cfg.out / "checkpoint.nsf"))
        _finalize_run(cfg, problem, state, diagnostics)
        return 0

    if cfg.command == "study-spatial":
        degrees = (cfg.overrides.get("velocity_degree", 1),
                   cfg.overrides.get("pressure_degree", 1))
        kw = dict(degrees=degrees)
        kw.update({k: v for k, v in cfg.study.items() if k in ("Ns", "dt", "T", "nu")})
        if cfg.solver is not None:
            kw["solver"] = cfg.solver
        rows = run_spatial_study(**kw)
        cfg.out.mkdir(parents=True, exist_ok=True)
        path = cfg.out / "spatial.csv"
    else:
        kw = {}
        if "dts" in cfg.study:
            kw["dts"] = cfg.study["dts"]
        for key in ("N", "T", "nu"):
            if key in cfg.study:
                kw[key] = cfg.study[key]
        if "velocity_degree" in cfg.overrides or "pressure_degree" in cfg.overrides:
            kw["degrees"] = (cfg.overrides.get("velocity_degree", 4),
                             cfg.overrides.get("pressure_degree", 3))
        if cfg.solver is not None:
            kw["solver"] = cfg.solver
        rows = run_temporal_study(**kw)
        cfg.out.mkdir(parents=True, exist_ok=True)
        path = cfg.out / "temporal.csv"

    text = rows_to_csv(rows, path)
    sys.stdout.write(text)
    log.info("study table written to %s", path)
    return 0


def main_argv(argv=None):
    """Parse and execute; all errors come back as a nonzero exit status."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
        return main(cfg)
    except (CliError, ValueError) as exc:
        print(f"nsfrac: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver and io failures
        print(f"nsfrac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def console_main():
    raise SystemExit(main_argv())
