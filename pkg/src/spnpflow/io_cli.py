"""Run configuration, diagnostics/field output, and the command line.

Configuration is a flat ``key = value`` document with ``#`` comments; every
number written to disk uses 17 significant digits so values round-trip
through text without loss.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import manufactured, scenarios
from .errors import (CompatibilityError, ConfigError, NonFiniteError,
                     PositivityError, SolverError, StructuralViolation)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STRUCTURAL = 2
EXIT_SOLVER = 3

_FMT = "%.17g"


@dataclass
class RunConfig:
    """Flat run description: scenario selector plus overrides and flags."""

    scenario: str = "energy-decay"
    nx: int | None = None
    ny: int | None = None
    dt: float | None = None
    t_final: float | None = None
    re: float | None = None
    pe: float | None = None
    co: float | None = None
    lam: float | None = None
    mu0: float | None = None
    mu_inf: float | None = None
    lambda1: float | None = None
    k: float | None = None
    b_shift: float | None = None
    w: tuple | None = None          # row-major steric matrix entries
    solver: str = "direct"
    solver_tol: float = 1e-10
    clamp_viscosity: bool = True
    sigma_diffusion_coeff_one: bool = False
    strict_energy: bool = False
    xi_scales_dirichlet_potential: bool = True
    neutralize_net_charge: bool | None = None
    out_dir: str = "."
    snapshot_times: tuple = ()


_BOOL_KEYS = {"clamp_viscosity", "sigma_diffusion_coeff_one", "strict_energy",
              "xi_scales_dirichlet_potential", "neutralize_net_charge"}
_INT_KEYS = {"nx", "ny"}
_FLOAT_KEYS = {"dt", "t_final", "re", "pe", "co", "lam", "mu0", "mu_inf",
               "lambda1", "k", "b_shift", "solver_tol"}
_POSITIVE_KEYS = {"dt", "t_final", "re", "pe", "co", "lam", "mu0", "mu_inf",
                  "k", "b_shift", "solver_tol"}
_STR_KEYS = {"scenario", "solver", "out_dir"}
_TUPLE_KEYS = {"w", "snapshot_times"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _TUPLE_KEYS


def _parse_bool(text, key, lineno):
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"line {lineno}: cannot parse boolean for '{key}': "
                      f"{text!r}")


def parse_config(text):
    """Parse a key = value document into a validated RunConfig."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got "
                              f"{raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        try:
            if key in _BOOL_KEYS:
                values[key] = _parse_bool(val, key, lineno)
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _TUPLE_KEYS:
                values[key] = tuple(float(v) for v in val.split(",") if v.strip())
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") \
                from exc
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg):
    for key in _POSITIVE_KEYS:
        v = getattr(cfg, key)
        if v is not None and v <= 0:
            raise ConfigError(f"'{key}' must be positive, got {v}")
    if cfg.lambda1 is not None and cfg.lambda1 < 0:
        raise ConfigError(f"'lambda1' must be nonnegative, got {cfg.lambda1}")
    for key in _INT_KEYS:
        v = getattr(cfg, key)
        if v is not None and v < 1:
            raise ConfigError(f"'{key}' must be >= 1, got {v}")
    if cfg.mu0 is not None and cfg.mu_inf is not None \
            and not cfg.mu0 > cfg.mu_inf:
        raise ConfigError("'mu0' must exceed 'mu_inf'")
    if cfg.solver not in ("direct", "iterative"):
        raise ConfigError(f"'solver' must be direct or iterative, got "
                          f"{cfg.solver!r}")
    if cfg.w is not None:
        n = int(round(len(cfg.w) ** 0.5))
        if n * n != len(cfg.w):
            raise ConfigError("'w' must hold a square matrix row-major")
    _parse_scenario_name(cfg.scenario)


def emit_config(cfg):
    """Serialize a RunConfig so that parse(emit(cfg)) round-trips."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, bool):
            lines.append(f"{f.name} = {'true' if v else 'false'}")
        elif isinstance(v, tuple):
            if v:
                lines.append(f"{f.name} = " + ",".join(_FMT % x for x in v))
        elif isinstance(v, float):
            lines.append(f"{f.name} = " + _FMT % v)
        else:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def _parse_scenario_name(name):
    if name == "energy-decay":
        return ("energy-decay", None)
    if name == "manufactured":
        return ("manufactured", None)
    if name.startswith("steric:"):
        try:
            idx = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad steric index in {name!r}") from exc
        if not 0 <= idx < len(scenarios.STERIC_MATRICES):
            raise ConfigError(f"steric index out of range in {name!r}")
        return ("steric", idx)
    if name.startswith("exponent-k:"):
        try:
            k = float(name.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad exponent in {name!r}") from exc
        if k <= 0:
            raise ConfigError("exponent k must be positive")
        return ("exponent-k", k)
    raise ConfigError(f"unknown scenario {name!r}")


def worker_cap():
    """Worker count cap from SPNP_THREADS (the solver itself is sequential)."""
    raw = os.environ.get("SPNP_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SPNP_THREADS must be an integer, got {raw!r}") \
            from exc
    if cap < 1:
        raise ConfigError("SPNP_THREADS must be >= 1")
    return cap


# ----------------------------------------------------------------------
# writers
# ----------------------------------------------------------------------

CSV_HEADER = ("t,E_h,E_spnp,mass_p,mass_n,min_cp,min_cn,xi,r,"
              "visc_dissip,ionic_dissip")


def write_diagnostics_csv(records, path):
    """One row per diagnostics record at full double precision."""
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            if len(rec.masses) != 2:
                raise ValueError("diagnostics CSV expects two species")
            row = (rec.t, rec.e_total, rec.e_spnp, rec.masses[0],
                   rec.masses[1], rec.min_c[0], rec.min_c[1], rec.xi, rec.r,
                   rec.visc_dissip, rec.ionic_dissip)
            fh.write(",".join(_FMT % v for v in row) + "\n")


def read_diagnostics_csv(path):
    """Read back a diagnostics CSV as a dict of float arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows]) \
        if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def _refined_cells(mesh):
    """Split every quadratic triangle into 4 linear cells on its 6 dofs."""
    nv = mesh.n_nodes
    tri = mesh.triangles
    mid = nv + mesh.tri_edges      # dof ids of edge midpoints (m01, m12, m20)
    cells = np.empty((4 * mesh.n_triangles, 3), dtype=np.int64)
    cells[0::4] = np.column_stack([tri[:, 0], mid[:, 0], mid[:, 2]])
    cells[1::4] = np.column_stack([tri[:, 1], mid[:, 1], mid[:, 0]])
    cells[2::4] = np.column_stack([tri[:, 2], mid[:, 2], mid[:, 1]])
    cells[3::4] = mid
    return cells


def write_snapshot(state, mesh, path):
    """Legacy-VTK unstructured snapshot of c_p, c_n, V, p and u.

    Quadratic fields are written at their own dofs on a 4-way refined
    triangulation; the linear pressure is evaluated at the same points
    (edge midpoints average the endpoint values).
    """
    p2 = state.c[0].dofmap
    coords = p2.dof_coords()
    cells = _refined_cells(mesh)
    nv = mesh.n_nodes
    p_vals = np.concatenate([
        state.p.coefficients,
        0.5 * (state.p.coefficients[mesh.edges[:, 0]]
               + state.p.coefficients[mesh.edges[:, 1]]),
    ])
    scalars = [("c_p", state.c[0].coefficients),
               ("c_n", state.c[1].coefficients),
               ("V", state.v.coefficients),
               ("p", p_vals)]
    ux = state.u.component(0)
    uy = state.u.component(1)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(_FMT % state.t + " snapshot\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {coords.shape[0]} double\n")
        for x, y in coords:
            fh.write(f"{_FMT % x} {_FMT % y} 0\n")
        fh.write(f"CELLS {cells.shape[0]} {4 * cells.shape[0]}\n")
        for a, b, c in cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {cells.shape[0]}\n")
        fh.write("5\n" * cells.shape[0])
        fh.write(f"POINT_DATA {coords.shape[0]}\n")
        for name, vals in scalars:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in vals:
                fh.write(_FMT % v + "\n")
        fh.write("VECTORS u double\n")
        for vx, vy in zip(ux, uy):
            fh.write(f"{_FMT % vx} {_FMT % vy} 0\n")


# ----------------------------------------------------------------------
# running configs
# ----------------------------------------------------------------------

def build_scenario(cfg):
    """Scenario object for a config, with overrides applied."""
    kind, arg = _parse_scenario_name(cfg.scenario)
    mesh_kw = {}
    if cfg.nx is not None:
        mesh_kw["nx"] = cfg.nx
    if cfg.dt is not None:
        mesh_kw["dt"] = cfg.dt
    if cfg.t_final is not None:
        mesh_kw["t_final"] = cfg.t_final
    if kind == "energy-decay":
        scen = scenarios.scenario_energy_decay(**mesh_kw)
    elif kind == "steric":
        scen = scenarios.scenario_steric(arg, **mesh_kw)
    elif kind == "exponent-k":
        scen = scenarios.scenario_exponent_k(arg, **mesh_kw)
    else:
        raise ConfigError("manufactured runs go through the converge command "
                          "or run_manufactured")
    if cfg.ny is not None:
        scen.ny = cfg.ny
    param_over = {}
    for key, attr in (("re", "re"), ("pe", "pe"), ("co", "co"),
                      ("lam", "lam"), ("mu0", "mu0"), ("mu_inf", "mu_inf"),
                      ("lambda1", "lambda1"), ("k", "k"),
                      ("b_shift", "b_shift")):
        v = getattr(cfg, key)
        if v is not None:
            param_over[attr] = v
    if cfg.w is not None:
        n = int(round(len(cfg.w) ** 0.5))
        param_over["w_steric"] = np.asarray(cfg.w).reshape(n, n)
    if param_over:
        scen.params = scen.params.with_overrides(**param_over)
    if cfg.neutralize_net_charge is not None:
        scen.neutralize_net_charge = cfg.neutralize_net_charge
    if cfg.snapshot_times:
        scen.snapshot_times = cfg.snapshot_times
    return scen


def run_config(cfg):
    """Run a scenario config end to end, writing diagnostics and snapshots."""
    scen = build_scenario(cfg)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    mesh = scen.build_mesh()
    stepper = scen.make_stepper(
        mesh=mesh,
        clamp_viscosity=cfg.clamp_viscosity,
        sigma_diffusion_coeff_one=cfg.sigma_diffusion_coeff_one,
        strict_energy=cfg.strict_energy,
        xi_scales_dirichlet_potential=cfg.xi_scales_dirichlet_potential,
        solver=cfg.solver, solver_tol=cfg.solver_tol)
    snaps = []

    def snapshot_cb(state, t):
        path = os.path.join(out_dir, f"snapshot_t{t:.6f}.vtk")
        write_snapshot(state, mesh, path)
        snaps.append(path)

    records = stepper.run(snapshot_times=scen.snapshot_times,
                          snapshot_cb=snapshot_cb)
    csv_path = os.path.join(out_dir, "diagnostics.csv")
    write_diagnostics_csv(records, csv_path)
    return records, csv_path, snaps


# ----------------------------------------------------------------------
# command line
# ----------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spnpflow",
        description="Carreau fluid / steric ion-transport simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configuration file")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", default=None)

    conv_p = sub.add_parser("converge",
                            help="temporal convergence study (forced problem)")
    conv_p.add_argument("--h-cells", type=int, default=64)
    conv_p.add_argument("--steps", default="8,16,32,64")
    conv_p.add_argument("--out", default=".")

    scen_p = sub.add_parser("scenario", help="run a named preset")
    scen_p.add_argument("name")
    scen_p.add_argument("--nx", type=int, default=None)
    scen_p.add_argument("--dt", type=float, default=None)
    scen_p.add_argument("--t-final", type=float, default=None)
    scen_p.add_argument("--out", default=".")
    scen_p.add_argument("--strict", action="store_true",
                        help="make the energy-decay check a hard error")

    sub.add_parser("list-scenarios", help="print the available presets")
    return parser


def cli_main(argv=None):
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        worker_cap()
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StructuralViolation, PositivityError, CompatibilityError,
            NonFiniteError) as exc:
        print(f"structural failure: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def _dispatch(args):
    if args.command == "list-scenarios":
        print("energy-decay        Coulomb-driven cavity (energy/mass checks)")
        print("steric:<0..4>       steric-matrix sweep with tanh fronts")
        print("exponent-k:<value>  shear-exponent study, side-driven potential")
        return EXIT_OK

    if args.command == "run":
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = parse_config(text)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        records, csv_path, snaps = run_config(cfg)
        print(f"wrote {csv_path} ({len(records)} records, "
              f"{len(snaps)} snapshots)")
        return EXIT_OK

    if args.command == "converge":
        try:
            steps = [int(s) for s in args.steps.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --steps list: {exc}") from exc
        if not steps:
            raise ConfigError("--steps must name at least one count")
        rows = manufactured.convergence_study(steps, args.h_cells)
        print(manufactured.format_convergence_table(rows))
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "convergence.csv")
        manufactured.write_convergence_csv(rows, path)
        print(f"wrote {path}")
        return EXIT_OK

    if args.command == "scenario":
        cfg = RunConfig(scenario=args.name, nx=args.nx, dt=args.dt,
                        t_final=args.t_final, out_dir=args.out,
                        strict_energy=args.strict)
        _validate(cfg)
        records, csv_path, snaps = run_config(cfg)
        print(f"wrote {csv_path} ({len(records)} records, "
              f"{len(snaps)} snapshots)")
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


def main():
    raise SystemExit(cli_main())
