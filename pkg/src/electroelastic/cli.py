"""Command-line entry point and scenario orchestration.

Verbs::

    electroelastic solve <config>     run the configured scenario
    electroelastic oracle <config>    radial reference solution only
    electroelastic sweep <config>     one run per value of a swept parameter
    electroelastic validate <mesh>    check a mesh file

Exit status is 0 on success, 2 for invalid input, 3 when a solver does not
converge and 4 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .charges import ChargeSystem, DielectricParams, read_pqr
from .config import ConfigError, ScenarioConfig, parse_config, write_config
from .coupled import (ContinuationError, ContinuationSchedule, CoupledNonConvergence, CoupledState,
                      FixedPointConfig, InadmissibleIterate, RegimeError, Scenario, Stage, StageError,
                      ball_mesh, build_ledger, residual_weak_form, run_continuation, solve_coupled,
                      two_ball_mesh, write_ledger_csv, write_trace_csv)
from .elasticity import ElasticNonConvergence, ElasticParams, InadmissibleLoadError
from .forces import ForceSet, compute_forces, write_face_csv
from .io import write_face_vtk, write_manifest, write_table_csv, write_vtk
from .mesh import FaceTag, Mesh, MeshFormatError, read_mesh, validate_mesh
from .norms import estimate_report
from .pbe import NewtonDivergence, PBEConfig, PotentialDecomposition, solve_pbe
from .piola import PiolaFields
from .radial import RadialConfig, born_reaction_potential, radial_surface_force, solve_radial_pb, \
    write_profile_csv

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4

_NONCONVERGENCE = (CoupledNonConvergence, RegimeError, ContinuationError, StageError,
                   InadmissibleIterate, NewtonDivergence, ElasticNonConvergence, InadmissibleLoadError)


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented exit status."""
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, _NONCONVERGENCE):
        return EXIT_NONCONVERGED
    if isinstance(exc, (ConfigError, MeshFormatError, ValueError)):
        return EXIT_INVALID
    return EXIT_NONCONVERGED


def _stage_of(exc: BaseException) -> str:
    if isinstance(exc, StageError):
        return exc.stage
    if isinstance(exc, ContinuationError):
        return f"continuation[{exc.stage}]"
    if isinstance(exc, (RegimeError, CoupledNonConvergence, InadmissibleIterate)):
        return "fixed_point"
    if isinstance(exc, NewtonDivergence):
        return "pbe"
    if isinstance(exc, (ElasticNonConvergence, InadmissibleLoadError)):
        return "elasticity"
    if isinstance(exc, (ConfigError, MeshFormatError, ValueError)):
        return "setup"
    return "unknown"


def _diagnostics(exc: BaseException) -> dict:
    out = {}
    for name in ("increments", "history"):
        v = getattr(exc, name, None)
        if v:
            out[name] = [float(x) for x in v]
    report = getattr(exc, "report", None)
    if report is not None:
        out["admissibility"] = report.reason()
    if isinstance(exc, ContinuationError):
        out["completed_stages"] = len(exc.states)
        out.update(_diagnostics(exc.cause))
    if isinstance(exc, StageError):
        out["cause"] = f"{type(exc.cause).__name__}: {exc.cause}"
    return out


# ------------------------------------------------------------------ building blocks

def build_charges(cfg: ScenarioConfig, scale: float | None = None) -> ChargeSystem:
    """Charges from the PQR file, or one charge at each ball centre.

    Rigid charges are multiplied by ``scale`` (default ``charges.rigid_scale``).
    """
    c, g = cfg.charges, cfg.geometry
    scale = c.rigid_scale if scale is None else scale
    if c.pqr_file:
        return read_pqr(c.pqr_file).scaled_rigid(scale)
    if cfg.scenario in ("born", "ionic_shift"):
        return ChargeSystem(np.zeros((1, 3)), [c.flexible_charge_e], [g.radius_A], [True])
    pos = np.array([[0.0, 0.0, 0.0], [g.distance_A, 0.0, 0.0]])
    return ChargeSystem(pos, [c.flexible_charge_e, scale * c.rigid_charge_e],
                        [g.radius_A, g.rigid_radius_A], [True, False])


def build_mesh(cfg: ScenarioConfig) -> Mesh:
    g = cfg.geometry
    if cfg.scenario in ("born", "ionic_shift"):
        return ball_mesh(g.radius_A, g.box_half_width_A, g.h_A, g.f0_half_angle_deg)
    return two_ball_mesh(g.radius_A, g.rigid_radius_A, g.distance_A, g.box_margin_A, g.h_A,
                         g.split_A or None, g.f0_half_angle_deg)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Translate a validated configuration into solver objects."""
    d, s = cfg.dielectric, cfg.solver
    diel = DielectricParams(d.eps_m, d.eps_s, d.kappa_per_A, d.kappa0_per_A, d.rigid_cavity)
    mesh = build_mesh(cfg)
    charges = build_charges(cfg)
    charges.check_placement(mesh)
    return Scenario(mesh, charges, diel,
                    elastic=ElasticParams(cfg.elastic.lambda_e2_per_A4, cfg.elastic.mu_e2_per_A4),
                    pbe=PBEConfig(tol=s.tol, max_newton=s.max_newton),
                    delta_target=s.delta_target, mode=s.mode, radius=cfg.geometry.radius_A,
                    elastic_tol=cfg.elastic.tol)


def build_fixed_point(cfg: ScenarioConfig) -> FixedPointConfig:
    f = cfg.fixed_point
    return FixedPointConfig(f.omega, f.tol, f.max_iter, f.bound_M, f.j_min)


def build_schedule(cfg: ScenarioConfig) -> ContinuationSchedule | None:
    c = cfg.continuation
    if not c.kappa_per_A and not c.rigid_scale:
        return None
    n = max(len(c.kappa_per_A), len(c.rigid_scale))
    kap = c.kappa_per_A or [cfg.dielectric.kappa_per_A] * n
    scl = c.rigid_scale or [1.0] * n
    fp = build_fixed_point(cfg)
    return ContinuationSchedule(tuple(Stage(k, s, fp) for k, s in zip(kap, scl)))


# ------------------------------------------------------------------ field export

def _export(directory: Path, mesh: Mesh, decomp: PotentialDecomposition, u: np.ndarray,
            piola: PiolaFields, net: ForceSet, total: ForceSet) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for name, values in (("phi_l", decomp.phi_l), ("phi_n", decomp.phi_n), ("phi_r", decomp.phi_r)):
        p = directory / f"{name}.vtk"
        write_vtk(p, mesh, point_data={name: values}, title=name)
        files.append(p)
    p = directory / "u.vtk"
    write_vtk(p, mesh, point_data={"u": u}, title="displacement")
    files.append(p)
    p = directory / "f_s.vtk"
    write_face_vtk(p, mesh, FaceTag.GAMMA_F, {"f_s": net.surface, "f_s_total": total.surface},
                   title="surface force")
    files.append(p)
    p = directory / "J.vtk"
    write_vtk(p, mesh, cell_data={"J": piola.J}, title="jacobian")
    files.append(p)
    return files


def export_fields(state: CoupledState, directory) -> list[Path]:
    """Write the potential components, displacement, surface force and Jacobian.

    Each field goes to its own legacy-VTK file; ``fields_manifest.json``
    lists them with checksums.  Returns every written path, manifest last.
    """
    directory = Path(directory)
    files = _export(directory, state.scenario.mesh, state.decomposition, state.u.values, state.piola,
                    state.net_forces, state.forces)
    return files + [write_manifest(directory, files, name="fields_manifest.json")]


# ------------------------------------------------------------------ scenarios

@dataclass
class RunArtifacts:
    output_dir: Path
    status: str
    exit_code: int
    summary: dict
    files: list = field(default_factory=list)


def _born(cfg: ScenarioConfig, sc: Scenario, out: Path) -> tuple[dict, list[Path]]:
    decomp = solve_pbe(sc.mesh, None, sc.charges, sc.diel, sc.pbe, sc.mode)
    forces = compute_forces(decomp, sc.delta_target, sc.quad_order, "born")
    files = []
    p = out / "newton_trace.csv"
    write_table_csv(p, ["iteration", "residual", "energy", "damping"],
                    [(s.iteration, s.residual, s.energy, s.damping) for s in decomp.trace])
    files.append(p)
    p = out / "faces.csv"
    write_face_csv(forces, p)
    files.append(p)
    zero = np.zeros((sc.mesh.n_vertices, 3))
    fields = _export(out / "fields", sc.mesh, decomp, zero, decomp.piola, forces, forces)
    files += fields + [write_manifest(out / "fields", fields, name="fields_manifest.json")]
    x0 = sc.charges.positions[0]
    phi0 = float(sc.mesh.interpolate(decomp.phi_r, x0[None, :])[0])
    result = {"phi_r_at_charge": phi0, "newton_iterations": len(decomp.trace) - 1,
              "energy": decomp.energy, "surface_force_norm": forces.surface_norm(),
              "body_force_norm": forces.body_norm()}
    if len(sc.charges) == 1 and np.allclose(x0, 0.0):
        sol = _radial(cfg, float(sc.charges.charges[0]))
        ref = float(sol.phi_r[0])
        result.update(oracle_phi_r0=ref, relative_error=abs(phi0 - ref) / abs(ref))
    return result, files


def _coupled_outputs(state: CoupledState, out: Path) -> tuple[dict, list[Path]]:
    files = []
    p = out / "trace.csv"
    write_trace_csv(state, p)
    files.append(p)
    ledger = build_ledger(state)
    p = out / "ledger.csv"
    write_ledger_csv(ledger, p)
    files.append(p)
    rows = estimate_report(state)
    p = out / "estimates.csv"
    keys = list(rows[0])
    write_table_csv(p, keys, [[r[k] for k in keys] for r in rows])
    files.append(p)
    p = out / "faces.csv"
    write_face_csv(state.net_forces, p)
    files.append(p)
    files += export_fields(state, out / "fields")
    result = {"converged": state.converged, "iterations": state.k,
              "final_increment": float(state.increments[-1]),
              "contraction_factor": state.contraction_factor, "u_max": state.u_max,
              "min_J": state.piola.min_J, "ledger_identity_error": ledger.identity_error,
              "surface_force_norm": state.net_forces.surface_norm(),
              "body_force_norm": state.net_forces.body_norm(),
              "weak_residual": residual_weak_form(state)}
    return result, files


def _coupled(cfg: ScenarioConfig, sc: Scenario, out: Path) -> tuple[dict, list[Path]]:
    schedule = build_schedule(cfg) if cfg.scenario == "full_coupled" else None
    if schedule is None:
        state = solve_coupled(sc, build_fixed_point(cfg))
        return _coupled_outputs(state, out)
    # every stage rescales the unscaled rigid charges
    base = sc.with_(charges=build_charges(cfg, 1.0))
    states = run_continuation(base, schedule)
    p = out / "continuation.csv"
    write_table_csv(p, ["stage", "kappa", "charge_scale", "iterations", "u_max"],
                    [(i, st.kappa, st.charge_scale, s.k, s.u_max)
                     for i, (st, s) in enumerate(zip(schedule.stages, states))])
    result, files = _coupled_outputs(states[-1], out)
    result["continuation_iterations"] = [s.k for s in states]
    return result, [p] + files


def _radial(cfg: ScenarioConfig, q: float | None = None):
    d = cfg.dielectric
    q = cfg.charges.flexible_charge_e if q is None else q
    rc = RadialConfig(q, cfg.geometry.radius_A, d.eps_m, d.eps_s,
                      d.kappa_per_A, cfg.oracle.r_out_A, cfg.oracle.n_points)
    return solve_radial_pb(rc, linearized=cfg.solver.mode == "linearized")


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None  # JSON has no NaN
    return v


def _finish(cfg: ScenarioConfig, out: Path, kind: str, status: str, code: int, result: dict,
            files: list[Path], failure: dict | None = None) -> RunArtifacts:
    p = out / "config.toml"
    write_config(cfg, p)
    summary = {"version": __version__, "verb": kind, "scenario": cfg.scenario,
               "config_sha256": cfg.digest(), "seed": cfg.seed, "status": status,
               "exit_code": code, "defaulted": list(cfg.defaulted), "result": result}
    if failure:
        summary["failure"] = failure
    s = out / "summary.json"
    with open(s, "w", encoding="ascii", newline="\n") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    files = list(files) + [p, s]
    m = write_manifest(out, files, {"version": __version__, "config_sha256": cfg.digest(),
                                    "seed": cfg.seed, "defaulted": list(cfg.defaulted)})
    return RunArtifacts(out, status, code, summary, files + [m])


def _run(cfg: ScenarioConfig, out, kind: str, body) -> RunArtifacts:
    out = Path(out if out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result, files = body(out)
    except OSError:
        raise
    except Exception as exc:  # solver and setup failures are reported, not raised
        code = exit_code_for(exc)
        failure = {"stage": _stage_of(exc), "error": type(exc).__name__, "message": str(exc),
                   "diagnostics": _diagnostics(exc)}
        return _finish(cfg, out, kind, "failed", code, {}, [], failure)
    return _finish(cfg, out, kind, "ok", EXIT_OK, result, files)


def run_scenario(cfg: ScenarioConfig, output_dir=None) -> RunArtifacts:
    """Run the configured scenario end to end and write its artifacts.

    Everything goes under ``output_dir`` (default ``cfg.output_dir``):
    CSV tables, VTK fields, ``config.toml``, ``summary.json`` and
    ``manifest.json``.  Solver failures are recorded in the summary with
    their stage; I/O errors propagate.
    """
    def body(out):
        sc = build_scenario(cfg)
        if cfg.scenario == "born":
            return _born(cfg, sc, out)
        return _coupled(cfg, sc, out)

    return _run(cfg, output_dir, "solve", body)


def run_oracle(cfg: ScenarioConfig, output_dir=None) -> RunArtifacts:
    """Radial reference for a single centred charge."""
    def body(out):
        sol = _radial(cfg)
        p = out / "profile.csv"
        write_profile_csv(sol, p)
        d = cfg.dielectric
        closed = born_reaction_potential(cfg.charges.flexible_charge_e, cfg.geometry.radius_A,
                                         d.eps_m, d.eps_s, d.kappa_per_A)
        result = {"phi_r0": float(sol.phi_r[0]), "linearized_closed_form": closed,
                  "surface_force": radial_surface_force(sol), "newton_iterations": sol.iterations,
                  "linearized": sol.linearized}
        return result, [p]

    return _run(cfg, output_dir, "oracle", body)


def _sweep_point(args) -> tuple[int, float, dict, int]:
    i, value, cfg_dict, out = args
    from .config import config_from_dict

    cfg = config_from_dict(cfg_dict)
    res = run_scenario(cfg, out)
    return i, value, res.summary, res.exit_code


def _with_parameter(cfg: ScenarioConfig, name: str, value: float) -> dict:
    doc = cfg.to_dict()
    section = {"rigid_scale": "charges", "kappa_per_A": "dielectric", "h_A": "geometry",
               "rigid_radius_A": "geometry"}[name]
    doc[section][name] = value
    doc["continuation"] = {"kappa_per_A": [], "rigid_scale": []}
    return doc


def run_sweep(cfg: ScenarioConfig, output_dir=None, workers: int = 1) -> RunArtifacts:
    """One run per swept value, each in its own ``point_NNN`` subdirectory."""
    sw = cfg.sweep

    def body(out):
        if not sw.values:
            raise ConfigError("sweep.values", "must list at least one value")
        jobs = [(i, v, _with_parameter(cfg, sw.parameter, v), str(out / f"point_{i:03d}"))
                for i, v in enumerate(sw.values)]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                results = list(pool.map(_sweep_point, jobs))
        else:
            results = [_sweep_point(j) for j in jobs]
        keys = ["iterations", "contraction_factor", "u_max", "surface_force_norm", "body_force_norm",
                "phi_r_at_charge"]
        rows = []
        for i, v, summary, code in sorted(results, key=lambda t: t[0]):
            r = summary["result"]
            rows.append([i, v, summary["status"]] + [r.get(k, "") for k in keys])
        p = out / "sweep.csv"
        write_table_csv(p, ["point", sw.parameter, "status"] + keys, rows)
        failed = [i for i, _, _, code in results if code != EXIT_OK]
        files = [p] + [out / f"point_{i:03d}" / "manifest.json" for i, *_ in results]
        return {"points": len(results), "failed_points": failed}, files

    res = _run(cfg, output_dir, "sweep", body)
    if res.status == "ok" and res.summary["result"]["failed_points"]:
        res.exit_code = EXIT_NONCONVERGED
    return res


# ------------------------------------------------------------------ entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="electroelastic", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, helptext in (("solve", "run the configured scenario"),
                           ("oracle", "radial reference solution"),
                           ("sweep", "run a parameter ramp")):
        p = sub.add_parser(verb, help=helptext)
        p.add_argument("config", help="TOML configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        if verb == "sweep":
            p.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    p = sub.add_parser("validate", help="check a mesh file")
    p.add_argument("mesh", help="mesh in the native ASCII format")
    p.add_argument("--debye-length", type=float, default=None)
    return ap


def _validate(path: str, debye_length) -> int:
    try:
        mesh = read_mesh(path)
    except MeshFormatError as exc:
        print(f"invalid mesh: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rep = validate_mesh(mesh, debye_length)
    for w in rep.warnings:
        print(f"warning: {w}")
    for v in rep.violations:
        print(f"violation: {v}")
    print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
          f"{'valid' if rep.ok else 'INVALID'}")
    return EXIT_OK if rep.ok else EXIT_INVALID


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "validate":
            return _validate(args.mesh, args.debye_length)
        cfg = parse_config(args.config)
        if args.verb == "solve":
            res = run_scenario(cfg, args.out)
        elif args.verb == "oracle":
            res = run_oracle(cfg, args.out)
        else:
            res = run_sweep(cfg, args.out, args.workers)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.verb}: {res.status} -> {res.output_dir}")
    if res.status != "ok":
        f = res.summary["failure"]
        print(f"  {f['stage']}: {f['error']}: {f['message']}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
