"""Fixed-point coupling of electrostatics and elasticity.

One application of the map ``S`` takes a flexible displacement ``v``,
extends it harmonically, pulls the Poisson-Boltzmann problem back through
the resulting deformation, assembles the net electrostatic loads relative
to the free state and returns the elastic response.  The driver iterates
``u <- (1 - omega) u + omega S(u)`` and gates every iterate.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .charges import ChargeSystem, DielectricParams
from .elasticity import ElasticParams, elastic_residual, solve_elasticity
from .forces import (ForceSet, PerturbationLedger, build_perturbation_ledger, compute_forces,
                     net_forces)
from .mesh import Mesh, Region, build_ball_in_box, build_two_balls_in_box
from .norms import h1_norm
from .pbe import PBEConfig, PotentialDecomposition, pbe_residual, solve_pbe
from .piola import (AdmissibilityReport, DisplacementField, InadmissibleDeformation, PiolaFields,
                    check_admissible, compute_piola, harmonic_extend)


class StageError(RuntimeError):
    """A stage of the map ``S`` failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


class InadmissibleIterate(ValueError):
    """The input displacement failed the admissibility gate; nothing was solved."""

    def __init__(self, report: AdmissibilityReport):
        super().__init__(f"displacement rejected: {report.reason()}")
        self.report = report


class RegimeError(RuntimeError):
    """An iterate left the admissible set during the fixed-point iteration."""

    def __init__(self, k: int, report: AdmissibilityReport):
        super().__init__(f"iterate {k} left the admissible set ({report.reason()}); "
                         "reduce the perturbation or use a continuation schedule")
        self.k = k
        self.report = report


class CoupledNonConvergence(RuntimeError):
    def __init__(self, message: str, increments):
        super().__init__(message)
        self.increments = list(increments)


class ContinuationError(RuntimeError):
    """A continuation stage failed; ``states`` holds every stage that converged before it."""

    def __init__(self, stage: int, states, cause: BaseException):
        super().__init__(f"continuation stage {stage} failed: {cause}")
        self.stage = stage
        self.states = list(states)
        self.cause = cause


# ------------------------------------------------------------------ scenario

@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything the map ``S`` needs.

    ``radius`` is the length scale of the flexible molecule; convergence
    tolerances are relative to it.
    """

    mesh: Mesh
    charges: ChargeSystem
    diel: DielectricParams
    elastic: ElasticParams = ElasticParams(10.0, 10.0)
    pbe: PBEConfig = PBEConfig()
    delta_target: float = 1e-6
    mode: str = "nonlinear"
    radius: float = 1.0
    elastic_tol: float = 1e-10
    quad_order: int = 4

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)


@dataclass(frozen=True)
class FixedPointConfig:
    omega: float = 0.5
    tol: float = 1e-8
    max_iter: int = 100
    bound_M: float = 1.0
    j_min: float = 0.1
    p: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.bound_M <= 0:
            raise ValueError("bound_M must be positive")


_REFERENCES: "weakref.WeakKeyDictionary[Mesh, dict]" = weakref.WeakKeyDictionary()


def _reference_key(sc: Scenario) -> tuple:
    flex = sc.charges.flexible_only()
    return (sc.diel.kappa0, sc.diel.eps_m, sc.diel.eps_s, flex.positions.tobytes(),
            flex.charges.tobytes(), flex.radii.tobytes(), sc.pbe, sc.delta_target, sc.mode,
            sc.quad_order)


def state_forces(sc: Scenario, which: int, disp: DisplacementField | None = None,
                 piola: PiolaFields | None = None) -> tuple[ForceSet, PotentialDecomposition]:
    """Forces for one of the ledger states.

    ``which`` is 0 (free state: flexible charges, ``kappa0``, rigid cells
    filled with solvent), 1 (``kappa``), 2 (rigid cavity, if the scenario
    has one), 3 (all charges) or 4 (all charges at ``disp``).
    """
    d = sc.diel
    ch = sc.charges
    if which == 0:
        diel, charges = d.with_(kappa=d.kappa0, rigid_cavity=False), ch.flexible_only()
    elif which == 1:
        diel, charges = d.with_(rigid_cavity=False), ch.flexible_only()
    elif which == 2:
        diel, charges = d, ch.flexible_only()
    elif which in (3, 4):
        diel, charges = d, ch
    else:
        raise ValueError("state index must be in 0..4")
    if which < 4:
        disp, piola = None, None
    labels = ("state0", "state1", "state2", "state3", "coupled")
    decomp = solve_pbe(sc.mesh, piola, charges, diel, sc.pbe, sc.mode, disp)
    return compute_forces(decomp, sc.delta_target, sc.quad_order, labels[which]), decomp


def free_reference(sc: Scenario) -> ForceSet:
    """Forces of the free state at ``u = 0``, computed once per mesh and setting."""
    cache = _REFERENCES.setdefault(sc.mesh, {})
    key = _reference_key(sc)
    if key not in cache:
        cache[key] = state_forces(sc, 0)[0]
    return cache[key]


# ------------------------------------------------------------------ map S

@dataclass(frozen=True, eq=False)
class MapEvaluation:
    """Intermediate products of one application of ``S``."""

    disp: DisplacementField
    piola: PiolaFields
    decomposition: PotentialDecomposition
    forces: ForceSet
    net: ForceSet
    output: DisplacementField
    elastic_iterations: int


def _as_field(mesh: Mesh, v) -> DisplacementField:
    if v is None:
        return DisplacementField.zero(mesh)
    vals = v.values if isinstance(v, DisplacementField) else np.asarray(v, dtype=float)
    return harmonic_extend(mesh, vals)


def evaluate_map(v, sc: Scenario, cfg: FixedPointConfig = FixedPointConfig()) -> MapEvaluation:
    """Apply ``S`` to ``v`` and keep every intermediate result."""
    mesh = sc.mesh
    disp = _as_field(mesh, v)
    report = check_admissible(disp, cfg.bound_M, cfg.j_min, cfg.p)
    if not report.admissible:
        raise InadmissibleIterate(report)
    reference = free_reference(sc)
    try:
        piola = compute_piola(mesh, disp, cfg.j_min)
    except InadmissibleDeformation as exc:
        raise StageError("piola", exc) from exc
    try:
        forces, decomp = state_forces(sc, 4, disp, piola)
    except Exception as exc:
        raise StageError("pbe", exc) from exc
    net = net_forces(forces, reference)
    try:
        sol = solve_elasticity(mesh, net.as_loads(), sc.elastic, sc.elastic_tol)
    except Exception as exc:
        raise StageError("elasticity", exc) from exc
    return MapEvaluation(disp, piola, decomp, forces, net, harmonic_extend(mesh, sol.u),
                         sol.iterations)


def map_S(v, sc: Scenario, cfg: FixedPointConfig = FixedPointConfig()) -> DisplacementField:
    """One application of the fixed-point map; returns the new displacement."""
    return evaluate_map(v, sc, cfg).output


# ------------------------------------------------------------------ driver

@dataclass(frozen=True)
class TraceRow:
    k: int
    increment: float
    body_force_norm: float
    surface_force_norm: float
    min_J: float
    energy: float
    contraction: float


@dataclass(frozen=True, eq=False)
class CoupledState:
    """Result of a fixed-point solve.

    ``decomposition``, ``forces`` and ``net_forces`` come from the last
    evaluation of ``S``, at the iterate preceding ``u``.
    """

    k: int
    u: DisplacementField
    decomposition: PotentialDecomposition
    piola: PiolaFields
    forces: ForceSet
    net_forces: ForceSet
    increments: list
    trace: list
    admissibility: AdmissibilityReport
    converged: bool
    scenario: Scenario
    config: FixedPointConfig

    @property
    def contraction_factor(self) -> float:
        """Mean of the measured Lipschitz ratios of ``S`` along the iteration."""
        vals = [r.contraction for r in self.trace if np.isfinite(r.contraction)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def u_max(self) -> float:
        return float(np.abs(self.u.values).max(initial=0.0))


def _mf_h1(mesh: Mesh, w: np.ndarray) -> float:
    return h1_norm(mesh, w, mesh.cells_in(Region.MF))


def solve_coupled(sc: Scenario, cfg: FixedPointConfig = FixedPointConfig(), u0=None) -> CoupledState:
    """Relaxed fixed-point iteration from ``u0`` (zero by default).

    Stops when the H1 norm of the increment on the flexible region drops
    below ``cfg.tol * sc.radius``.  Each trace row also records the ratio
    ``|S(u_k) - S(u_{k-1})| / |u_k - u_{k-1}|``, an estimate of the
    Lipschitz constant of ``S``.
    """
    mesh = sc.mesh
    u = _as_field(mesh, u0)
    increments, trace = [], []
    prev_u = prev_S = None
    target = cfg.tol * sc.radius
    for k in range(1, cfg.max_iter + 1):
        ev = evaluate_map(u, sc, cfg)
        Su = ev.output.values
        new = harmonic_extend(mesh, (1.0 - cfg.omega) * u.values + cfg.omega * Su)
        report = check_admissible(new, cfg.bound_M, cfg.j_min, cfg.p)
        if not report.admissible:
            raise RegimeError(k, report)
        inc = _mf_h1(mesh, new.values - u.values)
        lip = float("nan")
        if prev_u is not None:
            du = _mf_h1(mesh, u.values - prev_u)
            if du > 0:
                lip = _mf_h1(mesh, Su - prev_S) / du
        increments.append(inc)
        trace.append(TraceRow(k, inc, ev.net.body_norm(), ev.net.surface_norm(), ev.piola.min_J,
                              ev.decomposition.energy, lip))
        prev_u, prev_S = u.values, Su
        u = new
        if inc <= target:
            return CoupledState(k, u, ev.decomposition, ev.piola, ev.forces, ev.net, increments,
                                trace, report, True, sc, cfg)
    raise CoupledNonConvergence(f"no convergence in {cfg.max_iter} iterations "
                                f"(last increment {increments[-1]:.3e})", increments)


def residual_weak_form(state: CoupledState) -> float:
    """Norm of the coupled discrete residual at ``state.u``.

    The potential is re-solved at ``u``; the result combines the
    reaction-field residual with the elastic residual under the net loads
    of that potential.
    """
    sc = state.scenario
    mesh = sc.mesh
    disp = harmonic_extend(mesh, state.u.values)
    piola = compute_piola(mesh, disp, state.config.j_min)
    forces, decomp = state_forces(sc, 4, disp, piola)
    net = net_forces(forces, free_reference(sc))
    r_el = elastic_residual(mesh, disp.values, net.as_loads(), sc.elastic)
    r_pb = pbe_residual(decomp, sc.quad_order)
    return float(np.hypot(np.linalg.norm(r_el), np.linalg.norm(r_pb)))


def build_ledger(state: CoupledState) -> PerturbationLedger:
    """Four-step decomposition of the coupled net force."""
    sc = state.scenario
    forces = [free_reference(sc)] + [state_forces(sc, i)[0] for i in (1, 2, 3)] + [state.forces]
    return build_perturbation_ledger(forces)


# ------------------------------------------------------------------ continuation

@dataclass(frozen=True)
class Stage:
    """One continuation step: target ``kappa`` and the scale of the rigid charges."""

    kappa: float
    charge_scale: float
    config: FixedPointConfig = FixedPointConfig()


@dataclass(frozen=True)
class ContinuationSchedule:
    stages: tuple

    def __post_init__(self):
        if len(self.stages) == 0:
            raise ValueError("a schedule needs at least one stage")

    def validate(self, kappa0: float) -> None:
        prev = (0.0, 0.0)
        for i, st in enumerate(self.stages):
            cur = (abs(st.kappa - kappa0), abs(st.charge_scale))
            if cur[0] < prev[0] or cur[1] < prev[1]:
                raise ValueError(f"stage {i} weakens the perturbation; schedules must be monotone")
            prev = cur


def stage_scenario(sc: Scenario, stage: Stage) -> Scenario:
    return sc.with_(diel=sc.diel.with_(kappa=stage.kappa),
                    charges=sc.charges.scaled_rigid(stage.charge_scale))


def run_continuation(sc: Scenario, schedule: ContinuationSchedule) -> list[CoupledState]:
    """Solve the stages in order, warm-starting each from the previous solution.

    ``sc`` carries the unscaled rigid charges; each stage rescales them.
    """
    schedule.validate(sc.diel.kappa0)
    states = []
    u = None
    for i, st in enumerate(schedule.stages):
        try:
            state = solve_coupled(stage_scenario(sc, st), st.config, u)
        except Exception as exc:
            raise ContinuationError(i, states, exc) from exc
        states.append(state)
        u = state.u
    return states


# ------------------------------------------------------------------ output

def write_trace_csv(state: CoupledState, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("k,increment,body_force_norm,surface_force_norm,min_J,energy,contraction\n")
        for r in state.trace:
            vals = (r.increment, r.body_force_norm, r.surface_force_norm, r.min_J, r.energy, r.contraction)
            fh.write(f"{r.k}," + ",".join(repr(float(v)) for v in vals) + "\n")


def write_ledger_csv(ledger: PerturbationLedger, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("step,body_norm,surface_norm,max_abs\n")
        for e in ledger.entries:
            fh.write(f"{e.name},{_norms(e.delta)}\n")
        fh.write(f"total,{_norms(ledger.total)}\n")
        fh.write(f"identity_error,{float(ledger.identity_error)!r},,\n")


def _norms(f: ForceSet) -> str:
    return ",".join(repr(float(v)) for v in (f.body_norm(), f.surface_norm(), f.max_abs()))


# ------------------------------------------------------------------ scenarios

@lru_cache(maxsize=8)
def ball_mesh(radius: float, box_half_width: float, h: float, f0_half_angle_deg: float = 30.0) -> Mesh:
    return build_ball_in_box(radius, box_half_width, h, f0_half_angle_deg=f0_half_angle_deg)


@lru_cache(maxsize=8)
def two_ball_mesh(radius_f: float, radius_r: float, distance: float, box_margin: float,
                  h: float, split: float | None = None, f0_half_angle_deg: float = 30.0) -> Mesh:
    return build_two_balls_in_box(radius_f, radius_r, distance, box_margin, h, split=split,
                                  f0_half_angle_deg=f0_half_angle_deg)


def born_scenario(radius: float = 1.0, h: float = 0.25, box: float = 4.0, q: float = 1.0,
                  diel: DielectricParams = DielectricParams(), **kw) -> Scenario:
    """A single flexible charge at the centre of a ball."""
    mesh = ball_mesh(radius, box, h)
    charges = ChargeSystem(np.zeros((1, 3)), [q], [radius], [True])
    return Scenario(mesh, charges, diel, radius=radius, **kw)


def ionic_shift_scenario(kappa: float, kappa0: float = 0.1, radius: float = 1.0, h: float = 0.25,
                         box: float = 4.0, q: float = 1.0, **kw) -> Scenario:
    """Born ion whose solvent ionic strength moves from ``kappa0`` to ``kappa``."""
    return born_scenario(radius, h, box, q, DielectricParams(kappa=kappa, kappa0=kappa0), **kw)


def two_sphere_scenario(scale: float = 1.0, radius_f: float = 1.0, radius_r: float = 1.0,
                        distance: float = 3.0, h: float = 0.5, margin: float = 4.0,
                        q_f: float = 1.0, q_r: float = 1.0,
                        diel: DielectricParams = DielectricParams(), split: float | None = None,
                        **kw) -> Scenario:
    """Flexible charged ball at the origin and a rigid ball on the x axis.

    The rigid charge is ``scale * q_r`` at the rigid centre.  Fixing
    ``split`` keeps the mesh around the flexible ball identical when only
    the rigid radius changes.
    """
    mesh = two_ball_mesh(radius_f, radius_r, distance, margin, h, split)
    pos = np.array([[0.0, 0.0, 0.0], [distance, 0.0, 0.0]])
    charges = ChargeSystem(pos, [q_f, scale * q_r], [radius_f, radius_r], [True, False])
    return Scenario(mesh, charges, diel, radius=radius_f, **kw)


__all__ = ["Scenario", "FixedPointConfig", "CoupledState", "TraceRow", "MapEvaluation", "Stage",
           "ContinuationSchedule", "StageError", "InadmissibleIterate", "RegimeError",
           "CoupledNonConvergence", "ContinuationError", "free_reference", "state_forces",
           "evaluate_map", "map_S", "solve_coupled", "residual_weak_form", "build_ledger",
           "run_continuation", "stage_scenario", "write_trace_csv", "write_ledger_csv",
           "born_scenario", "ionic_shift_scenario", "two_sphere_scenario", "ball_mesh",
           "two_ball_mesh"]
