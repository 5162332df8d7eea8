"""Run configuration: TOML text with unit-suffixed keys.

Every section is a dataclass; unknown sections or keys are rejected, every
value is range checked, and the keys that fell back to defaults are
recorded so a run manifest can list them.

Units: ``_A`` is angstrom, ``_per_A`` inverse angstrom, ``_e`` elementary
charge, ``_e2_per_A4`` pressure in the kernel convention (charge squared
over length to the fourth).  Permittivities and tolerances are
dimensionless.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import toml

SCENARIOS = ("born", "two_spheres", "ionic_shift", "full_coupled")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field (``section.key``)."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(key, message)


@dataclass(frozen=True)
class GeometryConfig:
    radius_A: float = 1.0
    rigid_radius_A: float = 1.0
    distance_A: float = 3.0
    box_half_width_A: float = 4.0
    box_margin_A: float = 4.0
    h_A: float = 0.25
    split_A: float = 0.0  # 0 selects the middle of the gap
    f0_half_angle_deg: float = 30.0

    def validate(self) -> None:
        _require(self.radius_A > 0, "geometry.radius_A", "must be positive")
        _require(self.rigid_radius_A > 0, "geometry.rigid_radius_A", "must be positive")
        _require(self.h_A > 0, "geometry.h_A", "must be positive")
        _require(self.h_A <= self.radius_A, "geometry.h_A", "must not exceed the molecule radius")
        _require(self.box_half_width_A > self.radius_A, "geometry.box_half_width_A",
                 "box must strictly contain the molecule")
        _require(self.box_margin_A > 0, "geometry.box_margin_A", "must be positive")
        _require(0 < self.f0_half_angle_deg < 180, "geometry.f0_half_angle_deg", "must lie in (0, 180)")
        _require(self.split_A >= 0, "geometry.split_A", "must be non-negative")


@dataclass(frozen=True)
class DielectricConfig:
    eps_m: float = 2.0
    eps_s: float = 80.0
    kappa_per_A: float = 0.0
    kappa0_per_A: float = 0.0
    rigid_cavity: bool = True

    def validate(self) -> None:
        _require(self.eps_m > 0, "dielectric.eps_m", "must be positive")
        _require(self.eps_m < self.eps_s, "dielectric.eps_m", "requires 0 < eps_m < eps_s")
        _require(self.kappa_per_A >= 0, "dielectric.kappa_per_A", "must be non-negative")
        _require(self.kappa0_per_A >= 0, "dielectric.kappa0_per_A", "must be non-negative")


@dataclass(frozen=True)
class ChargeConfig:
    pqr_file: str = ""
    flexible_charge_e: float = 1.0
    rigid_charge_e: float = 1.0
    rigid_scale: float = 1.0

    def validate(self) -> None:
        if self.pqr_file:
            _require(Path(self.pqr_file).is_file(), "charges.pqr_file", f"file {self.pqr_file!r} not found")


@dataclass(frozen=True)
class ElasticConfig:
    lambda_e2_per_A4: float = 10.0
    mu_e2_per_A4: float = 10.0
    tol: float = 1e-10

    def validate(self) -> None:
        _require(self.lambda_e2_per_A4 > 0, "elastic.lambda_e2_per_A4", "must be positive")
        _require(self.mu_e2_per_A4 > 0, "elastic.mu_e2_per_A4", "must be positive")
        _require(self.tol > 0, "elastic.tol", "must be positive")


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "nonlinear"
    tol: float = 1e-10
    max_newton: int = 50
    delta_target: float = 1e-6

    def validate(self) -> None:
        _require(self.mode in ("nonlinear", "linearized"), "solver.mode",
                 "must be 'nonlinear' or 'linearized'")
        _require(self.tol > 0, "solver.tol", "must be positive")
        _require(self.max_newton >= 1, "solver.max_newton", "must be at least 1")
        _require(self.delta_target > 0, "solver.delta_target", "must be positive")


@dataclass(frozen=True)
class FixedPointSection:
    omega: float = 0.5
    tol: float = 1e-8
    max_iter: int = 100
    bound_M: float = 1.0
    j_min: float = 0.1

    def validate(self) -> None:
        _require(0 < self.omega <= 1, "fixed_point.omega", "must lie in (0, 1]")
        _require(self.tol > 0, "fixed_point.tol", "must be positive")
        _require(self.max_iter >= 1, "fixed_point.max_iter", "must be at least 1")
        _require(self.bound_M > 0, "fixed_point.bound_M", "must be positive")
        _require(0 < self.j_min < 1, "fixed_point.j_min", "must lie in (0, 1)")


@dataclass(frozen=True)
class ContinuationConfig:
    kappa_per_A: list = field(default_factory=list)
    rigid_scale: list = field(default_factory=list)

    def validate(self) -> None:
        _require(len(self.kappa_per_A) == len(self.rigid_scale) or not self.kappa_per_A
                 or not self.rigid_scale, "continuation", "ramps must have equal length")


@dataclass(frozen=True)
class OracleConfig:
    r_out_A: float = 20.0
    n_points: int = 2000

    def validate(self) -> None:
        _require(self.n_points >= 200, "oracle.n_points", "must be at least 200")
        _require(self.r_out_A > 0, "oracle.r_out_A", "must be positive")


@dataclass(frozen=True)
class SweepConfig:
    parameter: str = "rigid_scale"
    values: list = field(default_factory=list)

    def validate(self) -> None:
        _require(self.parameter in SWEEP_PARAMETERS, "sweep.parameter",
                 f"must be one of {', '.join(SWEEP_PARAMETERS)}")


SWEEP_PARAMETERS = ("rigid_scale", "kappa_per_A", "h_A", "rigid_radius_A")

_SECTIONS = {
    "geometry": GeometryConfig,
    "dielectric": DielectricConfig,
    "charges": ChargeConfig,
    "elastic": ElasticConfig,
    "solver": SolverConfig,
    "fixed_point": FixedPointSection,
    "continuation": ContinuationConfig,
    "oracle": OracleConfig,
    "sweep": SweepConfig,
}
_TOP = {"scenario": "born", "output_dir": "out", "seed": 0}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "born"
    output_dir: str = "out"
    seed: int = 0
    geometry: GeometryConfig = GeometryConfig()
    dielectric: DielectricConfig = DielectricConfig()
    charges: ChargeConfig = ChargeConfig()
    elastic: ElasticConfig = ElasticConfig()
    solver: SolverConfig = SolverConfig()
    fixed_point: FixedPointSection = FixedPointSection()
    continuation: ContinuationConfig = ContinuationConfig()
    oracle: OracleConfig = OracleConfig()
    sweep: SweepConfig = SweepConfig()
    defaulted: tuple = ()

    def validate(self) -> None:
        _require(self.scenario in SCENARIOS, "scenario", f"must be one of {', '.join(SCENARIOS)}")
        _require(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        for name in _SECTIONS:
            getattr(self, name).validate()
        g = self.geometry
        if self.scenario in ("two_spheres", "full_coupled"):
            _require(g.distance_A > g.radius_A + g.rigid_radius_A, "geometry.distance_A",
                     "spheres overlap")
            if g.split_A:
                _require(g.radius_A < g.split_A < g.distance_A - g.rigid_radius_A, "geometry.split_A",
                         "split plane must lie between the spheres")

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in _TOP}
        for name in _SECTIONS:
            doc[name] = asdict(getattr(self, name))
        return doc

    def to_toml(self) -> str:
        return toml.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode("utf-8")).hexdigest()


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        _require(isinstance(value, bool), key, "must be true or false")
        return value
    if isinstance(default, int):
        _require(isinstance(value, int) and not isinstance(value, bool), key, "must be an integer")
        return value
    if isinstance(default, float):
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), key, "must be a number")
        return float(value)
    if isinstance(default, str):
        _require(isinstance(value, str), key, "must be a string")
        return value
    if isinstance(default, list):
        _require(isinstance(value, list), key, "must be a list")
        for v in value:
            _require(isinstance(v, (int, float)) and not isinstance(v, bool), key, "entries must be numbers")
        return [float(v) for v in value]
    raise ConfigError(key, "unsupported type")


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Build and validate a configuration, recording every defaulted key."""
    defaulted = []
    kwargs = {}
    for key in doc:
        if key not in _TOP and key not in _SECTIONS:
            raise ConfigError(key, "unknown key")
    for key, default in _TOP.items():
        if key in doc:
            kwargs[key] = _coerce(key, doc[key], default)
        else:
            defaulted.append(key)
    for name, cls in _SECTIONS.items():
        raw = doc.get(name, {})
        _require(isinstance(raw, dict), name, "must be a table")
        known = {f.name: f for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"{name}.{key}", "unknown key")
        proto = cls()
        vals = {}
        for key in known:
            default = getattr(proto, key)
            if key in raw:
                vals[key] = _coerce(f"{name}.{key}", raw[key], default)
            else:
                defaulted.append(f"{name}.{key}")
        kwargs[name] = cls(**vals)
    cfg = ScenarioConfig(**kwargs, defaulted=tuple(defaulted))
    cfg.validate()
    return cfg


def parse_config(path) -> ScenarioConfig:
    """Read a TOML configuration; relative paths inside are resolved against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read configuration {path}: {exc}") from exc
    try:
        doc = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise ConfigError("<file>", f"malformed TOML: {exc}") from exc
    charges = doc.get("charges")
    if isinstance(charges, dict) and isinstance(charges.get("pqr_file"), str) and charges["pqr_file"]:
        p = Path(charges["pqr_file"])
        if not p.is_absolute():
            charges["pqr_file"] = str((path.parent / p).resolve())
    return config_from_dict(doc)


def write_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(cfg.to_toml(), encoding="utf-8")


__all__ = ["ScenarioConfig", "GeometryConfig", "DielectricConfig", "ChargeConfig", "ElasticConfig",
           "SolverConfig", "FixedPointSection", "ContinuationConfig", "OracleConfig", "SweepConfig",
           "ConfigError", "SCENARIOS", "SWEEP_PARAMETERS", "parse_config", "config_from_dict",
           "write_config"]
