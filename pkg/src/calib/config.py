"""Run configuration: TOML sections with every default materialised.

Pressures are given in bar in the file and converted to Pa on use.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .acquisition import AcquisitionKind
from .constraints import ConstraintSpec
from .engine import ActuatorBox, AirPath, PlantParams
from .geometry import CrankGrid, EngineGeometry
from .gpr import HyperBounds
from .pso import SwarmConfig

BAR = 1.0e5


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunSection:
    seed: int = 0
    kind: str = "NEI"
    iterations: int = 100
    engine_time: float = 300.0
    convergence_threshold: float = 0.001


@dataclass
class GeometrySection:
    bore: float = 0.130
    stroke: float = 0.162
    conrod_length: float = 0.255
    compression_ratio: float = 17.2
    delta_ca: float = 0.2


@dataclass
class AirSection:
    p_im_bar: float = 1.0
    t_im: float = 318.15
    egr: float = 0.2


@dataclass
class BoxSection:
    q_fuel: list = field(default_factory=lambda: [1639.6, 2405.8])
    br: list = field(default_factory=lambda: [0.7046, 0.8188])
    soi_di: list = field(default_factory=lambda: [-75.0, -35.0])


@dataclass
class InitialSection:
    br: float = 0.8
    soi_di: float = -45.0
    q_fuel: float = 2000.0


@dataclass
class ConstraintSection:
    imep_req_bar: float = 4.0
    cov_ub: float = 0.10
    p_ub_bar: float = 200.0
    dp_ub_bar: float = 25.0
    beta_max: float = 0.05


@dataclass
class PcdSection:
    n_pc: int = 8
    kappa: float = 1.35
    bootstrap_grid: int = 5
    bootstrap_cycles: int = 10


@dataclass
class ControllerSection:
    gain: float = 0.5
    tolerance: float = 0.02
    settle_cycles: int = 3
    max_cycles: int = 50


@dataclass
class BufferSection:
    n_sample: int = 25


@dataclass
class GprSection:
    budget: int = 200
    phi_f_bounds: list = field(default_factory=lambda: [0.3, 10.0])
    lengthscale_bounds: list = field(default_factory=lambda: [0.15, 5.0])
    phi_f_default: float = 1.0
    lengthscale_default: float = 1.0


@dataclass
class AcquisitionSection:
    n_mc: int = 4096


@dataclass
class PsoSection:
    n_pso: int = 100
    iterations: int = 100
    c0: float = 0.1
    c1: float = 0.01
    c2: float = 0.1
    init_velocity: float = 0.05


_SECTIONS = {
    "run": RunSection,
    "geometry": GeometrySection,
    "air": AirSection,
    "plant": PlantParams,
    "box": BoxSection,
    "initial": InitialSection,
    "constraints": ConstraintSection,
    "pcd": PcdSection,
    "controller": ControllerSection,
    "buffer": BufferSection,
    "gpr": GprSection,
    "acquisition": AcquisitionSection,
    "pso": PsoSection,
}


def _coerce(section: str, name: str, value: Any, default: Any):
    where = f"[{section}].{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or len(value) != len(default) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of {len(default)} numbers, got {value!r}")
        return [float(v) for v in value]
    return value


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    air: AirSection = field(default_factory=AirSection)
    plant: PlantParams = field(default_factory=PlantParams)
    box: BoxSection = field(default_factory=BoxSection)
    initial: InitialSection = field(default_factory=InitialSection)
    constraints: ConstraintSection = field(default_factory=ConstraintSection)
    pcd: PcdSection = field(default_factory=PcdSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    buffer: BufferSection = field(default_factory=BufferSection)
    gpr: GprSection = field(default_factory=GprSection)
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)
    pso: PsoSection = field(default_factory=PsoSection)

    # --- (de)serialisation ---------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be a table")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"[{name}]: expected a table")
            defaults = klass()
            known = {f.name for f in fields(klass)}
            bad = set(raw) - known
            if bad:
                raise ConfigError(f"[{name}]: unknown key(s) {', '.join(sorted(bad))}")
            vals = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
            kwargs[name] = dataclasses.replace(defaults, **vals)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        try:
            return cls.loads(text)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), newline="\n")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with ``section={key: value}`` replacements, revalidated."""
        d = self.to_dict()
        for sec, vals in sections.items():
            d.setdefault(sec, {}).update(vals)
        return RunConfig.from_dict(d)

    # --- validation ----------------------------------------------------
    def validate(self) -> None:
        def need(cond, where, msg):
            if not cond:
                raise ConfigError(f"{where}: {msg}")

        try:
            AcquisitionKind(self.run.kind)
        except ValueError:
            raise ConfigError(f"[run].kind: must be one of EI, NEI, PI, NPI, got {self.run.kind!r}") from None
        need(self.run.iterations >= 0, "[run].iterations", "must be non-negative")
        need(self.run.engine_time > 0, "[run].engine_time", "must be positive")
        for key in ("q_fuel", "br", "soi_di"):
            lo, hi = getattr(self.box, key)
            need(lo < hi, f"[box].{key}", "lower bound must be below upper bound")
        for key in ("br", "soi_di", "q_fuel"):
            lo, hi = getattr(self.box, key)
            need(lo <= getattr(self.initial, key) <= hi, f"[initial].{key}", "must lie inside the actuator box")
        need(0 < self.constraints.beta_max < 1, "[constraints].beta_max", "must lie in (0, 1)")
        for key in ("imep_req_bar", "cov_ub", "p_ub_bar", "dp_ub_bar"):
            need(getattr(self.constraints, key) > 0, f"[constraints].{key}", "must be positive")
        need(1.0 < self.pcd.kappa < 2.0, "[pcd].kappa", "must lie in (1, 2)")
        need(self.pcd.n_pc >= 1, "[pcd].n_pc", "must be at least 1")
        need(self.pcd.bootstrap_grid ** 2 * self.pcd.bootstrap_cycles >= self.pcd.n_pc,
             "[pcd].bootstrap_grid", "bootstrap sweep yields fewer traces than n_pc")
        need(self.buffer.n_sample >= 2, "[buffer].n_sample", "must be at least 2")
        need(self.acquisition.n_mc >= 1000, "[acquisition].n_mc", "must be at least 1000")
        need(self.pso.n_pso >= 1 and self.pso.iterations >= 1, "[pso]", "n_pso and iterations must be >= 1")
        for key in ("c0", "c1", "c2"):
            need(0 <= getattr(self.pso, key) < 1, f"[pso].{key}", "must lie in [0, 1)")
        need(self.controller.max_cycles >= self.controller.settle_cycles, "[controller].max_cycles",
             "must be at least settle_cycles")
        for key in ("phi_f_bounds", "lengthscale_bounds"):
            lo, hi = getattr(self.gpr, key)
            need(0 < lo < hi, f"[gpr].{key}", "need 0 < lower < upper")
        try:
            CrankGrid(self.geometry.delta_ca)
            self.engine_geometry()
        except ValueError as exc:
            raise ConfigError(f"[geometry]: {exc}") from None

    # --- typed views ---------------------------------------------------
    @property
    def kind(self) -> AcquisitionKind:
        return AcquisitionKind(self.run.kind)

    def engine_geometry(self) -> EngineGeometry:
        g = self.geometry
        return EngineGeometry(g.bore, g.stroke, g.conrod_length, g.compression_ratio)

    def crank_grid(self) -> CrankGrid:
        return CrankGrid(self.geometry.delta_ca)

    def air_path(self) -> AirPath:
        return AirPath(self.air.p_im_bar * BAR, self.air.t_im, self.air.egr)

    def actuator_box(self) -> ActuatorBox:
        return ActuatorBox(tuple(self.box.q_fuel), tuple(self.box.br), tuple(self.box.soi_di))

    def constraint_spec(self) -> ConstraintSpec:
        c = self.constraints
        return ConstraintSpec(c.imep_req_bar * BAR, c.cov_ub, c.p_ub_bar * BAR, c.dp_ub_bar * BAR, c.beta_max)

    def hyper_bounds(self) -> HyperBounds:
        return HyperBounds(tuple(self.gpr.phi_f_bounds), tuple(self.gpr.lengthscale_bounds))

    def swarm_config(self, seed=None) -> SwarmConfig:
        box = self.actuator_box()
        p = self.pso
        return SwarmConfig(tuple(box.lower), tuple(box.upper), p.n_pso, p.iterations, p.c0, p.c1, p.c2,
                           self.constraints.beta_max, p.init_velocity, seed)
