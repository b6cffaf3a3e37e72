"""Multi-run experiments, the oracle cache, comparison tables and plot data."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionKind
from .config import RunConfig
from .engine import FuelSettings, SurrogatePlant, converge_noiseless, grid_oracle
from .geometry import Quadrature
from .itc import OttoParams, otto_pressure
from .loop import History, Record, best_gie_trace, detect_convergence, run_calibration, summary

ORACLE_COLUMNS = ["br", "soi_di", "gie", "imep", "q_fuel", "p_max", "dp_max", "feasible"]
KINDS = tuple(k.value for k in AcquisitionKind)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), newline="\n")


# --- oracle ------------------------------------------------------------------

@dataclass(frozen=True)
class OracleSummary:
    br: float
    soi_di: float
    gie: float
    q_fuel: float
    cost: float


def oracle_key(config: RunConfig, resolution: int = 50) -> str:
    """Hash of every config field the oracle depends on."""
    d = config.to_dict()
    relevant = {k: d[k] for k in ("geometry", "air", "plant", "box", "constraints", "controller")}
    relevant["resolution"] = resolution
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]


def oracle_cost(config: RunConfig, br: float, soi: float) -> tuple[float, float]:
    """Noiseless converged Q_fuel and ITC cost at a setting, by direct quadrature."""
    geom, grid, air = config.engine_geometry(), config.crank_grid(), config.air_path()
    plant = SurrogatePlant(config.plant.noiseless(), geom, grid, air)
    tp = converge_noiseless(plant, br, soi, config.constraint_spec().imep_req, config.actuator_box(),
                            config.controller.gain)
    quad = Quadrature(grid, geom)
    work = quad.work(plant.cycle(FuelSettings(tp.q_fuel, br, soi)).pressure)
    otto = otto_pressure(tp.q_fuel, air.p_im, OttoParams(geom, config.pcd.kappa), grid).trace
    return tp.q_fuel, float((quad.work(otto.pressure) - work) ** 2)


def oracle(config: RunConfig, cache_dir, resolution: int = 50) -> tuple[OracleSummary, Path, bool]:
    """Cached grid oracle; returns the summary, the CSV path and whether it was computed now."""
    cache = Path(cache_dir)
    key = oracle_key(config, resolution)
    csv_path, meta_path = cache / f"oracle_{key}.csv", cache / f"oracle_{key}.json"
    if csv_path.exists() and meta_path.exists():
        return OracleSummary(**json.loads(meta_path.read_text())), csv_path, False
    spec = config.constraint_spec()
    res = grid_oracle(config.plant, config.air_path(), resolution, box=config.actuator_box(),
                      imep_req=spec.imep_req, cov_ub=spec.cov_ub, p_ub=spec.p_ub, dp_ub=spec.dp_ub,
                      geom=config.engine_geometry(), grid=config.crank_grid())
    q, j = oracle_cost(config, res.best_br, res.best_soi)
    summ = OracleSummary(res.best_br, res.best_soi, res.best_gie, q, j)
    cache.mkdir(parents=True, exist_ok=True)
    cols = [res.br, res.soi, res.gie, res.imep, res.q_fuel, res.p_max, res.dp_max]
    rows = [[*(float(c.flat[i]) for c in cols), int(res.feasible.flat[i])] for i in range(res.br.size)]
    _write_csv(csv_path, ORACLE_COLUMNS, rows)
    meta_path.write_text(json.dumps(summ.__dict__, indent=1) + "\n", newline="\n")
    return summ, csv_path, True


# --- experiments ---------------------------------------------------------------

@dataclass
class ExperimentSpec:
    config: RunConfig
    kinds: list = field(default_factory=lambda: list(KINDS))
    seeds: list = field(default_factory=lambda: [0])
    out_dir: Path = Path("runs")

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad or not self.kinds:
            raise ValueError(f"acquisition kinds must be a non-empty subset of {KINDS}, got {self.kinds}")
        self.out_dir = Path(self.out_dir)

    def run_dir(self, kind: str, seed: int) -> Path:
        return self.out_dir / kind / f"seed_{seed}"


def run_experiment(spec: ExperimentSpec, resume: bool = True, progress=None) -> list[Path]:
    """Every (kind, seed) run; each directory holds its resolved config, history and summary."""
    dirs = []
    for kind in spec.kinds:
        for seed in spec.seeds:
            cfg = spec.config.with_overrides(run={"kind": kind, "seed": int(seed)})
            d = spec.run_dir(kind, seed)
            d.mkdir(parents=True, exist_ok=True)
            cfg.save(d / "config.toml")
            run_calibration(cfg, d, resume=resume)
            if progress is not None:
                progress(kind, seed, d)
            dirs.append(d)
    return dirs


# --- comparison ----------------------------------------------------------------

COMPARE_COLUMNS = ["kind", "seed", "d_br", "d_soi_di", "d_cost", "d_gie", "convergence_time", "n_iterations",
                   "n_truth_violations", "n_observed_infeasible"]


def run_metrics(records: list[Record], config: RunConfig, orc: OracleSummary) -> dict:
    """Deltas of the best feasible observed record against the oracle."""
    spec = config.constraint_spec()
    feas = [r for r in records if r.feasible]
    best = max(feas, key=lambda r: r.gie) if feas else None
    viol = sum(r.true_p_max > spec.p_ub or r.true_dp_max > spec.dp_ub for r in records)
    conv = detect_convergence(records, config.run.convergence_threshold)
    return {
        "kind": config.run.kind,
        "seed": config.run.seed,
        "d_br": best.br - orc.br if best else math.nan,
        "d_soi_di": best.soi_di - orc.soi_di if best else math.nan,
        "d_cost": best.cost - orc.cost if best else math.nan,
        "d_gie": orc.gie - best.true_gie if best else math.nan,
        "convergence_time": math.nan if conv is None else conv,
        "n_iterations": len(records) - 1,
        "n_truth_violations": viol,
        "n_observed_infeasible": len(records) - len(feas),
    }


def _median(vals) -> float:
    v = np.array([x for x in vals if not math.isnan(x)], dtype=float)
    return float(np.median(v)) if v.size else math.nan


def compare(runs_dir, cache_dir=None) -> tuple[list[dict], list[dict]]:
    """Per-run rows and per-kind medians for every run directory below ``runs_dir``."""
    runs_dir = Path(runs_dir)
    cache_dir = Path(cache_dir) if cache_dir is not None else runs_dir / "oracle"
    rows = []
    for hist in sorted(runs_dir.glob("*/seed_*/history.csv")):
        cfg = RunConfig.load(hist.parent / "config.toml")
        orc, _, _ = oracle(cfg, cache_dir)
        rows.append(run_metrics(History.read_csv(hist), cfg, orc))
    rows.sort(key=lambda r: (KINDS.index(r["kind"]), r["seed"]))
    medians = []
    for kind in KINDS:
        sub = [r for r in rows if r["kind"] == kind]
        if not sub:
            continue
        med = {"kind": kind, "seed": "median"}
        for col in COMPARE_COLUMNS[2:]:
            med[col] = _median([float(r[col]) for r in sub])
        medians.append(med)
    return rows, medians


def write_compare(rows, medians, path) -> None:
    _write_csv(Path(path), COMPARE_COLUMNS, [[r[c] for c in COMPARE_COLUMNS] for r in rows + medians])


def format_table(medians) -> str:
    head = f"{'kind':<5} {'dBR':>9} {'dSOI':>8} {'dJ [J^2]':>10} {'dGIE':>9} {'t_conv [s]':>10}"
    lines = [head]
    for m in medians:
        lines.append(f"{m['kind']:<5} {m['d_br']:>9.4f} {m['d_soi_di']:>8.2f} {m['d_cost']:>10.3g} "
                     f"{m['d_gie']:>9.5f} {m['convergence_time']:>10.1f}")
    return "\n".join(lines)


# --- plot data -----------------------------------------------------------------

PLOT_FILES = {
    "best_vs_time.csv": ("best_cost", "best_gie"),
    "per_iteration.csv": ("cost", "p_max", "dp_max", "cov"),
    "actuators.csv": ("br", "soi_di"),
}
PLOT_HEADER = ["iteration", "engine_time", "variable", "value"]


def emit_plot_data(records: list[Record], out_dir) -> list[Path]:
    """Long-format CSVs, one per figure analog; header-only for an empty history."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gie = best_gie_trace(records)
    best_cost, cur = [], math.nan
    for r in records:
        if r.feasible and (math.isnan(cur) or r.cost < cur):
            cur = r.cost
        best_cost.append(cur)
    derived = {"best_cost": best_cost, "best_gie": list(gie)}
    paths = []
    for name, variables in PLOT_FILES.items():
        rows = []
        for var in variables:
            for i, r in enumerate(records):
                val = derived[var][i] if var in derived else getattr(r, var)
                rows.append([r.iteration, r.engine_time, var, float(val)])
        _write_csv(out / name, PLOT_HEADER, rows)
        paths.append(out / name)
    return paths


def write_summary(records, config: RunConfig, orc: OracleSummary | None, path) -> dict:
    h = History()
    h.records = list(records)
    s = summary(h, config, orc.gie if orc else None)
    Path(path).write_text(json.dumps(s, indent=1) + "\n", newline="\n")
    return s
