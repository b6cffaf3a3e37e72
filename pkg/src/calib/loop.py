"""Bayesian-optimisation calibration loop against the surrogate plant."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionKind, CommonRandomNumbers, EmptyHistoryError, alpha_batch, best_observed, thresholds
from .config import RunConfig
from .constraints import ConstraintModel, compose, individual_probabilities
from .engine import CYCLE_TIME, FuelSettings, ImepController, SurrogatePlant, converge_noiseless, cov_imep, metrics
from .gpr import GPModel, GPRConditioningError, Hyperparams, Scaling, TrainingSet, fit
from .itc import CostOperator, ItcMap, OttoParams, build_cost_operator, cost, itc_map
from .pcd import PcBasis, project_many, train_basis
from .pso import run as run_pso

# stream identifiers for per-iteration seeding
_PLANT, _GPFIT, _CRN, _PSO, _BOOT = range(5)


def _rng(seed: int, k: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, k, stream]))


@dataclass(frozen=True)
class BufferSummary:
    """Sample statistics of the weights and Q_fuel over the buffer."""

    weight_mean: np.ndarray
    weight_var: np.ndarray
    q_mean: float
    q_var: float
    imep_mean: float
    cov: float
    p_max: float
    dp_max: float
    gie: float


def summarize_buffer(weights, q_fuel, imep, p_max, dp_max, work) -> BufferSummary:
    """Mean and ddof=1 variance of each buffered quantity."""
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if W.shape[0] < 2:
        raise ValueError("buffer needs at least two cycles")
    q = np.asarray(q_fuel, dtype=float)
    return BufferSummary(W.mean(axis=0), W.var(axis=0, ddof=1), float(q.mean()), float(q.var(ddof=1)),
                         float(np.mean(imep)), cov_imep(imep), float(np.mean(p_max)), float(np.mean(dp_max)),
                         float(np.sum(work) / q.sum()))


@dataclass
class Record:
    """One applied setting; plant-truth columns are for evaluation only."""

    iteration: int
    br: float
    soi_di: float
    q_fuel: float
    imep: float
    cov: float
    p_max: float
    dp_max: float
    gie: float
    cost: float
    feasible: bool
    saturated: bool
    converge_cycles: int
    engine_time: float
    alpha: float
    beta: float
    degenerate: bool
    true_gie: float
    true_p_max: float
    true_dp_max: float
    true_imep: float


RECORD_FIELDS = [f.name for f in fields(Record)]


class History:
    """Ordered records plus the GP training data they produced."""

    def __init__(self):
        self.records: list[Record] = []
        self.weight_means: list[np.ndarray] = []
        self.weight_vars: list[np.ndarray] = []

    def __len__(self):
        return len(self.records)

    def append(self, rec: Record, summary: BufferSummary) -> None:
        self.records.append(rec)
        self.weight_means.append(np.append(summary.weight_mean, summary.q_mean))
        self.weight_vars.append(np.append(summary.weight_var, summary.q_var))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in self.records:
            w.writerow([repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v
                        for v in (getattr(r, k) for k in RECORD_FIELDS)])
        return buf.getvalue()

    @staticmethod
    def read_csv(path) -> list[Record]:
        types = {f.name: f.type for f in fields(Record)}
        out = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                vals = {}
                for k, v in row.items():
                    t = types[k]
                    vals[k] = bool(int(v)) if t == "bool" else int(v) if t == "int" else float(v)
                out.append(Record(**vals))
        return out


def best_gie_trace(records) -> np.ndarray:
    """Running best observed GIE among feasible records (NaN before the first)."""
    out, best = [], math.nan
    for r in records:
        if r.feasible and (math.isnan(best) or r.gie > best):
            best = r.gie
        out.append(best)
    return np.array(out)


def detect_convergence(records, threshold: float = 0.001) -> float | None:
    """Engine time at which the running best first came within ``threshold`` of its final value.

    Returns None when no record is feasible or when only the last record
    achieves it, since convergence cannot then be told from a late jump.
    """
    trace = best_gie_trace(records)
    if len(trace) == 0 or np.all(np.isnan(trace)):
        return None
    final = trace[-1]
    for i, b in enumerate(trace):
        if not math.isnan(b) and final - b <= threshold:
            if i == len(trace) - 1 and len(trace) > 1:
                return None
            return records[i].engine_time
    return None


@dataclass
class LoopContext:
    """Everything fixed for one run once the bootstrap sweep is done."""

    config: RunConfig
    plant: SurrogatePlant
    truth: SurrogatePlant
    basis: PcBasis
    cmodel: ConstraintModel
    op: CostOperator
    itc: ItcMap
    scaling: Scaling

    @property
    def g(self) -> np.ndarray:
        return self.op.imep_vector


def bootstrap(config: RunConfig) -> tuple[PcBasis, Scaling]:
    """Noisy controller sweep over a coarse grid: trains the basis and the GP scaling."""
    geom, grid, air, box = config.engine_geometry(), config.crank_grid(), config.air_path(), config.actuator_box()
    plant = SurrogatePlant(config.plant, geom, grid, air)
    rng = _rng(config.run.seed, 0, _BOOT)
    n = config.pcd.bootstrap_grid
    target = config.constraint_spec().imep_req
    traces, settings, qs = [], [], []
    for br in np.linspace(*box.br, n):
        for soi in np.linspace(*box.soi_di, n):
            ctl = ImepController(target, box.q_fuel, geom.displacement, config.controller.gain)
            q = config.initial.q_fuel
            for _ in range(config.pcd.bootstrap_cycles):
                tr = plant.cycle(FuelSettings(q, br, soi), rng)
                traces.append(tr)
                settings.append((br, soi))
                qs.append(q)
                q = ctl.step(metrics(tr, q, geom).imep_g, q)
    basis = train_basis(traces, config.pcd.n_pc, config.pcd.kappa, geom)
    W = project_many(np.array([t.pressure for t in traces]), air.p_im, basis)
    Y = np.column_stack([W, qs])
    return basis, Scaling.fit(np.array(settings), Y)


def make_context(config: RunConfig) -> LoopContext:
    geom, grid, air = config.engine_geometry(), config.crank_grid(), config.air_path()
    basis, scaling = bootstrap(config)
    plant = SurrogatePlant(config.plant, geom, grid, air)
    truth = SurrogatePlant(config.plant.noiseless(), geom, grid, air)
    cmodel = ConstraintModel(basis, config.constraint_spec(), geom, air.p_im)
    op = build_cost_operator(basis, geom)
    imap = itc_map(air.p_im, OttoParams(geom, config.pcd.kappa), basis)
    return LoopContext(config, plant, truth, basis, cmodel, op, imap, scaling)


@dataclass
class Applied:
    summary: BufferSummary
    q_next: float
    saturated: bool
    cycles: int


def apply_setting(ctx: LoopContext, br: float, soi: float, q0: float, rng: np.random.Generator) -> Applied:
    """Settle the IMEP controller, then buffer cycles with the controller still active."""
    cfg = ctx.config
    geom, box = ctx.plant.geom, cfg.actuator_box()
    ctl = ImepController(cfg.constraint_spec().imep_req, box.q_fuel, geom.displacement, cfg.controller.gain,
                         cfg.controller.tolerance, cfg.controller.settle_cycles)
    q, cycles = q0, 0
    while cycles < cfg.controller.max_cycles and not ctl.converged:
        tr = ctx.plant.cycle(FuelSettings(q, br, soi), rng)
        q = ctl.step(metrics(tr, q, geom).imep_g, q)
        cycles += 1
    saturated = ctl.saturated and not ctl.converged
    n = cfg.buffer.n_sample
    P, Q = np.empty((n, geom and ctx.plant.grid.n_ca)), np.empty(n)
    imep, pmax, dpmax, work = (np.empty(n) for _ in range(4))
    for k in range(n):
        tr = ctx.plant.cycle(FuelSettings(q, br, soi), rng)
        m = metrics(tr, q, geom)
        P[k], Q[k] = tr.pressure, q
        imep[k], pmax[k], dpmax[k], work[k] = m.imep_g, m.p_max, m.dpdtheta_max, m.imep_g * geom.displacement
        q = ctl.step(m.imep_g, q)
    W = project_many(P, ctx.plant.air.p_im, ctx.basis)
    return Applied(summarize_buffer(W, Q, imep, pmax, dpmax, work), q, saturated, cycles + n)


def observed_feasible(s: BufferSummary, saturated: bool, config: RunConfig) -> bool:
    spec = config.constraint_spec()
    lo, hi = spec.imep_req * (1 - 0.5 * spec.cov_ub), spec.imep_req * (1 + 0.5 * spec.cov_ub)
    return (not saturated and lo <= s.imep_mean <= hi and s.cov <= spec.cov_ub
            and s.p_max < spec.p_ub and s.dp_max < spec.dp_ub)


class Evaluator:
    """Vectorised (alpha, beta) over PSO particles for one BO iteration."""

    def __init__(self, ctx: LoopContext, model: GPModel, kind: AcquisitionKind, crn: CommonRandomNumbers,
                 thresh: np.ndarray):
        self.ctx, self.model, self.kind, self.crn, self.thresh = ctx, model, kind, crn, thresh
        self._gs = float(ctx.g @ ctx.itc.slope)

    def cost_moments(self, X):
        b = self.model.predict(X)
        return cost_moments(self.ctx, b.mean, b.var, self._gs)

    def __call__(self, X):
        b = self.model.predict(X)
        m, s = cost_moments(self.ctx, b.mean, b.var, self._gs)
        st = self.ctx.cmodel.stats(b.mean[:, :-1], b.var[:, :-1])
        beta = compose(individual_probabilities(st.mean, st.var))
        return alpha_batch(self.kind, m, s, self.thresh, self.crn), beta


def cost_moments(ctx: LoopContext, mean, var, gs=None):
    """Mean and sd of the scalar s = g.(w - w_itc(Q)) whose square is the cost."""
    mean, var = np.atleast_2d(mean), np.atleast_2d(var)
    g = ctx.g
    gs = float(g @ ctx.itc.slope) if gs is None else gs
    m = mean[:, :-1] @ g - (ctx.itc.offset @ g + gs * mean[:, -1])
    v = var[:, :-1] @ (g * g) + gs * gs * var[:, -1]
    return m, np.sqrt(v)


def default_hyperparams(config: RunConfig, n_out: int) -> list[Hyperparams]:
    hp = Hyperparams(config.gpr.phi_f_default, (config.gpr.lengthscale_default,) * 2)
    return [hp] * n_out


@dataclass
class LoopState:
    k: int = 0
    q: float = 0.0
    engine_time: float = 0.0
    hps: list = field(default_factory=list)


class CalibrationRun:
    """One seeded run; ``step`` performs one BO iteration."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.kind = config.kind
        self.ctx = make_context(config)
        self.history = History()
        self.state = LoopState(q=config.initial.q_fuel)
        self.last_model: GPModel | None = None

    # -- bookkeeping ---------------------------------------------------------
    def _record(self, br, soi, applied: Applied, alpha, beta, degenerate) -> None:
        cfg, st = self.config, self.state
        s = applied.summary
        st.engine_time += applied.cycles * CYCLE_TIME
        tp = converge_noiseless(self.ctx.truth, br, soi, cfg.constraint_spec().imep_req, cfg.actuator_box(),
                                cfg.controller.gain)
        j = float(cost(s.weight_mean, self.ctx.itc(s.q_mean), self.ctx.op))
        rec = Record(st.k, float(br), float(soi), s.q_mean, s.imep_mean, s.cov, s.p_max, s.dp_max, s.gie, j,
                     observed_feasible(s, applied.saturated, cfg), applied.saturated, applied.cycles,
                     st.engine_time, float(alpha), float(beta), bool(degenerate), tp.gie, tp.p_max, tp.dp_max,
                     tp.imep)
        self.history.append(rec, s)
        st.q = applied.q_next

    def training_set(self) -> TrainingSet:
        h = self.history
        X = np.array([(r.br, r.soi_di) for r in h.records])
        return TrainingSet(X, np.array(h.weight_means), np.array(h.weight_vars), self.ctx.scaling)

    @property
    def done(self) -> bool:
        return (self.state.k > self.config.run.iterations
                or self.state.engine_time >= self.config.run.engine_time)

    # -- iterations ----------------------------------------------------------
    def initial(self) -> None:
        ini = self.config.initial
        applied = apply_setting(self.ctx, ini.br, ini.soi_di, self.state.q, _rng(self.config.run.seed, 0, _PLANT))
        self._record(ini.br, ini.soi_di, applied, math.nan, math.nan, False)
        self.state.k = 1

    def fit_model(self) -> GPModel:
        ts = self.training_set()
        seed = self.config.run.seed
        if len(ts) < 3:
            hps = default_hyperparams(self.config, ts.n_out)
        else:
            warm = self.state.hps or None
            sub = int(_rng(seed, self.state.k, _GPFIT).integers(2**31))
            hps = fit(ts, self.config.gpr.budget, sub, warm, self.config.hyper_bounds())
        self.state.hps = hps
        try:
            model = GPModel(ts, hps)
        except GPRConditioningError:
            hps = default_hyperparams(self.config, ts.n_out)
            self.state.hps = hps
            model = GPModel(ts, hps)
        self.last_model = model
        return model

    def propose(self, model: GPModel):
        h, k, seed = self.history, self.state.k, self.config.run.seed
        costs = h.column("cost")
        feas = h.column("feasible")
        locs = [(r.br, r.soi_di) for r in h.records]
        try:
            j_best, loc, _ = best_observed(costs, feas, locs)
        except EmptyHistoryError:
            # no feasible record yet: fall back to the lowest cost overall
            j_best, loc, _ = best_observed(costs, np.ones(len(costs), bool), locs)
        crn = CommonRandomNumbers.draw(self.config.acquisition.n_mc, _rng(seed, k, _CRN))
        inc = None
        if self.kind.noisy:
            b = model.predict(np.atleast_2d(loc))
            m, s = cost_moments(self.ctx, b.mean, b.var)
            inc = (float(m[0]), float(s[0]))
        thresh = thresholds(self.kind, crn, j_best, inc)
        ev = Evaluator(self.ctx, model, self.kind, crn, thresh)
        return run_pso(self.config.swarm_config(), ev, _rng(seed, k, _PSO))

    def step(self) -> Record:
        model = self.fit_model()
        res = self.propose(model)
        br, soi = (float(v) for v in res.position)
        applied = apply_setting(self.ctx, br, soi, self.state.q, _rng(self.config.run.seed, self.state.k, _PLANT))
        self._record(br, soi, applied, res.alpha, res.beta, res.degenerate)
        self.state.k += 1
        return self.history.records[-1]

    def run(self, callback=None) -> History:
        if not self.history.records:
            self.initial()
        while not self.done:
            rec = self.step()
            if callback is not None:
                callback(rec)
        return self.history

    # -- persistence ---------------------------------------------------------
    def checkpoint(self) -> dict:
        return {
            "k": self.state.k,
            "q": self.state.q,
            "engine_time": self.state.engine_time,
            "hyperparameters": [{"phi_f": h.phi_f, "lengthscales": list(h.lengthscales)} for h in self.state.hps],
            "records": [asdict(r) for r in self.history.records],
            "weight_means": [w.tolist() for w in self.history.weight_means],
            "weight_vars": [w.tolist() for w in self.history.weight_vars],
        }

    @classmethod
    def resume(cls, config: RunConfig, data: dict) -> "CalibrationRun":
        run = cls(config)
        run.state = LoopState(int(data["k"]), float(data["q"]), float(data["engine_time"]),
                              [Hyperparams(h["phi_f"], tuple(h["lengthscales"])) for h in data["hyperparameters"]])
        run.history.records = [Record(**r) for r in data["records"]]
        run.history.weight_means = [np.array(w) for w in data["weight_means"]]
        run.history.weight_vars = [np.array(w) for w in data["weight_vars"]]
        return run


def summary(history: History, config: RunConfig, oracle_gie: float | None = None) -> dict:
    recs = history.records
    trace = best_gie_trace(recs)
    feas = [r for r in recs if r.feasible]
    best = max(feas, key=lambda r: r.gie) if feas else None
    out = {
        "kind": config.run.kind,
        "seed": config.run.seed,
        "iterations": len(recs) - 1,
        "engine_time": recs[-1].engine_time if recs else 0.0,
        "best_gie": best.gie if best else None,
        "best_true_gie": best.true_gie if best else None,
        "best_br": best.br if best else None,
        "best_soi_di": best.soi_di if best else None,
        "convergence_time": detect_convergence(recs, config.run.convergence_threshold),
        "n_feasible": len(feas),
        "n_infeasible": len(recs) - len(feas),
        "final_running_best": None if len(trace) == 0 or math.isnan(trace[-1]) else float(trace[-1]),
    }
    if oracle_gie is not None and best is not None:
        out["oracle_gie"] = oracle_gie
        out["gap"] = oracle_gie - best.true_gie
    return out


def run_calibration(config: RunConfig, out_dir=None, resume: bool = False, callback=None) -> History:
    """Run to completion; with ``out_dir`` write history, checkpoint and summary there."""
    out = Path(out_dir) if out_dir is not None else None
    ck = out / "checkpoint.json" if out is not None else None
    if resume and ck is not None and ck.exists():
        cr = CalibrationRun.resume(config, json.loads(ck.read_text()))
    else:
        cr = CalibrationRun(config)

    def on_step(rec):
        if out is not None:
            _write(out, cr)
        if callback is not None:
            callback(rec)

    if not cr.history.records:
        cr.initial()
        on_step(cr.history.records[-1])
    while not cr.done:
        on_step(cr.step())
    if out is not None:
        _write(out, cr)
    return cr.history


def _write(out: Path, cr: CalibrationRun) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(cr.history.to_csv(), newline="\n")
    (out / "checkpoint.json").write_text(json.dumps(cr.checkpoint(), indent=1) + "\n", newline="\n")
    (out / "summary.json").write_text(json.dumps(summary(cr.history, cr.config), indent=1) + "\n", newline="\n")
