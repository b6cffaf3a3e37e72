"""Synthetic stochastic dual-fuel engine used as the plant under calibration.

The plant is a single-zone adiabatic cylinder with a single Wiebe heat
release. Combustion phasing, burn duration and combustion efficiency are
quadratic response surfaces in normalised (BR, SOI) coordinates. Cycle
to cycle variation enters through Gaussian perturbations of CA50 and of
the released energy. It is a stand-in with plausible qualitative
behaviour, not a validated engine model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from .geometry import CrankGrid, EngineGeometry, Quadrature, cumulative_trapezoid
from .pcd import DEFAULT_KAPPA, PressureTrace

CYCLE_TIME = 0.1  # s per cycle, 4-stroke at 1200 rpm


@dataclass(frozen=True)
class FuelSettings:
    q_fuel: float
    br: float
    soi_di: float


@dataclass(frozen=True)
class ActuatorBox:
    q_fuel: tuple[float, float] = (1639.6, 2405.8)
    br: tuple[float, float] = (0.7046, 0.8188)
    soi_di: tuple[float, float] = (-75.0, -35.0)

    def contains(self, s: FuelSettings, tol: float = 1e-9) -> bool:
        return all(
            lo - tol <= x <= hi + tol
            for x, (lo, hi) in ((s.q_fuel, self.q_fuel), (s.br, self.br), (s.soi_di, self.soi_di))
        )

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.br[0], self.soi_di[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.br[1], self.soi_di[1]])


@dataclass(frozen=True)
class AirPath:
    p_im: float = 1.0e5
    t_im: float = 318.15
    egr: float = 0.2


@dataclass(frozen=True)
class PlantParams:
    """Response-surface coefficients in normalised coordinates.

    u = (BR - br_center) / br_half and v = (SOI - soi_center) / soi_half.
    """

    br_center: float = 0.7617
    br_half: float = 0.0571
    soi_center: float = -55.0
    soi_half: float = 20.0
    kappa: float = DEFAULT_KAPPA
    wiebe_a: float = 6.908
    wiebe_m: float = 2.0
    # CA50 [CADaTDC]
    ca50_0: float = 6.0
    ca50_u: float = 2.5
    ca50_v: float = 6.0
    ca50_uv: float = 1.0
    # burn duration [CAD]
    dur_0: float = 10.0
    dur_u: float = 4.0
    dur_v: float = 5.0
    dur_uv: float = 1.5
    dur_vv: float = 0.0
    dur_min: float = 1.0
    # combustion efficiency [-]
    eff_0: float = 0.985
    eff_uu: float = 0.06
    eff_u0: float = 0.25
    eff_vv: float = 0.04
    eff_corner: float = 0.2
    # fraction of released heat kept from the walls, peaked at a phasing
    wall_0: float = 0.82
    wall_ca50: float = 8.0
    wall_k: float = 0.0015
    # cycle-to-cycle variation
    sigma_ca50_0: float = 0.5
    sigma_ca50_v: float = 0.5
    sigma_energy_0: float = 0.004
    sigma_energy_k: float = 1.2

    def to_dict(self) -> dict:
        return asdict(self)

    def noiseless(self) -> "PlantParams":
        d = self.to_dict()
        d.update(sigma_ca50_0=0.0, sigma_ca50_v=0.0, sigma_energy_0=0.0, sigma_energy_k=0.0)
        return PlantParams(**d)


@dataclass(frozen=True)
class CombustionState:
    ca50: float
    duration: float
    efficiency: float
    sigma_ca50: float
    sigma_energy: float


def combustion_state(br: float, soi: float, params: PlantParams) -> CombustionState:
    u = (br - params.br_center) / params.br_half
    v = (soi - params.soi_center) / params.soi_half
    ca50 = params.ca50_0 + params.ca50_u * u + params.ca50_v * v + params.ca50_uv * u * v
    dur = params.dur_0 + params.dur_u * u + params.dur_v * v + params.dur_uv * u * v + params.dur_vv * v * v
    eff = (params.eff_0 - params.eff_uu * (u - params.eff_u0) ** 2 - params.eff_vv * v * v
           - params.eff_corner * (u + 1.0) * (v + 1.0) / 4.0)
    sig_ca = max(params.sigma_ca50_0 + params.sigma_ca50_v * v, 0.0)
    sig_e = params.sigma_energy_0 + params.sigma_energy_k * (1.0 - eff) ** 2
    return CombustionState(ca50, max(dur, params.dur_min), eff, sig_ca, sig_e)


class SurrogatePlant:
    """Cycle generator with cached geometry arrays."""

    def __init__(self, params: PlantParams = PlantParams(), geom: EngineGeometry = EngineGeometry(),
                 grid: CrankGrid = CrankGrid(), air: AirPath = AirPath()):
        self.params = params
        self.geom = geom
        self.grid = grid
        self.air = air
        self.quad = Quadrature(grid, geom)

    @cached_property
    def _v_kappa(self) -> np.ndarray:
        return self.quad.volume ** self.params.kappa

    @cached_property
    def _v_kappa_m1(self) -> np.ndarray:
        return self.quad.volume ** (self.params.kappa - 1.0)

    def wall_fraction(self, ca50: float) -> float:
        p = self.params
        return p.wall_0 - p.wall_k * (ca50 - p.wall_ca50) ** 2

    def pressure(self, energy: float, ca50: float, duration: float) -> np.ndarray:
        """Closed-form first law: d(p V^k) = (k - 1) V^(k-1) dQ."""
        p = self.params
        a, m = p.wiebe_a, p.wiebe_m
        start = ca50 - duration * (math.log(2.0) / a) ** (1.0 / (m + 1.0))
        z = np.clip((self.grid.theta - start) / duration, 0.0, None)
        dxb = a * (m + 1.0) / duration * z**m * np.exp(-a * z ** (m + 1.0))
        released = cumulative_trapezoid((p.kappa - 1.0) * energy * self._v_kappa_m1 * dxb, self.grid.delta_ca)
        return (self.air.p_im * self._v_kappa[0] + released) / self._v_kappa

    def cycle(self, s: FuelSettings, rng: np.random.Generator | None = None) -> PressureTrace:
        st = combustion_state(s.br, s.soi_di, self.params)
        ca50, scale = st.ca50, 1.0
        if rng is not None:
            xi = rng.standard_normal(2)
            ca50 += st.sigma_ca50 * xi[0]
            scale = max(1.0 + st.sigma_energy * xi[1], 0.0)
        energy = s.q_fuel * st.efficiency * self.wall_fraction(ca50) * scale
        return PressureTrace(self.grid, self.pressure(energy, ca50, st.duration), self.air.p_im)

    def efficiency(self, br: float, soi: float) -> float:
        """Noiseless gross indicated efficiency; independent of Q_fuel."""
        tr = self.cycle(FuelSettings(1000.0, br, soi))
        return float(self.quad.work(tr.pressure)) / 1000.0


def simulate_cycle(s: FuelSettings, air: AirPath, params: PlantParams, rng=None,
                   geom: EngineGeometry = EngineGeometry(), grid: CrankGrid = CrankGrid()) -> PressureTrace:
    return SurrogatePlant(params, geom, grid, air).cycle(s, rng)


@dataclass(frozen=True)
class CycleMetrics:
    imep_g: float
    gie: float
    p_max: float
    dpdtheta_max: float


def metrics(trace: PressureTrace, q_fuel: float, geom: EngineGeometry) -> CycleMetrics:
    quad = Quadrature(trace.grid, geom)
    work = float(quad.work(trace.pressure))
    dp = np.gradient(trace.pressure, trace.grid.delta_ca)
    return CycleMetrics(work / geom.displacement, work / q_fuel, float(trace.pressure.max()), float(dp.max()))


def cov_imep(imeps) -> float:
    """Coefficient of variation with the sample (ddof=1) standard deviation."""
    x = np.asarray(imeps, dtype=float)
    if x.size < 2:
        raise ValueError("cov needs at least two cycles")
    mu = x.mean()
    if mu <= 0:
        raise ValueError("cov undefined for non-positive mean IMEP")
    return float(x.std(ddof=1) / mu)


@dataclass
class ImepController:
    """Next-cycle integral control of IMEP_g through Q_fuel."""

    target: float
    q_bounds: tuple[float, float]
    displacement: float
    gain: float = 0.5
    tolerance: float = 0.02
    settle_cycles: int = 3
    _in_band: int = field(default=0, init=False)
    saturated: bool = field(default=False, init=False)

    def step(self, measured: float, q_fuel: float) -> float:
        q = q_fuel + self.gain * (self.target - measured) * self.displacement
        lo, hi = self.q_bounds
        self.saturated = not lo <= q <= hi
        q = min(max(q, lo), hi)
        if abs(measured - self.target) <= self.tolerance * self.target:
            self._in_band += 1
        else:
            self._in_band = 0
        return q

    @property
    def converged(self) -> bool:
        return self._in_band >= self.settle_cycles

    def reset(self) -> None:
        self._in_band = 0
        self.saturated = False


def imep_controller_step(measured_imep: float, q_fuel: float, target: float, gain: float,
                         displacement: float, q_bounds: tuple[float, float]) -> tuple[float, bool]:
    """One controller update; returns (new q_fuel, saturated)."""
    ctl = ImepController(target, q_bounds, displacement, gain)
    q = ctl.step(measured_imep, q_fuel)
    return q, ctl.saturated


@dataclass(frozen=True)
class OracleResult:
    br: np.ndarray
    soi: np.ndarray
    gie: np.ndarray
    imep: np.ndarray
    q_fuel: np.ndarray
    p_max: np.ndarray
    dp_max: np.ndarray
    feasible: np.ndarray
    best_br: float
    best_soi: float
    best_gie: float

    @property
    def grid_best_index(self) -> tuple[int, int]:
        g = np.where(self.feasible, self.gie, -np.inf)
        return np.unravel_index(int(np.argmax(g)), g.shape)


@dataclass(frozen=True)
class TruePoint:
    q_fuel: float
    gie: float
    imep: float
    p_max: float
    dp_max: float
    saturated: bool


def converge_noiseless(plant: SurrogatePlant, br: float, soi: float, imep_req: float, box: ActuatorBox,
                       gain: float = 0.5, q0: float | None = None, max_cycles: int = 500) -> TruePoint:
    """Run the IMEP controller against the noiseless plant until it settles."""
    gie = plant.efficiency(br, soi)
    vd = plant.geom.displacement
    ctl = ImepController(imep_req, box.q_fuel, vd, gain)
    q = q0 if q0 is not None else 0.5 * sum(box.q_fuel)
    # the noiseless plant is linear in Q_fuel, so IMEP = gie * q / Vd exactly
    for _ in range(max_cycles):
        q_new = ctl.step(gie * q / vd, q)
        if ctl.converged and abs(q_new - q) < 1e-9 * q or (ctl.saturated and q_new == q):
            break
        q = q_new
    tr = plant.cycle(FuelSettings(q, br, soi))
    m = metrics(tr, q, plant.geom)
    return TruePoint(q, m.gie, m.imep_g, m.p_max, m.dpdtheta_max, ctl.saturated)


def _true_feasible(tp: TruePoint, imep_req, cov_ub, p_ub, dp_ub) -> bool:
    lo, hi = imep_req * (1 - 0.5 * cov_ub), imep_req * (1 + 0.5 * cov_ub)
    return lo <= tp.imep <= hi and tp.p_max < p_ub and tp.dp_max < dp_ub


def grid_oracle(params: PlantParams, air: AirPath, resolution: int = 50, *, box: ActuatorBox = ActuatorBox(),
                imep_req: float = 4.0e5, cov_ub: float = 0.10, p_ub: float = 200e5, dp_ub: float = 25e5,
                geom: EngineGeometry = EngineGeometry(), grid: CrankGrid = CrankGrid(),
                refine: bool = True) -> OracleResult:
    """Exhaustive noiseless sweep of the box; returns the feasible GIE maximum.

    Noise parameters are ignored. With ``refine`` the grid maximum is
    polished by a bounded local search that keeps the feasibility test.
    """
    if resolution < 50:
        raise ValueError("oracle resolution must be at least 50")
    plant = SurrogatePlant(params.noiseless(), geom, grid, air)
    brs = np.linspace(*box.br, resolution)
    sois = np.linspace(*box.soi_di, resolution)
    shape = (resolution, resolution)
    out = {k: np.empty(shape) for k in ("gie", "imep", "q", "pmax", "dpmax")}
    feas = np.zeros(shape, dtype=bool)
    for i, br in enumerate(brs):
        for j, soi in enumerate(sois):
            tp = converge_noiseless(plant, br, soi, imep_req, box)
            out["gie"][i, j], out["imep"][i, j], out["q"][i, j] = tp.gie, tp.imep, tp.q_fuel
            out["pmax"][i, j], out["dpmax"][i, j] = tp.p_max, tp.dp_max
            feas[i, j] = _true_feasible(tp, imep_req, cov_ub, p_ub, dp_ub)
    BR, SOI = np.meshgrid(brs, sois, indexing="ij")
    g = np.where(feas, out["gie"], -np.inf)
    i, j = np.unravel_index(int(np.argmax(g)), shape)
    best = (float(BR[i, j]), float(SOI[i, j]), float(out["gie"][i, j]))
    if refine:
        scale = np.array([box.br[1] - box.br[0], box.soi_di[1] - box.soi_di[0]])
        lo = np.array([box.br[0], box.soi_di[0]])

        def neg(x):
            br, soi = lo + x * scale
            tp = converge_noiseless(plant, br, soi, imep_req, box)
            return -tp.gie if _true_feasible(tp, imep_req, cov_ub, p_ub, dp_ub) else 1.0

        x0 = (np.array(best[:2]) - lo) / scale
        res = minimize(neg, x0, method="Nelder-Mead", bounds=[(0, 1), (0, 1)],
                       options={"xatol": 1e-5, "fatol": 1e-9, "initial_simplex": [x0, x0 + [0.01, 0], x0 + [0, 0.01]]})
        if -res.fun > best[2]:
            br, soi = lo + res.x * scale
            best = (float(br), float(soi), float(-res.fun))
    return OracleResult(BR, SOI, out["gie"], out["imep"], out["q"], out["pmax"], out["dpmax"], feas, *best)
