"""Otto-cycle reference pressure and the quadratic energy-loss cost."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import CrankGrid, EngineGeometry, Quadrature
from .pcd import DEFAULT_KAPPA, PcBasis, PressureTrace


class DegenerateITCWarning(UserWarning):
    pass


def otto_efficiency(compression_ratio: float, kappa: float) -> float:
    return 1.0 - compression_ratio ** (1.0 - kappa)


@dataclass(frozen=True)
class OttoParams:
    geom: EngineGeometry = EngineGeometry()
    kappa: float = DEFAULT_KAPPA
    p_low: float | None = None  # defaults to p_im

    @property
    def eta_itc(self) -> float:
        return otto_efficiency(self.geom.compression_ratio, self.kappa)


@dataclass(frozen=True)
class OttoTrace:
    trace: PressureTrace
    p_high: float
    degenerate: bool


def otto_pressure(q_fuel: float, p_im: float, params: OttoParams, grid: CrankGrid) -> OttoTrace:
    """Otto pressure whose closed-cycle work equals eta_itc * q_fuel.

    Compression covers theta <= 0 and expansion theta > 0; the expansion
    level ``p_high`` is solved from the work balance on the same quadrature
    used everywhere else.
    """
    quad = Quadrature(grid, params.geom)
    v = quad.volume
    p_low = p_im if params.p_low is None else params.p_low
    k = params.kappa
    comp = grid.theta <= 0.0
    shape = np.where(comp, (v[0] / v) ** k, (params.geom.clearance_volume / v) ** k)
    w = quad.weights
    w_comp = p_low * (w[comp] @ shape[comp])
    exp_integral = w[~comp] @ shape[~comp]
    p_high = (params.eta_itc * q_fuel - w_comp) / exp_integral
    p = np.where(comp, p_low * shape, p_high * shape)
    degenerate = p_high < p_low * params.geom.compression_ratio**k
    if degenerate:
        warnings.warn("degenerate ITC: expansion level below compression end pressure", DegenerateITCWarning)
    return OttoTrace(PressureTrace(grid, p, p_im), float(p_high), bool(degenerate))


@dataclass(frozen=True)
class CostOperator:
    """Rank-1 energy operator Z1 = g g^T with g_i = int f_i dV."""

    imep_vector: np.ndarray

    @cached_property
    def Z1(self) -> np.ndarray:
        return np.outer(self.imep_vector, self.imep_vector)

    def work(self, w) -> np.ndarray:
        """Reconstructed residual work g^T w [J]."""
        return np.asarray(w, dtype=float) @ self.imep_vector


def build_cost_operator(basis: PcBasis, geom: EngineGeometry | None = None) -> CostOperator:
    quad = Quadrature(basis.grid, geom or basis.geom)
    g = basis.components @ quad.weights
    g.setflags(write=False)
    return CostOperator(g)


def itc_weights(q_fuel: float, p_im: float, params: OttoParams, basis: PcBasis) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateITCWarning)
        otto = otto_pressure(q_fuel, p_im, params, basis.grid).trace
    return basis.components @ (otto.pressure - basis.motored(p_im))


@dataclass(frozen=True)
class ItcMap:
    """w_ITC(Q) = offset + slope * Q; exact because p_high is affine in Q."""

    offset: np.ndarray
    slope: np.ndarray

    def __call__(self, q_fuel):
        q = np.asarray(q_fuel, dtype=float)
        return self.offset + q[..., None] * self.slope


def itc_map(p_im: float, params: OttoParams, basis: PcBasis) -> ItcMap:
    w0 = itc_weights(0.0, p_im, params, basis)
    w1 = itc_weights(1000.0, p_im, params, basis)
    return ItcMap(w0, (w1 - w0) / 1000.0)


def cost(w, w_itc, op: CostOperator):
    """J_ITC = (w - w_itc)^T Z1 (w - w_itc) [J^2]; broadcasts over leading axes."""
    d = (np.asarray(w, dtype=float) - np.asarray(w_itc, dtype=float)) @ op.imep_vector
    return d * d
