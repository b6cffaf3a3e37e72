"""Gaussian constraint statistics and the composed violation probability.

Every constraint is written as h > 0 meaning violation:
  h1 = W_low - W (IMEP below band), h2 = W - W_high (IMEP above band),
  h3 = p(theta_pmax) - p_ub, h4 = dp/dtheta(theta_dpmax) - dp_ub,
with W the closed-cycle work predicted from the PC weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtr

from . import _backend
from .geometry import EngineGeometry, Quadrature
from .pcd import PcBasis


@dataclass(frozen=True)
class ConstraintSpec:
    imep_req: float = 4.0e5
    cov_ub: float = 0.10
    p_ub: float = 200.0e5
    dp_ub: float = 25.0e5
    beta_max: float = 0.05

    def __post_init__(self):
        if min(self.imep_req, self.cov_ub, self.p_ub, self.dp_ub) <= 0:
            raise ValueError("constraint bounds must be positive")
        if not 0.0 < self.beta_max < 1.0:
            raise ValueError("beta_max must lie in (0, 1)")

    def work_band(self, displacement: float) -> tuple[float, float]:
        w = self.imep_req * displacement
        return w * (1.0 - 0.5 * self.cov_ub), w * (1.0 + 0.5 * self.cov_ub)


@dataclass(frozen=True)
class ConstraintStats:
    """Means and variances of h1..h4 on the last axis; leading axes batch."""

    mean: np.ndarray
    var: np.ndarray
    theta_pmax: np.ndarray | None = None
    theta_dpmax: np.ndarray | None = None


class ConstraintModel:
    """Precomputed basis quantities shared by every constraint evaluation."""

    def __init__(self, basis: PcBasis, spec: ConstraintSpec, geom: EngineGeometry | None = None,
                 p_im: float = 1.0e5):
        self.basis = basis
        self.spec = spec
        self.geom = geom or basis.geom
        self.quad = Quadrature(basis.grid, self.geom)
        self.p_im = p_im

    @cached_property
    def g(self) -> np.ndarray:
        return self.basis.components @ self.quad.weights

    @cached_property
    def p_mot(self) -> np.ndarray:
        return self.basis.motored(self.p_im)

    @cached_property
    def dp_mot(self) -> np.ndarray:
        return np.gradient(self.p_mot, self.basis.grid.delta_ca)

    @cached_property
    def dF(self) -> np.ndarray:
        return self.basis.derivative()

    @cached_property
    def motored_work(self) -> float:
        return float(self.quad.work(self.p_mot))

    def stats(self, mean, var) -> ConstraintStats:
        mean = np.atleast_2d(np.asarray(mean, dtype=float))
        var = np.atleast_2d(np.asarray(var, dtype=float))
        lo, hi = self.spec.work_band(self.geom.displacement)
        work = mean @ self.g + self.motored_work
        v_work = var @ (self.g * self.g)
        F = self.basis.components
        ip, pmax = _backend.peak_search(mean, F, self.p_mot)
        idp, dpmax = _backend.peak_search(mean, self.dF, self.dp_mot)
        v3 = np.einsum("pi,ip->p", var, F[:, ip] ** 2)
        v4 = np.einsum("pi,ip->p", var, self.dF[:, idp] ** 2)
        mu = np.stack([lo - work, work - hi, pmax - self.spec.p_ub, dpmax - self.spec.dp_ub], axis=-1)
        sig2 = np.stack([v_work, v_work, v3, v4], axis=-1)
        theta = self.basis.grid.theta
        return ConstraintStats(mu, sig2, theta[ip], theta[idp])


def constraint_stats(belief, basis: PcBasis, spec: ConstraintSpec, geom: EngineGeometry | None = None,
                     p_im: float = 1.0e5) -> ConstraintStats:
    """Single-belief convenience wrapper returning 1-D arrays of length 4."""
    s = ConstraintModel(basis, spec, geom, p_im).stats(belief.mean, belief.var)
    return ConstraintStats(s.mean[0], s.var[0], float(s.theta_pmax[0]), float(s.theta_dpmax[0]))


def individual_probabilities(mean, var) -> np.ndarray:
    """Pr(h_i > 0) under N(mean, var); a point mass when var == 0."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ndtr(mean / sd)
    return np.where(sd > 0, p, (mean > 0).astype(float))


def compose(beta_tilde) -> np.ndarray:
    """beta_i = beta_{i-1} (1 - bt_i) + bt_i from beta_0 = 0, over the last axis."""
    bt = np.asarray(beta_tilde, dtype=float)
    beta = np.zeros(bt.shape[:-1])
    for i in range(bt.shape[-1]):
        beta = beta * (1.0 - bt[..., i]) + bt[..., i]
    return beta


def violation_probability(stats: ConstraintStats) -> tuple[np.ndarray, np.ndarray]:
    """Total violation probability and the per-constraint probabilities."""
    bt = individual_probabilities(stats.mean, stats.var)
    return compose(bt), bt


def is_feasible(beta, spec: ConstraintSpec):
    if isinstance(beta, ConstraintStats):
        beta = violation_probability(beta)[0]
    return np.asarray(beta) <= spec.beta_max
