"""Improvement-based acquisition over the cost distribution of a Gaussian belief.

The cost (w - w_itc)^T Z1 (w - w_itc) follows a generalised chi-squared
law. Because Z1 = g g^T has rank one, the cost is the square of the
scalar Gaussian g^T (w - w_itc), so Monte-Carlo draws are exact and cost
one multiply-add each. Lower cost is better throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from . import _backend
from .itc import CostOperator


class AcquisitionKind(str, enum.Enum):
    EI = "EI"
    NEI = "NEI"
    PI = "PI"
    NPI = "NPI"

    @property
    def noisy(self) -> bool:
        return self in (AcquisitionKind.NEI, AcquisitionKind.NPI)

    @property
    def probability(self) -> bool:
        return self in (AcquisitionKind.PI, AcquisitionKind.NPI)


@dataclass(frozen=True)
class CostDistribution:
    """Gaussian weights mapped through the energy-loss quadratic form.

    ``itc_slope`` and ``q_var`` optionally carry uncertainty in the fuel
    energy that sets the Otto reference: w_itc(Q) = w_itc + slope (Q - Q_mean).
    """

    mean: np.ndarray
    var: np.ndarray
    w_itc: np.ndarray
    op: CostOperator
    itc_slope: np.ndarray | None = None
    q_var: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.var) < 0) or self.q_var < 0:
            raise ValueError("variances must be non-negative")

    def scalar(self) -> tuple[float, float]:
        """Mean and standard deviation of g^T (w - w_itc)."""
        g = self.op.imep_vector
        m = float(g @ (np.asarray(self.mean) - np.asarray(self.w_itc)))
        v = float((g * g) @ np.asarray(self.var))
        if self.itc_slope is not None:
            v += float(g @ self.itc_slope) ** 2 * self.q_var
        return m, float(np.sqrt(v))

    def expected_cost(self) -> float:
        m, s = self.scalar()
        return m * m + s * s


def _standard_draws(d: CostDistribution, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, len(d.mean)))
    zq = rng.standard_normal(n) if d.itc_slope is not None else np.zeros(n)
    return Z, zq


def sample_cost(d: CostDistribution, n: int, seed=None, method: str = "scalar") -> np.ndarray:
    """Monte-Carlo cost samples [J^2].

    ``method="full"`` forms each weight vector and evaluates the quadratic
    form; ``"scalar"`` uses the rank-1 reduction. Both consume the same
    standard-normal draws, so they agree sample by sample.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    Z, zq = _standard_draws(d, n, seed)
    sd = np.sqrt(np.asarray(d.var, dtype=float))
    g = d.op.imep_vector
    q_sd = np.sqrt(d.q_var)
    if method == "full":
        w = np.asarray(d.mean) + Z * sd
        diff = w - np.asarray(d.w_itc)
        if d.itc_slope is not None:
            diff = diff - np.outer(zq * q_sd, d.itc_slope)
        return np.einsum("ni,ij,nj->n", diff, d.op.Z1, diff)
    if method != "scalar":
        raise ValueError(f"unknown sampling method {method!r}")
    s = g @ (np.asarray(d.mean) - np.asarray(d.w_itc)) + Z @ (g * sd)
    if d.itc_slope is not None:
        s = s - zq * (q_sd * float(g @ d.itc_slope))
    return s * s


@dataclass(frozen=True)
class CommonRandomNumbers:
    """Shared standard-normal streams for candidates and the incumbent."""

    candidate: np.ndarray
    incumbent: np.ndarray

    @classmethod
    def draw(cls, n_mc: int, seed) -> "CommonRandomNumbers":
        """Stratified normals: one uniform per 1/n_mc stratum, mapped through the probit.

        The two streams are stratified independently and paired at random.
        """
        rng = np.random.default_rng(seed)

        def stratified():
            u = (rng.permutation(n_mc) + rng.random(n_mc)) / n_mc
            return ndtri(u)

        return cls(stratified(), stratified())


def thresholds(kind: AcquisitionKind, crn: CommonRandomNumbers, best_cost: float,
               incumbent: tuple[float, float] | None) -> np.ndarray:
    """Per-sample reference costs: J* for EI/PI, incumbent draws tau* for NEI/NPI."""
    if kind.noisy:
        if incumbent is None:
            raise ValueError(f"{kind.value} needs the incumbent distribution")
        m, s = incumbent
        t = m + s * crn.incumbent
        return t * t
    return np.full(crn.candidate.shape[0], float(best_cost))


def alpha_batch(kind: AcquisitionKind, means, stds, thresh: np.ndarray, crn: CommonRandomNumbers) -> np.ndarray:
    """Acquisition for many candidates given their scalar Gaussian parameters."""
    return _backend.improvement_mc(means, stds, crn.candidate, thresh, kind.probability)


def alpha(kind, candidate: CostDistribution, incumbent: CostDistribution | None, best_cost: float,
          n_mc: int = 4096, seed=None) -> float:
    """EI/PI against J*, or their noisy variants against incumbent draws."""
    kind = AcquisitionKind(kind)
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    crn = CommonRandomNumbers.draw(n_mc, seed)
    inc = incumbent.scalar() if incumbent is not None else None
    th = thresholds(kind, crn, best_cost, inc)
    m, s = candidate.scalar()
    return float(alpha_batch(kind, [m], [s], th, crn)[0])


class EmptyHistoryError(LookupError):
    pass


def best_observed(costs: Sequence[float], feasible: Sequence[bool], locations: Sequence) -> tuple[float, object, int]:
    """Lowest feasible observed cost, its location and record index.

    Ties keep the earliest record.
    """
    best_i = None
    for i, (c, ok) in enumerate(zip(costs, feasible)):
        if ok and (best_i is None or c < costs[best_i]):
            best_i = i
    if best_i is None:
        raise EmptyHistoryError("no feasible observation yet; evaluate the initial point first")
    return float(costs[best_i]), locations[best_i], best_i
