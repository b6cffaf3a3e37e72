"""Constrained particle swarm that maximises acquisition subject to beta <= beta_max.

Best positions are compared with feasibility rules: a feasible point beats
an infeasible one, feasible points compare by acquisition value and
infeasible points by violation probability. Ties keep the incumbent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SwarmConfig:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_pso: int = 100
    iterations: int = 100
    c0: float = 0.1
    c1: float = 0.01
    c2: float = 0.1
    beta_max: float = 0.05
    init_velocity: float = 0.05  # std as a fraction of the box width
    seed: int | None = None

    def __post_init__(self):
        if self.n_pso < 1 or self.iterations < 1:
            raise ValueError("n_pso and iterations must be at least 1")
        if np.any(np.asarray(self.upper) <= np.asarray(self.lower)):
            raise ValueError("empty search box")
        # zero is allowed so a frozen swarm can be expressed
        if not all(0.0 <= c < 1.0 for c in (self.c0, self.c1, self.c2)):
            raise ValueError("c0, c1, c2 must lie in [0, 1)")


@dataclass(frozen=True)
class Evaluated:
    alpha: float
    beta: float


def select_best(candidate: Evaluated, incumbent: Evaluated, beta_max: float = 0.05) -> Evaluated:
    return candidate if _prefer(candidate.alpha, candidate.beta, incumbent.alpha, incumbent.beta, beta_max) else incumbent


def _prefer(a_new, b_new, a_old, b_old, beta_max):
    """Elementwise: should the new point replace the old one?"""
    f_new = np.asarray(b_new) <= beta_max
    f_old = np.asarray(b_old) <= beta_max
    both = f_new & f_old
    return np.where(both, a_new > a_old, np.where(f_new != f_old, f_new, b_new < b_old))


@dataclass
class Swarm:
    x: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pbest_x: np.ndarray
    pbest_alpha: np.ndarray
    pbest_beta: np.ndarray
    gbest_x: np.ndarray = field(default=None)
    gbest_alpha: float = -np.inf
    gbest_beta: float = np.inf

    def copy(self) -> "Swarm":
        return Swarm(*(np.array(getattr(self, f)) if isinstance(getattr(self, f), np.ndarray) else getattr(self, f)
                       for f in self.__dataclass_fields__))


def lattice(n: int, lower, upper) -> np.ndarray:
    """n points from a near-square lattice spanning the box, row-major."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    side = math.ceil(math.sqrt(n))
    axes = [np.linspace(lo, hi, side) if side > 1 else np.array([(lo + hi) / 2]) for lo, hi in zip(lower, upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lower))
    return pts[:n]


def _update_gbest(s: Swarm, beta_max: float) -> None:
    # index-ordered reduction; the first best particle wins ties
    feas = s.pbest_beta <= beta_max
    if feas.any():
        a = np.where(feas, s.pbest_alpha, -np.inf)
        i = int(np.argmax(a))
    else:
        i = int(np.argmin(s.pbest_beta))
    if s.gbest_x is None or _prefer(s.pbest_alpha[i], s.pbest_beta[i], s.gbest_alpha, s.gbest_beta, beta_max):
        s.gbest_x = s.pbest_x[i].copy()
        s.gbest_alpha = float(s.pbest_alpha[i])
        s.gbest_beta = float(s.pbest_beta[i])


def init_swarm(config: SwarmConfig, evaluator: Evaluator, rng: np.random.Generator) -> Swarm:
    lower, upper = np.asarray(config.lower, float), np.asarray(config.upper, float)
    x = lattice(config.n_pso, lower, upper)
    v = rng.normal(0.0, config.init_velocity * (upper - lower), size=x.shape)
    a, b = evaluator(x)
    s = Swarm(x, v, a, b, x.copy(), np.array(a, dtype=float), np.array(b, dtype=float))
    _update_gbest(s, config.beta_max)
    return s


def step(swarm: Swarm, evaluator: Evaluator, rng: np.random.Generator, config: SwarmConfig) -> Swarm:
    """One velocity/position update, re-evaluation and best-position update."""
    s = swarm.copy()
    lower, upper = np.asarray(config.lower, float), np.asarray(config.upper, float)
    r = rng.random((s.x.shape[0], 2))
    s.v = (config.c0 * s.v + config.c1 * r[:, :1] * (s.pbest_x - s.x) + config.c2 * r[:, 1:] * (s.gbest_x - s.x))
    x = s.x + s.v
    clipped = (x < lower) | (x > upper)
    s.x = np.clip(x, lower, upper)
    s.v[clipped] = 0.0
    s.alpha, s.beta = evaluator(s.x)
    take = _prefer(s.alpha, s.beta, s.pbest_alpha, s.pbest_beta, config.beta_max)
    s.pbest_x[take] = s.x[take]
    s.pbest_alpha[take] = s.alpha[take]
    s.pbest_beta[take] = s.beta[take]
    _update_gbest(s, config.beta_max)
    return s


@dataclass(frozen=True)
class PsoResult:
    position: np.ndarray
    alpha: float
    beta: float
    degenerate: bool
    gbest_trace: np.ndarray


def run(config: SwarmConfig, evaluator: Evaluator, rng: np.random.Generator | None = None) -> PsoResult:
    """Returns the feasible global best, or the least-violating point flagged degenerate."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    s = init_swarm(config, evaluator, rng)
    trace = [s.gbest_alpha]
    for _ in range(config.iterations):
        s = step(s, evaluator, rng, config)
        trace.append(s.gbest_alpha)
    return PsoResult(s.gbest_x.copy(), s.gbest_alpha, s.gbest_beta, bool(s.gbest_beta > config.beta_max),
                     np.array(trace))
