"""Independent per-output Gaussian processes with a Matern-3/2 kernel.

Each output (one per principal-component weight) gets its own
hyperparameters. Inputs and outputs are standardised; every training
point carries its own fixed noise variance, added to the Gram diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import _backend

JITTER_LEVELS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class GPRConditioningError(np.linalg.LinAlgError):
    """Gram matrix could not be factorised within the jitter policy."""


@dataclass(frozen=True)
class Scaling:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, X, Y, floor: float = 1e-12) -> "Scaling":
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        xs, ys = X.std(axis=0), Y.std(axis=0)
        return cls(X.mean(axis=0), np.where(xs > floor, xs, 1.0), Y.mean(axis=0), np.where(ys > floor, ys, 1.0))

    @classmethod
    def identity(cls, n_in: int, n_out: int) -> "Scaling":
        return cls(np.zeros(n_in), np.ones(n_in), np.zeros(n_out), np.ones(n_out))

    def x(self, X):
        return (np.atleast_2d(X) - self.x_mean) / self.x_std


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    weight_means: np.ndarray
    weight_vars: np.ndarray
    scaling: Scaling = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        Y = np.asarray(self.weight_means, dtype=float).reshape(X.shape[0], -1)
        V = np.asarray(self.weight_vars, dtype=float).reshape(Y.shape)
        if np.any(V < 0):
            raise ValueError("weight variances must be non-negative")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "weight_means", Y)
        object.__setattr__(self, "weight_vars", V)
        if self.scaling is None:
            object.__setattr__(self, "scaling", Scaling.fit(X, Y))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight_means.shape[1]

    def scaled(self):
        sc = self.scaling
        return sc.x(self.inputs), (self.weight_means - sc.y_mean) / sc.y_std, self.weight_vars / sc.y_std**2


@dataclass(frozen=True)
class Hyperparams:
    phi_f: float
    lengthscales: tuple[float, float]

    def __post_init__(self):
        if self.phi_f <= 0 or any(l <= 0 for l in self.lengthscales):
            raise ValueError("hyperparameters must be strictly positive")

    @property
    def log(self) -> np.ndarray:
        return np.log([self.phi_f, *self.lengthscales])

    @classmethod
    def from_log(cls, t) -> "Hyperparams":
        e = np.exp(np.asarray(t, dtype=float))
        return cls(float(e[0]), (float(e[1]), float(e[2])))


@dataclass(frozen=True)
class HyperBounds:
    """Box on log-hyperparameters (natural units given here)."""

    phi_f: tuple[float, float] = (1e-3, 1e2)
    lengthscale: tuple[float, float] = (1e-2, 1e2)

    def log_box(self) -> np.ndarray:
        return np.log([self.phi_f, self.lengthscale, self.lengthscale])


@dataclass(frozen=True)
class WeightBelief:
    mean: np.ndarray
    var: np.ndarray


def kernel(x, y, hp: Hyperparams) -> float:
    """k(x, y) = phi_f^2 (1 + sqrt3 rho) exp(-sqrt3 rho)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != (len(hp.lengthscales),):
        raise ValueError("length-scale dimension must match the input dimension")
    d = (x - y) / np.asarray(hp.lengthscales)
    r = np.sqrt(3.0) * np.sqrt(d @ d)
    return float(hp.phi_f**2 * (1.0 + r) * np.exp(-r))


def gram(X1, X2, hp: Hyperparams) -> np.ndarray:
    return _backend.matern32(X1, X2, hp.lengthscales, hp.phi_f**2)


@dataclass(frozen=True)
class _Factor:
    L: np.ndarray
    alpha: np.ndarray
    jitter: float


def _factorize(K: np.ndarray, y: np.ndarray, sf2: float) -> _Factor:
    """Cholesky with escalating jitter.

    Jitter is only accepted while its effect on the fitted values stays
    numerically negligible; contradictory noiseless data fails this test
    at every level.
    """
    n = K.shape[0]
    scale = max(1.0, float(np.max(np.abs(y)))) if y.size else 1.0
    for level in JITTER_LEVELS:
        j = level * sf2
        try:
            L = np.linalg.cholesky(K + j * np.eye(n) if j else K)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((L, True), y)
        if j and j * np.max(np.abs(alpha)) > 1e-6 * scale:
            continue
        return _Factor(L, alpha, j)
    raise GPRConditioningError("Gram matrix ill-conditioned beyond the jitter policy")


def log_marginal_likelihood(hp: Hyperparams, X, y, noise) -> float:
    K = gram(X, X, hp)
    K[np.diag_indices_from(K)] += noise
    f = _factorize(K, y, hp.phi_f**2)
    return float(-0.5 * y @ f.alpha - np.log(np.diag(f.L)).sum() - 0.5 * len(y) * np.log(2 * np.pi))


def _fit_one(X, y, noise, budget, rng, warm, bounds: HyperBounds) -> Hyperparams:
    box = bounds.log_box()
    n_starts = 5 if budget >= 10 else 1
    starts = [np.clip(warm.log if warm is not None else np.zeros(3), box[:, 0], box[:, 1])]
    starts += [rng.uniform(box[:, 0], box[:, 1]) for _ in range(n_starts - 1)]

    def nll(t):
        try:
            return -log_marginal_likelihood(Hyperparams.from_log(t), X, y, noise)
        except GPRConditioningError:
            return np.inf

    best_t, best_v = None, np.inf
    spent = 0
    explore = max((budget // 2) // n_starts, 1)
    for t0 in starts:
        res = minimize(nll, t0, method="Nelder-Mead", bounds=list(map(tuple, box)),
                       options={"maxfev": explore, "xatol": 1e-4, "fatol": 1e-8})
        spent += res.nfev
        if res.fun < best_v:
            best_t, best_v = res.x, res.fun
    if np.isfinite(best_v) and budget - spent > 0:
        # polish the most promising start with what is left of the budget
        res = minimize(nll, best_t, method="Nelder-Mead", bounds=list(map(tuple, box)),
                       options={"maxfev": budget - spent, "xatol": 1e-5, "fatol": 1e-9})
        if res.fun < best_v:
            best_t, best_v = res.x, res.fun
    if not np.isfinite(best_v):
        raise GPRConditioningError("no hyperparameters give a factorisable Gram matrix")
    return Hyperparams.from_log(best_t)


def fit(ts: TrainingSet, budget: int = 200, seed: int = 0, warm_start=None,
        bounds: HyperBounds = HyperBounds()) -> list[Hyperparams]:
    """Maximum-likelihood hyperparameters for every output.

    Derivative-free (bounded Nelder-Mead) from the warm start plus four
    random restarts in log space, sharing ``budget`` likelihood
    evaluations per output.
    """
    if len(ts) < 3:
        raise ValueError("fit needs at least 3 training points")
    X, Y, N = ts.scaled()
    rng = np.random.default_rng(seed)
    warm = warm_start if warm_start is not None else [None] * ts.n_out
    return [_fit_one(X, Y[:, i], N[:, i], budget, rng, warm[i], bounds) for i in range(ts.n_out)]


@dataclass
class GPModel:
    """Fitted per-output posteriors; immutable after construction."""

    ts: TrainingSet
    hps: list[Hyperparams]
    _X: np.ndarray = field(init=False, repr=False)
    _factors: list[_Factor] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.hps) != self.ts.n_out:
            raise ValueError("one hyperparameter set per output required")
        X, Y, N = self.ts.scaled()
        self._X = X
        self._factors = []
        for i, hp in enumerate(self.hps):
            K = gram(X, X, hp)
            K[np.diag_indices_from(K)] += N[:, i]
            self._factors.append(_factorize(K, Y[:, i], hp.phi_f**2))

    def predict_scaled(self, S):
        Xq = self.ts.scaling.x(S)
        mean = np.empty((Xq.shape[0], len(self.hps)))
        var = np.empty_like(mean)
        for i, (hp, f) in enumerate(zip(self.hps, self._factors)):
            Ks = gram(Xq, self._X, hp)
            mean[:, i] = Ks @ f.alpha
            v = solve_triangular(f.L, Ks.T, lower=True, check_finite=False)
            var[:, i] = hp.phi_f**2 - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def predict(self, S) -> WeightBelief:
        """Descaled posterior mean and variance; rows follow the query rows."""
        m, v = self.predict_scaled(S)
        sc = self.ts.scaling
        return WeightBelief(m * sc.y_std + sc.y_mean, v * sc.y_std**2)

    def dump(self) -> dict:
        sc = self.ts.scaling
        return {
            "inputs": self.ts.inputs.tolist(),
            "outputs": self.ts.weight_means.tolist(),
            "noise": self.ts.weight_vars.tolist(),
            "hyperparameters": [{"phi_f": h.phi_f, "lengthscales": list(h.lengthscales)} for h in self.hps],
            "scaling": {k: getattr(sc, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")},
        }


def predict(s, ts: TrainingSet, hp) -> WeightBelief:
    """Posterior at one or more (BR, SOI) settings; ``hp`` per output or shared."""
    hps = list(hp) if isinstance(hp, (list, tuple)) else [hp] * ts.n_out
    b = GPModel(ts, hps).predict(np.atleast_2d(s))
    if np.ndim(s) == 1:
        return WeightBelief(b.mean[0], b.var[0])
    return b


def with_point(ts: TrainingSet, x, mean, var) -> TrainingSet:
    """Training set extended by one summarised observation, same scaling."""
    return replace(ts, inputs=np.vstack([ts.inputs, x]), weight_means=np.vstack([ts.weight_means, mean]),
                   weight_vars=np.vstack([ts.weight_vars, var]))
