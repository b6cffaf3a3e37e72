"""Slider-crank kinematics and crank-angle quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEG = np.pi / 180.0


@dataclass(frozen=True)
class CrankGrid:
    """Uniform crank-angle grid over one closed cycle, [-180, 180] CADaTDC."""

    delta_ca: float = 0.2

    def __post_init__(self):
        if not self.delta_ca > 0 or abs(360.0 / self.delta_ca - round(360.0 / self.delta_ca)) > 1e-9:
            raise ValueError(f"delta_ca must divide 360, got {self.delta_ca}")

    @property
    def n_ca(self) -> int:
        return int(round(360.0 / self.delta_ca)) + 1

    @cached_property
    def theta(self) -> np.ndarray:
        # linspace keeps both end points exact
        t = np.linspace(-180.0, 180.0, self.n_ca)
        t.setflags(write=False)
        return t

    def index_of(self, theta: float) -> int:
        return int(round((theta + 180.0) / self.delta_ca))


@dataclass(frozen=True)
class EngineGeometry:
    """Cylinder geometry. Lengths in metres; defaults follow the test engine."""

    bore: float = 0.130
    stroke: float = 0.162
    conrod_length: float = 0.255
    compression_ratio: float = 17.2

    def __post_init__(self):
        if self.compression_ratio <= 1.0:
            raise ValueError("compression ratio must exceed 1")
        if min(self.bore, self.stroke) <= 0:
            raise ValueError("bore and stroke must be positive")
        if self.conrod_length <= self.stroke / 2:
            raise ValueError("conrod must be longer than the crank radius")

    @property
    def displacement(self) -> float:
        return np.pi / 4.0 * self.bore**2 * self.stroke

    @property
    def clearance_volume(self) -> float:
        return self.displacement / (self.compression_ratio - 1.0)

    @property
    def rod_ratio(self) -> float:
        return self.conrod_length / (self.stroke / 2.0)


def cylinder_volume(theta, geom: EngineGeometry):
    """Instantaneous cylinder volume [m^3] at crank angle(s) ``theta`` [CAD]."""
    th = np.asarray(theta, dtype=float) * DEG
    R = geom.rod_ratio
    s = np.sin(th)
    return geom.clearance_volume + 0.5 * geom.displacement * (
        R + 1.0 - np.cos(th) - np.sqrt(R * R - s * s)
    )


def volume_derivative(grid: CrankGrid, geom: EngineGeometry) -> np.ndarray:
    """Analytic dV/dtheta [m^3/CAD] sampled on ``grid``."""
    th = grid.theta * DEG
    R = geom.rod_ratio
    s, c = np.sin(th), np.cos(th)
    dv = 0.5 * geom.displacement * (s + s * c / np.sqrt(R * R - s * s)) * DEG
    # sin(pi) is 1.2e-16, not zero
    dv[np.abs(np.abs(grid.theta) - 180.0) < 1e-12] = 0.0
    dv[np.abs(grid.theta) < 1e-12] = 0.0
    return dv


def trapezoid(y: np.ndarray, dx: float, axis: int = -1) -> np.ndarray:
    """Uniform-step trapezoidal rule along ``axis``."""
    y = np.asarray(y, dtype=float)
    return dx * (y.sum(axis=axis) - 0.5 * (np.take(y, 0, axis=axis) + np.take(y, -1, axis=axis)))


def cumulative_trapezoid(y: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    out[..., 1:] = np.cumsum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1)
    return out


@dataclass(frozen=True)
class Quadrature:
    """Precomputed volume and dV weights for integrals of the form int p dV."""

    grid: CrankGrid
    geom: EngineGeometry

    @cached_property
    def volume(self) -> np.ndarray:
        return cylinder_volume(self.grid.theta, self.geom)

    @cached_property
    def dvdtheta(self) -> np.ndarray:
        return volume_derivative(self.grid, self.geom)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights so that ``weights @ p`` approximates int p dV."""
        w = self.dvdtheta * self.grid.delta_ca
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def work(self, pressure) -> np.ndarray:
        """Closed-cycle work int p dV [J]; ``pressure`` may be stacked on axis 0."""
        return np.asarray(pressure, dtype=float) @ self.weights
