"""Principal component decomposition of in-cylinder pressure.

A pressure trace is written as the adiabatic motored trace plus a weighted
sum of principal components learned from training residuals.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CrankGrid, EngineGeometry, cylinder_volume

DEFAULT_KAPPA = 1.35


class DegenerateBasisError(ValueError):
    """Raised when the training residuals carry no usable variance."""


@dataclass(frozen=True)
class PressureTrace:
    grid: CrankGrid
    pressure: np.ndarray
    p_im: float

    def __post_init__(self):
        p = np.asarray(self.pressure, dtype=float)
        if p.shape != (self.grid.n_ca,):
            raise ValueError(f"expected {self.grid.n_ca} samples, got {p.shape}")
        object.__setattr__(self, "pressure", p)

    def validate(self):
        if not np.all(np.isfinite(self.pressure)) or np.any(self.pressure <= 0):
            raise ValueError("pressure must be finite and positive")
        return self


def motored_pressure(grid: CrankGrid, p_im: float, kappa: float, geom: EngineGeometry) -> np.ndarray:
    """Adiabatic compression/expansion from intake conditions at BDC."""
    if p_im <= 0:
        raise ValueError("p_im must be positive")
    if not 1.0 < kappa < 2.0:
        raise ValueError("kappa must lie in (1, 2)")
    v = cylinder_volume(grid.theta, geom)
    return p_im * (cylinder_volume(-180.0, geom) / v) ** kappa


@dataclass(frozen=True)
class PcBasis:
    """Orthonormal principal components stored row-wise (n_pc x n_ca)."""

    components: np.ndarray
    grid: CrankGrid
    geom: EngineGeometry
    kappa: float = DEFAULT_KAPPA
    eigenvalues: np.ndarray = field(default=None)

    def __post_init__(self):
        f = np.asarray(self.components, dtype=float)
        if f.ndim != 2 or f.shape[1] != self.grid.n_ca:
            raise ValueError("components must be n_pc x n_ca")
        f.setflags(write=False)
        object.__setattr__(self, "components", f)
        if self.eigenvalues is not None:
            object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=float))

    @property
    def n_pc(self) -> int:
        return self.components.shape[0]

    def motored(self, p_im: float) -> np.ndarray:
        return motored_pressure(self.grid, p_im, self.kappa, self.geom)

    def derivative(self) -> np.ndarray:
        """d f / d theta per component [1/CAD], central differences."""
        return np.gradient(self.components, self.grid.delta_ca, axis=1)

    # --- text export ---------------------------------------------------
    def to_csv(self, path) -> None:
        meta = {
            "n_pc": self.n_pc,
            "delta_ca": self.grid.delta_ca,
            "kappa": self.kappa,
            "bore": self.geom.bore,
            "stroke": self.geom.stroke,
            "conrod_length": self.geom.conrod_length,
            "compression_ratio": self.geom.compression_ratio,
        }
        if self.eigenvalues is not None:
            meta["eigenvalues"] = [float(x) for x in self.eigenvalues]
        buf = io.StringIO()
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        buf.write("theta," + ",".join(f"pc{i + 1}" for i in range(self.n_pc)) + "\n")
        for th, row in zip(self.grid.theta, self.components.T):
            buf.write(repr(float(th)) + "," + ",".join(repr(float(x)) for x in row) + "\n")
        Path(path).write_text(buf.getvalue(), newline="\n")

    @classmethod
    def from_csv(cls, path) -> "PcBasis":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ValueError(f"{path}: missing metadata header")
        meta = json.loads(lines[0][2:])
        data = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
        grid = CrankGrid(meta["delta_ca"])
        geom = EngineGeometry(meta["bore"], meta["stroke"], meta["conrod_length"], meta["compression_ratio"])
        if data.shape != (grid.n_ca, meta["n_pc"] + 1):
            raise ValueError(f"{path}: matrix shape {data.shape} does not match header")
        return cls(data[:, 1:].T.copy(), grid, geom, meta["kappa"], meta.get("eigenvalues"))


def residual_matrix(traces: Sequence[PressureTrace], kappa: float, geom: EngineGeometry) -> np.ndarray:
    """Columns are pressure minus motored pressure, one per trace."""
    grid = traces[0].grid
    cols = []
    for t in traces:
        if t.grid != grid:
            raise ValueError("all traces must share one crank grid")
        cols.append(t.pressure - motored_pressure(grid, t.p_im, kappa, geom))
    return np.column_stack(cols)


def train_basis(traces: Sequence[PressureTrace], n_pc: int = 8, kappa: float = DEFAULT_KAPPA,
                geom: EngineGeometry = EngineGeometry(), rel_tol: float = 1e-12) -> PcBasis:
    """Leading unit eigenvectors of P P^T, largest eigenvalue first.

    The eigenvectors are obtained from the thin SVD of the residual matrix
    P (left singular vectors), which avoids forming the n_ca x n_ca Gram
    matrix. Signs are fixed so the largest-magnitude entry of each row is
    positive.
    """
    if len(traces) < n_pc:
        raise ValueError(f"need at least n_pc={n_pc} traces, got {len(traces)}")
    P = residual_matrix(traces, kappa, geom)
    try:
        U, s, _ = np.linalg.svd(P, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBasisError("eigen-solve did not converge") from exc
    eig = s**2
    if eig.size == 0 or eig[0] <= 0.0:
        raise DegenerateBasisError("residual matrix is zero; traces equal the motored pressure")
    if eig[n_pc - 1] <= rel_tol * eig[0]:
        raise DegenerateBasisError(f"residuals have rank < n_pc={n_pc}")
    F = U[:, :n_pc].T.copy()
    flip = np.sign(F[np.arange(n_pc), np.abs(F).argmax(axis=1)])
    F *= flip[:, None]
    return PcBasis(F, traces[0].grid, geom, kappa, eig[:n_pc])


def project_weights(trace: PressureTrace, basis: PcBasis) -> np.ndarray:
    if trace.grid != basis.grid:
        raise ValueError("trace grid differs from basis grid")
    return basis.components @ (trace.pressure - basis.motored(trace.p_im))


def project_many(pressures: np.ndarray, p_im: float, basis: PcBasis) -> np.ndarray:
    """Weights for stacked pressure rows sharing one intake pressure."""
    return (np.atleast_2d(pressures) - basis.motored(p_im)) @ basis.components.T


def reconstruct(w, basis: PcBasis, p_im: float) -> PressureTrace:
    w = np.asarray(w, dtype=float)
    return PressureTrace(basis.grid, basis.motored(p_im) + w @ basis.components, p_im)
