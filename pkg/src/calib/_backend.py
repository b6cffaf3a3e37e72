"""Selects compiled kernels when built, numpy fallbacks otherwise."""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("CALIB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def matern32(X1, X2, lengthscales, sf2):
    return _impl.matern32(_c(X1), _c(X2), _c(1.0 / np.asarray(lengthscales, dtype=float)), float(sf2))


def improvement_mc(mean, std, z, thresh, probability=False):
    return _impl.improvement_mc(_c(mean), _c(std), _c(z), _c(thresh), bool(probability))


def peak_search(W, F, base):
    """Per-row (argmax, max) of base + W @ F for an (n_pc, n_ca) basis F.

    Always the numpy version: the GEMM it calls beats the compiled loop
    (see benchmarks/bench_kernels.py).
    """
    return _pykernels.peak_search(_c(np.atleast_2d(W)), _c(np.asarray(F).T), _c(base))


def implementations():
    """Both kernel sets available in this build, keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
