"""Numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
CALIB_PURE_PYTHON=1. Signatures match ``calib._ckernels`` exactly.
"""

import numpy as np

SQRT3 = np.sqrt(3.0)
_CHUNK = 1 << 18


def matern32(X1, X2, inv_ls, sf2):
    d = (X1[:, None, :] - X2[None, :, :]) * inv_ls
    r = SQRT3 * np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    return sf2 * (1.0 + r) * np.exp(-r)


def improvement_mc(mean, std, z, thresh, probability):
    """Mean over samples of max(thresh - tau, 0), or of [tau < thresh].

    tau = (mean + std * z)**2 per candidate; ``z`` and ``thresh`` are
    paired sample vectors shared by every candidate.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.empty(mean.shape[0])
    rows = max(1, _CHUNK // max(z.shape[0], 1))
    for a in range(0, mean.shape[0], rows):
        s = mean[a:a + rows, None] + std[a:a + rows, None] * z[None, :]
        tau = s * s
        if probability:
            out[a:a + rows] = (tau < thresh).mean(axis=1)
        else:
            out[a:a + rows] = np.maximum(thresh - tau, 0.0).mean(axis=1)
    return out


def peak_search(W, FT, base):
    """Row-wise argmax and max of base + W @ FT.T; FT is (n_ca, n_pc)."""
    trace = W @ FT.T + base
    idx = trace.argmax(axis=1)
    return idx.astype(np.intp), trace[np.arange(trace.shape[0]), idx]
