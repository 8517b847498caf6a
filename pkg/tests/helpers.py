"""Finite-difference oracles shared by the test modules."""

import numpy as np

H = 1e-6


def central_diff(f, X, h=H):
    """Numerical gradient of scalar ``f`` at array ``X`` (perturbed in place and restored)."""
    G = np.zeros_like(X, dtype=np.float64)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = X[idx]
        X[idx] = old + h
        fp = f()
        X[idx] = old - h
        fm = f()
        X[idx] = old
        G[idx] = (fp - fm) / (2.0 * h)
    return G


def rel_err(analytic, numeric):
    """Max-norm relative error, ``max|a - n| / max(max|a|, max|n|)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def pc_margin(S, T):
    """Smallest gap between best and second-best cosine over all max operations."""
    Sn = S / np.linalg.norm(S, axis=1, keepdims=True)
    Tn = T / np.linalg.norm(T, axis=1, keepdims=True)
    C = Sn @ Tn.T
    gaps = []
    for M in (C, C.T):
        if M.shape[1] < 2:
            continue
        srt = np.sort(M, axis=1)
        gaps.append((srt[:, -1] - srt[:, -2]).min())
    return min(gaps) if gaps else np.inf
