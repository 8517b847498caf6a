"""Hot inner loops, compiled with numba when available.

Set ``DAMPC_DISABLE_NUMBA=1`` to force the pure-numpy path.  Both paths
return identical integer streams; floating-point kernels agree to rounding.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("DAMPC_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _splitmix64_fill_np(state, n):
    steps = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(state) + steps * GOLDEN_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    new_state = (int(state) + n * int(GOLDEN_GAMMA)) & 0xFFFFFFFFFFFFFFFF
    return z, new_state


def _cosine_matching_np(Sn, Tn):
    C = Sn @ Tn.T
    np.clip(C, -1.0, 1.0, out=C)
    match_s = np.argmax(C, axis=1)
    match_t = np.argmax(C, axis=0)
    best_s = C[np.arange(C.shape[0]), match_s]
    best_t = C[match_t, np.arange(C.shape[1])]
    return best_s, match_s, best_t, match_t


def _sqdist_np(X, Y):
    D = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * (X @ Y.T)
    np.maximum(D, 0.0, out=D)
    return D


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _splitmix64_fill_nb(state, n):
        out = np.empty(n, dtype=np.uint64)
        s = np.uint64(state)
        g = np.uint64(0x9E3779B97F4A7C15)
        m1 = np.uint64(0xBF58476D1CE4E5B9)
        m2 = np.uint64(0x94D049BB133111EB)
        for k in range(n):
            s = s + g
            z = s
            z = (z ^ (z >> np.uint64(30))) * m1
            z = (z ^ (z >> np.uint64(27))) * m2
            out[k] = z ^ (z >> np.uint64(31))
        return out, s

    @numba.njit(cache=True)
    def _cosine_matching_nb(Sn, Tn):
        ns, d = Sn.shape
        nt = Tn.shape[0]
        best_s = np.full(ns, -np.inf)
        match_s = np.zeros(ns, dtype=np.int64)
        best_t = np.full(nt, -np.inf)
        match_t = np.zeros(nt, dtype=np.int64)
        for i in range(ns):
            for j in range(nt):
                c = 0.0
                for k in range(d):
                    c += Sn[i, k] * Tn[j, k]
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                # strict comparison keeps the lowest index on ties
                if c > best_s[i]:
                    best_s[i] = c
                    match_s[i] = j
                if c > best_t[j]:
                    best_t[j] = c
                    match_t[j] = i
        return best_s, match_s, best_t, match_t

    @numba.njit(cache=True)
    def _sqdist_nb(X, Y):
        n, d = X.shape
        m = Y.shape[0]
        D = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    acc += diff * diff
                D[i, j] = acc
        return D


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def splitmix64_fill(state, n, use_numba=None):
    """Return ``n`` successive splitmix64 outputs and the advanced state."""
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        out, s = _splitmix64_fill_nb(np.uint64(state), n)
        return out, int(s)
    return _splitmix64_fill_np(state, n)


def cosine_matching(Sn, Tn, use_numba=None):
    """Row/column maxima and argmaxes of the cosine matrix of unit-norm rows."""
    if use_numba is None:
        use_numba = USE_NUMBA
    Sn = np.ascontiguousarray(Sn, dtype=np.float64)
    Tn = np.ascontiguousarray(Tn, dtype=np.float64)
    if use_numba:
        return _cosine_matching_nb(Sn, Tn)
    return _cosine_matching_np(Sn, Tn)


def sqdist(X, Y, use_numba=None):
    """Pairwise squared Euclidean distances between rows of X and rows of Y."""
    if use_numba is None:
        use_numba = USE_NUMBA
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if use_numba:
        return _sqdist_nb(X, Y)
    return _sqdist_np(X, Y)
