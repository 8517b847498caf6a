"""Domain similarity and discrepancy measures with analytic gradients.

Every gradient-capable measure returns a :class:`SimilaritySignal` holding the
value and the gradient of that value with respect to both feature batches.
Population correlation is a similarity (to be maximized); the others are
distances (to be minimized).  Proxy A-distance is a diagnostic only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels
from .numerics import DimensionError, Rng, as_matrix


class DegenerateVectorError(ValueError):
    pass


class Sign(Enum):
    MAXIMIZE_SIMILARITY = "maximize"
    MINIMIZE_DISTANCE = "minimize"


KIND_NAMES = ("pc", "mmd_linear", "mmd_rbf", "coral", "cmd", "kl_gauss", "proxy_a")


@dataclass(frozen=True)
class SimilarityKind:
    """Which measure to use, plus its hyperparameters.

    ``gammas=None`` for ``mmd_rbf`` selects the median heuristic per call.
    """

    name: str
    gammas: Optional[tuple] = None
    K: int = 5
    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        if self.name not in KIND_NAMES:
            raise ValueError(f"unknown similarity kind {self.name!r}; expected one of {', '.join(KIND_NAMES)}")
        if self.gammas is not None:
            object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))

    @property
    def sign(self) -> Sign:
        return Sign.MAXIMIZE_SIMILARITY if self.name == "pc" else Sign.MINIMIZE_DISTANCE

    @property
    def differentiable(self) -> bool:
        return self.name != "proxy_a"

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.name == "mmd_rbf":
            d["gammas"] = None if self.gammas is None else list(self.gammas)
        if self.name == "cmd":
            d.update(K=self.K, lower=self.lower, upper=self.upper)
        return d

    @classmethod
    def from_dict(cls, d) -> "SimilarityKind":
        if isinstance(d, str):
            return cls(d)
        return cls(**d)


PC = SimilarityKind("pc")
MMD_LINEAR = SimilarityKind("mmd_linear")
MMD_RBF = SimilarityKind("mmd_rbf")
CORAL = SimilarityKind("coral")
CMD = SimilarityKind("cmd")
KL_GAUSS = SimilarityKind("kl_gauss")
PROXY_A = SimilarityKind("proxy_a")


@dataclass
class SimilaritySignal:
    value: float
    sign: Sign
    grad_source: Optional[np.ndarray] = None
    grad_target: Optional[np.ndarray] = None
    match_source: Optional[np.ndarray] = field(default=None, repr=False)
    match_target: Optional[np.ndarray] = field(default=None, repr=False)


def _pair(S, T):
    S = as_matrix(S)
    T = as_matrix(T)
    if S.shape[0] < 1 or T.shape[0] < 1:
        raise DimensionError("feature batches must have at least one row")
    if S.shape[1] != T.shape[1]:
        raise DimensionError(f"feature dimension mismatch: source {S.shape}, target {T.shape}")
    return S, T


def _require_rows(S, T, k):
    if S.shape[0] < k or T.shape[0] < k:
        raise DimensionError(f"need at least {k} rows per batch, got {S.shape[0]} and {T.shape[0]}")


# ---------------------------------------------------------------------------
# population correlation
# ---------------------------------------------------------------------------

def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cosine of vectors with lengths {a.size} and {b.size}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0:
        raise DegenerateVectorError("first argument has zero norm")
    if nb == 0.0:
        raise DegenerateVectorError("second argument has zero norm")
    return min(1.0, max(-1.0, float(a @ b) / (na * nb)))


def _row_norms(X, which):
    norms = np.sqrt((X * X).sum(axis=1))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateVectorError(f"{which} row {int(bad[0])} has zero norm")
    return norms


def population_correlation(S, T, grad: bool = False) -> SimilaritySignal:
    """Mean best-match cosine from source to target plus target to source.

    Ties in the best match go to the lowest index.  With ``grad=True`` the
    matchings are held fixed and the cosine gradients are accumulated into
    both the matching row and the matched row.
    """
    S, T = _pair(S, T)
    ns, nt = S.shape[0], T.shape[0]
    s_norm = _row_norms(S, "source")
    t_norm = _row_norms(T, "target")
    Sn = S / s_norm[:, None]
    Tn = T / t_norm[:, None]
    best_s, match_s, best_t, match_t = _kernels.cosine_matching(Sn, Tn)
    value = float(best_s.sum() / ns + best_t.sum() / nt)
    sig = SimilaritySignal(value, Sign.MAXIMIZE_SIMILARITY,
                           match_source=np.asarray(match_s), match_target=np.asarray(match_t))
    if not grad:
        return sig

    gS = np.zeros_like(S)
    gT = np.zeros_like(T)
    # d cos(a, b)/da = b_hat/|a| - cos * a_hat/|a|
    for rows_a, rows_b, c, w in (
        (np.arange(ns), match_s, best_s, 1.0 / ns),
        (match_t, np.arange(nt), best_t, 1.0 / nt),
    ):
        da = (Tn[rows_b] - c[:, None] * Sn[rows_a]) / s_norm[rows_a, None]
        db = (Sn[rows_a] - c[:, None] * Tn[rows_b]) / t_norm[rows_b, None]
        np.add.at(gS, rows_a, w * da)
        np.add.at(gT, rows_b, w * db)
    sig.grad_source = gS
    sig.grad_target = gT
    return sig


def population_correlation_grad(S, T) -> SimilaritySignal:
    return population_correlation(S, T, grad=True)


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def median_gammas(S, T) -> tuple:
    """{0.5/m, 1/m, 2/m} with m the median pairwise squared distance of the pooled batch."""
    X = np.vstack([S, T])
    D = _kernels.sqdist(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    m = float(np.median(D[iu])) if iu[0].size else 0.0
    if m <= 0.0:
        m = 1.0
    return (0.5 / m, 1.0 / m, 2.0 / m)


def mmd(S, T, kind: SimilarityKind = MMD_LINEAR, grad: bool = True) -> SimilaritySignal:
    S, T = _pair(S, T)
    ns, nt = S.shape[0], T.shape[0]
    if kind.name == "mmd_linear":
        delta = S.mean(axis=0) - T.mean(axis=0)
        sig = SimilaritySignal(float(delta @ delta), Sign.MINIMIZE_DISTANCE)
        if grad:
            sig.grad_source = np.broadcast_to(2.0 * delta / ns, S.shape).copy()
            sig.grad_target = np.broadcast_to(-2.0 * delta / nt, T.shape).copy()
        return sig
    if kind.name != "mmd_rbf":
        raise ValueError(f"mmd does not handle kind {kind.name!r}")

    gammas = kind.gammas if kind.gammas is not None else median_gammas(S, T)
    if len(gammas) == 0:
        raise ValueError("mmd_rbf needs at least one gamma")
    Dss = _kernels.sqdist(S, S)
    Dtt = _kernels.sqdist(T, T)
    Dst = _kernels.sqdist(S, T)
    value = 0.0
    gS = np.zeros_like(S)
    gT = np.zeros_like(T)
    for g in gammas:
        Kss = np.exp(-g * Dss)
        Ktt = np.exp(-g * Dtt)
        Kst = np.exp(-g * Dst)
        value += Kss.sum() / ns**2 + Ktt.sum() / nt**2 - 2.0 * Kst.sum() / (ns * nt)
        if grad:
            # sum_b k(x_a, y_b)(x_a - y_b), as a matrix op
            def pull(Kxy, X, Y):
                return Kxy.sum(axis=1)[:, None] * X - Kxy @ Y

            gS += (-4.0 * g / ns**2) * pull(Kss, S, S) + (4.0 * g / (ns * nt)) * pull(Kst, S, T)
            gT += (-4.0 * g / nt**2) * pull(Ktt, T, T) + (4.0 * g / (ns * nt)) * pull(Kst.T, T, S)
    k = len(gammas)
    sig = SimilaritySignal(float(value / k), Sign.MINIMIZE_DISTANCE)
    if grad:
        sig.grad_source = gS / k
        sig.grad_target = gT / k
    return sig


# ---------------------------------------------------------------------------
# CORAL
# ---------------------------------------------------------------------------

def covariance(X) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (X.shape[0] - 1)


def coral(S, T, grad: bool = True) -> SimilaritySignal:
    S, T = _pair(S, T)
    _require_rows(S, T, 2)
    d = S.shape[1]
    diff = covariance(S) - covariance(T)
    sig = SimilaritySignal(float((diff * diff).sum() / (4.0 * d * d)), Sign.MINIMIZE_DISTANCE)
    if grad:
        G = diff / (2.0 * d * d)
        sig.grad_source = (2.0 / (S.shape[0] - 1)) * (S - S.mean(axis=0)) @ G
        sig.grad_target = -(2.0 / (T.shape[0] - 1)) * (T - T.mean(axis=0)) @ G
    return sig


# ---------------------------------------------------------------------------
# CMD
# ---------------------------------------------------------------------------

def central_moments(X, K):
    """Mean and central moments of orders 2..K per coordinate."""
    mu = X.mean(axis=0)
    Xc = X - mu
    return mu, [np.mean(Xc**k, axis=0) for k in range(2, K + 1)]


def _unit(u):
    n = math.sqrt(float(u @ u))
    return n, (u / n if n > 0 else np.zeros_like(u))


def cmd(S, T, K: int = 5, lower: float = -1.0, upper: float = 1.0, grad: bool = True) -> SimilaritySignal:
    S, T = _pair(S, T)
    if K < 1:
        raise ValueError("cmd needs K >= 1")
    span = upper - lower
    if not span > 0:
        raise ValueError(f"cmd needs upper > lower, got [{lower}, {upper}]")
    mu_s, cs = central_moments(S, K)
    mu_t, ct = central_moments(T, K)
    n1, u1 = _unit(mu_s - mu_t)
    value = n1 / span
    gS = np.broadcast_to(u1 / (span * S.shape[0]), S.shape).copy()
    gT = np.broadcast_to(-u1 / (span * T.shape[0]), T.shape).copy()
    Sc = S - mu_s
    Tc = T - mu_t
    for k in range(2, K + 1):
        nk, uk = _unit(cs[k - 2] - ct[k - 2])
        scale = span**k
        value += nk / scale
        if grad and nk > 0:
            # d c_k / d x_i = k/n * ((x_i - mu)^(k-1) - mean((x - mu)^(k-1)))
            for X, Xc, w, g in ((S, Sc, 1.0, gS), (T, Tc, -1.0, gT)):
                p = Xc ** (k - 1)
                g += w * (k / X.shape[0]) * (p - p.mean(axis=0)) * uk / scale
    sig = SimilaritySignal(float(value), Sign.MINIMIZE_DISTANCE)
    if grad:
        sig.grad_source = gS
        sig.grad_target = gT
    return sig


# ---------------------------------------------------------------------------
# KL between fitted diagonal Gaussians
# ---------------------------------------------------------------------------

VAR_FLOOR = 1e-6


def kl_diag_gaussian(S, T, grad: bool = True) -> SimilaritySignal:
    """Sum over coordinates of KL(N(mu_s, v_s) || N(mu_t, v_t)).

    Variances are the biased (1/n) estimates, floored at ``VAR_FLOOR``.
    """
    S, T = _pair(S, T)
    _require_rows(S, T, 2)
    mu_s, mu_t = S.mean(axis=0), T.mean(axis=0)
    raw_s = S.var(axis=0)
    raw_t = T.var(axis=0)
    vs = np.maximum(raw_s, VAR_FLOOR)
    vt = np.maximum(raw_t, VAR_FLOOR)
    dm = mu_s - mu_t
    kl = 0.5 * (np.log(vt / vs) + (vs + dm * dm) / vt - 1.0)
    sig = SimilaritySignal(float(kl.sum()), Sign.MINIMIZE_DISTANCE)
    if grad:
        d_mu_s = dm / vt
        d_vs = 0.5 * (1.0 / vt - 1.0 / vs) * (raw_s > VAR_FLOOR)
        d_vt = 0.5 * (1.0 / vt - (vs + dm * dm) / vt**2) * (raw_t > VAR_FLOOR)
        ns, nt = S.shape[0], T.shape[0]
        sig.grad_source = d_mu_s / ns + d_vs * 2.0 * (S - mu_s) / ns
        sig.grad_target = -d_mu_s / nt + d_vt * 2.0 * (T - mu_t) / nt
    return sig


# ---------------------------------------------------------------------------
# proxy A-distance
# ---------------------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def proxy_a_distance(S, T, rng: Rng, steps: int = 500, step_size: float = 0.1) -> float:
    """2(1 - 2 err) of a logistic domain classifier, clamped to [0, 2].

    Each domain is split in half (shuffled by ``rng``); the classifier is fit
    by full-batch gradient descent on the training halves and scored on the
    held-out halves.
    """
    S, T = _pair(S, T)
    _require_rows(S, T, 4)
    train, test = [], []
    for X, label in ((S, 0.0), (T, 1.0)):
        perm = rng.permutation(X.shape[0])
        half = X.shape[0] // 2
        train.append((X[perm[:half]], np.full(half, label)))
        test.append((X[perm[half:]], np.full(X.shape[0] - half, label)))
    Xtr = np.vstack([x for x, _ in train])
    ytr = np.concatenate([y for _, y in train])
    Xte = np.vstack([x for x, _ in test])
    yte = np.concatenate([y for _, y in test])

    w = np.zeros(Xtr.shape[1])
    b = 0.0
    n = Xtr.shape[0]
    for _ in range(steps):
        r = _sigmoid(Xtr @ w + b) - ytr
        w -= step_size * (Xtr.T @ r) / n
        b -= step_size * r.mean()
    pred = (Xte @ w + b) > 0.0
    err = float(np.mean(pred != (yte > 0.5)))
    return float(min(2.0, max(0.0, 2.0 * (1.0 - 2.0 * err))))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def measure(kind: SimilarityKind, S, T, grad: bool = True, rng: Optional[Rng] = None) -> SimilaritySignal:
    """Evaluate ``kind`` on two batches through one interface."""
    name = kind.name
    if name == "pc":
        return population_correlation(S, T, grad=grad)
    if name in ("mmd_linear", "mmd_rbf"):
        return mmd(S, T, kind, grad=grad)
    if name == "coral":
        return coral(S, T, grad=grad)
    if name == "cmd":
        return cmd(S, T, kind.K, kind.lower, kind.upper, grad=grad)
    if name == "kl_gauss":
        return kl_diag_gaussian(S, T, grad=grad)
    if grad:
        raise ValueError("proxy_a has no gradient")
    return SimilaritySignal(proxy_a_distance(S, T, rng if rng is not None else Rng(0)), Sign.MINIMIZE_DISTANCE)


def all_values(S, T, seed: int = 0) -> dict:
    out = {}
    for name in KIND_NAMES:
        out[name] = measure(SimilarityKind(name), S, T, grad=False, rng=Rng(seed)).value
    return out

