"""Dense float64 linear algebra helpers and the splitmix64 generator."""

from __future__ import annotations

import math

import numpy as np

from . import _kernels

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


class DimensionError(ValueError):
    pass


class InvalidDistributionError(ValueError):
    pass


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(A, B) -> np.ndarray:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] != B.shape[0]:
        raise DimensionError(f"cannot multiply {A.shape[0]}x{A.shape[1]} by {B.shape[0]}x{B.shape[1]}")
    return A @ B


def softmax_rows(M) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    M = as_matrix(M)
    if M.size == 0:
        raise DimensionError("softmax of an empty matrix")
    Z = M - M.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def log_softmax_rows(M) -> np.ndarray:
    M = as_matrix(M)
    Z = M - M.max(axis=1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """splitmix64 stream.

    The whole state is one 64-bit integer, so ``Rng.from_state(r.state)``
    resumes an identical stream on any platform.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    @classmethod
    def from_state(cls, state: int) -> "Rng":
        return cls(state)

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def u64_array(self, n: int) -> np.ndarray:
        out, self.state = _kernels.splitmix64_fill(self.state, int(n))
        return out

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` uniforms in [0, 1); same values as ``n`` calls to ``uniform``."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal_array(self, n: int) -> np.ndarray:
        # Box-Muller on uniform pairs; one standard normal per pair
        u = self.uniform_array(2 * int(n)).reshape(2, -1) if n else np.zeros((2, 0))
        return np.sqrt(-2.0 * np.log1p(-u[0])) * np.cos(2.0 * math.pi * u[1])

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform_array(n), kind="stable")

    def spawn(self) -> "Rng":
        """Independent child stream seeded from this one."""
        return Rng(self.next_u64())


def rng_uniform(rng: Rng) -> float:
    return rng.uniform()


def check_distribution(probs, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise InvalidDistributionError("empty distribution")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistributionError(f"negative or non-finite probability in {p.tolist()}")
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")
    return p


def sample_categorical(rng: Rng, probs) -> int:
    """Inverse-CDF draw; a scan that falls short returns the last index."""
    p = check_distribution(probs)
    u = rng.uniform()
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if u < acc:
            return i
    return len(p) - 1
