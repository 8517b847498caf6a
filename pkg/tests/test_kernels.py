import os
import subprocess
import sys

import numpy as np
import pytest

from dampc import _kernels

needs_numba = pytest.mark.skipif(_kernels.numba is None, reason="numba unavailable")


def unit_rows(r, n, d):
    X = r.normal(size=(n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_cosine_matching_parity(seed):
    r = np.random.default_rng(seed)
    S, T = unit_rows(r, 1 + seed * 3, 4), unit_rows(r, 2 + seed, 4)
    a = _kernels.cosine_matching(S, T, use_numba=True)
    b = _kernels.cosine_matching(S, T, use_numba=False)
    np.testing.assert_allclose(a[0], b[0], atol=1e-14)
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(a[2], b[2], atol=1e-14)
    np.testing.assert_array_equal(a[3], b[3])


@needs_numba
def test_cosine_matching_ties_both_paths():
    S = np.array([[1.0, 0.0]])
    T = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, -1.0]])
    for nb in (True, False):
        best_s, match_s, best_t, match_t = _kernels.cosine_matching(S, T, use_numba=nb)
        assert match_s.tolist() == [0] and match_t.tolist() == [0, 0, 0]


@needs_numba
def test_sqdist_parity():
    r = np.random.default_rng(0)
    X, Y = r.normal(size=(9, 5)), r.normal(size=(7, 5))
    a, b = _kernels.sqdist(X, Y, use_numba=True), _kernels.sqdist(X, Y, use_numba=False)
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(b, ((X[:, None] - Y[None]) ** 2).sum(-1), atol=1e-12)
    assert b.min() >= 0.0


@needs_numba
@pytest.mark.parametrize("state", [0, 1, 2**63 + 5, 2**64 - 1])
def test_splitmix_parity(state):
    a, sa = _kernels.splitmix64_fill(state, 257, use_numba=True)
    b, sb = _kernels.splitmix64_fill(state, 257, use_numba=False)
    np.testing.assert_array_equal(a, b)
    assert sa == sb


def test_env_flag_disables_numba():
    env = dict(os.environ, DAMPC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from dampc import _kernels; print(_kernels.USE_NUMBA)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "False"


def test_pure_numpy_run_matches(tmp_path):
    """A short training run gives the same metrics with and without numba."""
    code = ("from dampc.data import shifted_blobs_task\n"
            "from dampc.training import TrainConfig, train_fixed\n"
            "from dampc.cli import default_arch\n"
            "s, t, _ = shifted_blobs_task(seed=0, n_per_class=20, d=8, n_classes=2)\n"
            "_, h = train_fixed(default_arch(1), s, t, TrainConfig(epochs=2, batch_size=16))\n"
            "print(repr([(m.mean_loss, m.mean_sim) for m in h]))\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, DAMPC_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env,
                                   check=True).stdout)
    a, b = (eval(o) for o in outs)
    for (la, sa), (lb, sb) in zip(a, b):
        assert abs(la - lb) <= 1e-9 and abs(sa - sb) <= 1e-9
