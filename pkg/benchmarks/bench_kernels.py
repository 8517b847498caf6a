"""Time the numba and numpy paths of each hot kernel and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from dampc import _kernels


def unit_rows(r, n, d):
    X = r.normal(size=(n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def best_of(fn, repeat):
    fn()  # warm up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    r = np.random.default_rng(0)
    for n in (64, 512):
        S, T = unit_rows(r, n, 16), unit_rows(r, n, 16)
        yield f"cosine_matching {n}x{n}x16", lambda nb, S=S, T=T: _kernels.cosine_matching(S, T, use_numba=nb)
        yield f"sqdist {n}x{n}x16", lambda nb, S=S, T=T: _kernels.sqdist(S, T, use_numba=nb)
    for n in (1_000, 100_000):
        yield f"splitmix64_fill n={n}", lambda nb, n=n: _kernels.splitmix64_fill(12345, n, use_numba=nb)


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, np.integer)):
        return int(a) == int(b)
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels.numba is None:
        print("numba not importable; only the numpy path exists")
        return
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, fn in cases():
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        ok = agree(fn(False), fn(True))
        print(f"{name:34s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}  {ok}")


if __name__ == "__main__":
    main()
