"""Benchmark the numba kernels against their pure-numpy twins.

Times the two hot loops on a full-scale workload: the batched projector
cost over a full 50x50 search grid (2500 candidates) and the concentrated
ML cost evaluated once per local-search iteration.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from risloc._kernels import (
    _numpy_concentrated_cost,
    _numpy_projector_cost_batch,
)

try:
    from risloc._kernels import _build_numba_kernels
    numba_projector, numba_concentrated = _build_numba_kernels()
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    print("numba not importable: timing the numpy path only")


def timeit(fn, repeats=7):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    candidates, n_tx, n_sub = 2500, 5, 30
    shape = (candidates, n_tx, n_sub)
    phi1 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    phi2 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = rng.standard_normal((n_tx, n_sub)) + 1j * rng.standard_normal((n_tx, n_sub))

    w1 = phi1[0]
    w2 = phi2[0]
    ph1 = np.exp(1j * rng.uniform(0, 2 * np.pi, n_sub))
    ph2 = np.exp(1j * rng.uniform(0, 2 * np.pi, n_sub))

    rows = []

    t_np = timeit(lambda: _numpy_projector_cost_batch(phi1, phi2, y))
    if HAS_NUMBA:
        numba_projector(phi1[:2], phi2[:2], y)  # JIT warmup
        t_nb = timeit(lambda: numba_projector(phi1, phi2, y))
        c_np, _ = _numpy_projector_cost_batch(phi1, phi2, y)
        c_nb, _ = numba_projector(phi1, phi2, y)
        assert np.allclose(c_np, c_nb, rtol=1e-10)
    else:
        t_nb = None
    rows.append((f"projector cost, {candidates} candidates "
                 f"(G={n_tx}, N={n_sub})", t_np, t_nb))

    calls = 500  # roughly one ML local search worth of evaluations
    sqrt_p = 2.0

    def np_conc():
        for _ in range(calls):
            _numpy_concentrated_cost(w1, w2, ph1, ph2, y, sqrt_p)

    t_np = timeit(np_conc, repeats=3)
    if HAS_NUMBA:
        numba_concentrated(w1, w2, ph1, ph2, y, sqrt_p)  # JIT warmup

        def nb_conc():
            for _ in range(calls):
                numba_concentrated(w1, w2, ph1, ph2, y, sqrt_p)

        t_nb = timeit(nb_conc, repeats=3)
    else:
        t_nb = None
    rows.append((f"concentrated cost, {calls} evaluations", t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        if t_nb is None:
            print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {'-':>10}  {'-':>8}")
        else:
            print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms"
                  f"  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
