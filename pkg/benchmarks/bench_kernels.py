"""Time the Cython kernels against the numpy fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat R] [--points P]``

Each kernel runs on identical inputs under both backends; the script prints
the best-of-R wall time, the speedup, and the largest output difference.
"""
import argparse
import time

import numpy as np

from eclab import kernels
from eclab.torus_map import TorusMap

MAPS = {
    "doubling": TorusMap.from_spec({"A": [[2]], "perturbation": [
        {"coord": 0, "freq": [1], "sin": 0.05}]}),
    "perturbed_2I": TorusMap.from_spec({"A": [[2, 0], [0, 2]], "perturbation": [
        {"coord": 0, "freq": [0, 1], "sin": 0.03}, {"coord": 1, "freq": [1, 1], "cos": 0.02}]}),
}


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def cases(f, P, rng):
    flat = f._flat
    n = f.n
    x = rng.random((P, n))
    y = f.lift_evaluate(x)
    seeds = x + 1e-2 * rng.standard_normal((P, n))
    depth, per = 6, 9
    modes = rng.integers(-3, 4, size=(depth * per, n)).astype(float)
    coefs = (rng.standard_normal((depth * per, n)) + 1j * rng.standard_normal((depth * per, n)))
    offsets = np.arange(0, depth * per + 1, per, dtype=np.int64)
    return {
        "lift_jacobian": lambda K: K.lift_jacobian(x, *flat),
        "newton_solve": lambda K: K.newton_solve(y, seeds, *flat)[0],
        "orbit_series": lambda K: K.orbit_series(x, *flat, modes, coefs, offsets, 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=65536)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; only the python backend is available")
        return 1
    print(f"{'map':<14}{'kernel':<15}{'python s':>10}{'cython s':>10}{'speedup':>9}{'max diff':>11}")
    for name, f in MAPS.items():
        rng = np.random.default_rng(args.seed)
        for kname, run in cases(f, args.points, rng).items():
            tp, op = _best(lambda: run(py), args.repeat)
            tc, oc = _best(lambda: run(cy), args.repeat)
            print(f"{name:<14}{kname:<15}{tp:>10.4f}{tc:>10.4f}{tp / tc:>9.2f}{_maxdiff(op, oc):>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
