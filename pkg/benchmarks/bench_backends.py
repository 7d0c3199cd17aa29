"""Time the compiled loop kernels against their numpy forms.

Usage: python3 benchmarks/bench_backends.py [--repeat N]

Each kernel runs once untimed (numba compiles on first call), then the
best of ``repeat`` runs is reported. Without numba the loop forms are
plain Python and only small sizes are timed.
"""

import argparse
import time

import numpy as np

from nlfilt import _kernels as K


def best(fn, repeat: int) -> float:
    fn()
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def cases(rng, small: bool):
    n = 200 if small else 1200
    h = 8.0 / n
    coords = (np.arange(n) * h - 4.0)[:, None]
    x = rng.uniform(-4, 4, (20 * n, 1))
    y = rng.uniform(-4, 4, (20 * n, 1))
    W = K.midpoint_weights_numpy(K.FORM_FRACTIONAL, 1.0, 0.3, 0.0, coords, h, 0.0, 0)
    f, g = rng.normal(size=n), rng.normal(size=n)
    c, r = rng.uniform(0, 5, 50 * n), rng.normal(size=50 * n)
    w, psi = rng.uniform(-2, 2, 5 * n), rng.uniform(-2, 2, 5 * n)
    m = 15 if small else 31
    ax = (np.arange(m) - m // 2) * 0.25
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    c2 = np.column_stack([X.ravel(), Y.ravel()])
    f2 = rng.normal(size=c2.shape[0])
    return {
        "kernel_pairs": (lambda: K.kernel_pairs_loop(0, 1.0, 0.3, 0.0, x, y),
                         lambda: K.kernel_pairs_numpy(0, 1.0, 0.3, 0.0, x, y)),
        "midpoint_weights": (lambda: K.midpoint_weights_loop(0, 1.0, 0.3, 0.0, coords, h, 0.0, 0),
                             lambda: K.midpoint_weights_numpy(0, 1.0, 0.3, 0.0, coords, h, 0.0, 0)),
        "pair_energy": (lambda: K.pair_energy_loop(W, f, g), lambda: K.pair_energy_numpy(W, f, g)),
        "solve_power_scalar": (lambda: K.solve_power_scalar_loop(c, r, 1.0, 2.0),
                               lambda: K.solve_power_scalar_numpy(c, r, 1.0, 2.0)),
        "bpsi": (lambda: K.bpsi_loop(w, psi, 1.0, 1.0, 0.0, 0.5, 1e-10, 50),
                 lambda: K.bpsi_numpy(w, psi, 1.0, 1.0, 0.0, 0.5, 1e-10, 50)),
        "lazy_apply_2d": (lambda: K.lazy_apply_2d_loop(0, 1.0, 0.3, 0.0, c2, 0.0625, f2),
                          lambda: K.lazy_apply_2d_numpy(0, 1.0, 0.3, 0.0, c2, 0.0625, f2)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    loop_name = "numba" if K.HAVE_NUMBA else "python"
    print(f"{'kernel':<20}{loop_name + ' [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}")
    for name, (loop, vec) in cases(rng, small=not K.HAVE_NUMBA).items():
        a = best(loop, args.repeat)
        b = best(vec, args.repeat)
        print(f"{name:<20}{1e3 * a:>14.2f}{1e3 * b:>14.2f}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
