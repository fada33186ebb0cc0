"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best wall time over ``--repeat`` runs after one warm-up
call (which also triggers compilation), plus the max abs difference of the
two outputs.
"""
import argparse
import time

import numpy as np

from pgff import _kernels, plant
from pgff.neural import backward_rows, difference_transform, forward_rows, glorot_init, window_rows


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def filter_case():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 4000))
    den = np.poly([0.98, 0.95, -0.3])
    num = np.array([1.0, -0.5])
    return (
        lambda: _kernels.lfilter_rows_numba(num, den, x),
        lambda: _kernels.lfilter_rows_numpy(num, den, x),
    )


def plant_case():
    p = plant.PlantParams()
    training, _ = plant.generate_references()
    r = training[-1]
    f = plant.inverse_feedforward(p, r).samples
    a_q, b_q = plant.discrete_polynomials(p)
    args = (a_q, b_q, f, p.Ts, p.c1, p.c2, p.alpha, plant.NEWTON_TOL, plant.NEWTON_MAX_ITER)
    return (
        lambda: _kernels.plant_forward_numba(*args)[0],
        lambda: _kernels.plant_forward_numpy(*args)[0],
    )


def mlp_case():
    rng = np.random.default_rng(1)
    r = rng.normal(size=(9, 4000)).cumsum(axis=1) * 1e-3
    net = glorot_init((5, 10, 10, 1), 0, input_transform=difference_transform(5, 1e-3, r), output_scale=0.01)
    x = window_rows(r, 5).reshape(-1, 5)
    cot = rng.normal(size=x.shape[0])

    def run(use_numba):
        def call():
            saved = _kernels.MLP_KERNEL
            _kernels.MLP_KERNEL = use_numba
            try:
                out, cache = forward_rows(net, x)
                return np.concatenate([out, backward_rows(net, cache, cot)])
            finally:
                _kernels.MLP_KERNEL = saved
        return call

    return run(True), run(False)


CASES = {
    "filter 9x4000, order 3": filter_case,
    "plant forward, 4000 steps": plant_case,
    "mlp (5,10,10,1) fwd+bwd, 36000 rows": mlp_case,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or PGFF_DISABLE_NUMBA is set); nothing to compare")
    print(f"{'kernel':40s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s} {'max diff':>10s}")
    for name, make in CASES.items():
        fast, slow = make()
        diff = float(np.max(np.abs(np.asarray(fast()) - np.asarray(slow()))))
        t_fast, t_slow = best_time(fast, args.repeat), best_time(slow, args.repeat)
        print(f"{name:40s} {1e3 * t_fast:12.3f} {1e3 * t_slow:12.3f} {t_slow / t_fast:9.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
