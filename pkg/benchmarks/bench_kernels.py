"""Compare the numba kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times the barrier oracle (value, gradient, Hessian) on a default-size
subproblem and MAP classification of a large received batch, checks that
both paths agree, then runs one full SCA solve under each backend in a
subprocess (the backend is picked from MAXMIN_AIRCOMP_NUMBA at import).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from maxmin_aircomp import kernels
from maxmin_aircomp.model import PowerBudget, SystemInstance, received_moments
from maxmin_aircomp.optimizer import initialize_feasible
from maxmin_aircomp.simulator import NetworkConfig, generate_synthetic_statistics, sample_channels, simulate_trials
from maxmin_aircomp.subproblem import build_subproblem


def default_instance(seed=0, K=3, M=12, L=4):
    stats = generate_synthetic_statistics(L, M, K, 0.5, 0.4, rng_seed=seed)
    channel = sample_channels(NetworkConfig(num_devices=K, rng_seed=seed + 1))
    return SystemInstance(stats, channel, PowerBudget.from_dbm(12.0, K, M, 0.6))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


SOLVE_SNIPPET = """
import time
from maxmin_aircomp import kernels
from maxmin_aircomp.optimizer import sca_maxmin
import sys; sys.path.insert(0, {here!r})
from bench_kernels import default_instance
inst = default_instance()
sca_maxmin(inst)  # warm-up / compile
t0 = time.perf_counter(); tr = sca_maxmin(inst); dt = time.perf_counter() - t0
print(kernels.backend(), dt, tr.min_gain)
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--calls", type=int, default=200)
    args = ap.parse_args()

    inst = default_instance()
    b, _, _ = initialize_feasible(inst)
    model = build_subproblem(inst, b)
    z = model.start_point()
    data = model._data()
    v1, g1, H1 = kernels.barrier_oracle_numba(z, 10.0, True, *data)
    v2, g2, H2 = kernels.barrier_oracle_numpy(z, 10.0, True, *data)
    print(f"barrier oracle: n={z.size} vars, rel |dH| = {np.max(np.abs(H1 - H2)) / np.max(np.abs(H2)):.2e}, "
          f"|dval| = {abs(v1 - v2):.2e}")

    def loop(fn):
        return lambda: [fn(z, 10.0, True, *data) for _ in range(args.calls)]

    t_nb = best_of(loop(kernels.barrier_oracle_numba), args.repeat) / args.calls
    t_np = best_of(loop(kernels.barrier_oracle_numpy), args.repeat) / args.calls
    print(f"  numba {t_nb * 1e6:9.1f} us/call   numpy {t_np * 1e6:9.1f} us/call   speedup {t_np / t_nb:5.1f}x")

    _, X = simulate_trials(inst, b, 100_000, rng_seed=3)
    dist = received_moments(inst, b)
    means, var = np.asarray(dist.received_means), np.asarray(dist.received_variances)
    same = np.array_equal(kernels.map_classify_batch_numba(X, means, var), kernels.map_classify_batch_numpy(X, means, var))
    t_nb = best_of(lambda: kernels.map_classify_batch_numba(X, means, var), args.repeat)
    t_np = best_of(lambda: kernels.map_classify_batch_numpy(X, means, var), args.repeat)
    print(f"MAP classify 1e5 x {X.shape[1]}: identical={same}")
    print(f"  numba {t_nb * 1e3:9.2f} ms        numpy {t_np * 1e3:9.2f} ms        speedup {t_np / t_nb:5.1f}x")

    here = os.path.dirname(os.path.abspath(__file__))
    print("full SCA solve at defaults (K=3, M=12, L=4):")
    for flag in ("1", "0"):
        env = dict(os.environ, MAXMIN_AIRCOMP_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET.format(here=here)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):7.3f} s   min_gain {float(out[2]):.12g}")


if __name__ == "__main__":
    main()
