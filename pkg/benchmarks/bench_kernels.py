"""Compare the numba and pure-numpy kernels on the three hot loops.

    python3 benchmarks/bench_kernels.py [--steps 200000] [--bayes-steps 5000] [--grid-res 101]

Both backends are imported directly, so one process times both. Numba timings
exclude compilation (a warm-up call is made first). Results are also checked
for agreement.
"""
import argparse
import time

import numpy as np

from mdpconf import kernels
from mdpconf._accel import HAVE_NUMBA
from mdpconf.bayes import init_posterior
from mdpconf.core import ConfusionMatrix, Mdp, RandomPolicy, make_rng_stream, simulate


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--bayes-steps", type=int, default=5000)
    ap.add_argument("--grid-res", type=int, default=101)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    P = np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.9, 0.1], [0.5, 0.5]]])
    C = ConfusionMatrix.two_state(0.4, 0.2).entries
    T = args.steps
    cdf_init = kernels.sampling_cdf(np.full(2, 0.5))
    cdf_P = np.stack([np.stack([kernels.sampling_cdf(r) for r in Pa]) for Pa in P])
    cdf_C = np.stack([kernels.sampling_cdf(r) for r in C])
    cdf_pol = kernels.sampling_cdf(np.full(2, 0.5))
    sched = np.full(T, -1, np.int64)
    u = make_rng_stream(0, T)

    traj = simulate(Mdp(P), ConfusionMatrix(C), RandomPolicy.uniform(2), args.bayes_steps, seed=0)
    post = init_posterior("grid", args.grid_res)
    mask = np.zeros(args.bayes_steps + 1, bool)
    mask[[0, -1]] = True
    b0 = np.full(2, 0.5)
    bayes_args = (post.support, post.log_weights, b0, P, traj.actions, traj.observations, mask)

    cases = [
        (f"sample_chain T={T}", kernels.sample_chain_nb, kernels.sample_chain_np,
         (cdf_init, cdf_P, cdf_C, sched, cdf_pol, u)),
        (f"bayes order 1 T={args.bayes_steps} K={post.K}", kernels.bayes_first_order_nb,
         kernels.bayes_first_order_np, bayes_args),
        (f"bayes order 2 T={args.bayes_steps} K={post.K}", kernels.bayes_second_order_nb,
         kernels.bayes_second_order_np, bayes_args),
    ]
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':40s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speed-up':>9s}  max |diff|")
    for name, nb, npf, a in cases:
        t_np, r_np = _best(lambda: npf(*a), args.repeat)
        if HAVE_NUMBA:
            nb(*a)
            t_nb, r_nb = _best(lambda: nb(*a), args.repeat)
            diff = max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float))))
                       for x, y in zip(r_nb, r_np))
            print(f"{name:40s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:9.1f}  {diff:.2e}")
        else:
            print(f"{name:40s} {'-':>10s} {t_np:10.4f} {'-':>9s}")


if __name__ == "__main__":
    main()
