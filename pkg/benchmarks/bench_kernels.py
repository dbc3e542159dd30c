"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

``--end-to-end`` also times one gradient-penalty reconstruction on the
desk-scale fixture in two subprocesses, one with DATARECON_DISABLE_NUMBA=1.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from datarecon import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(gen):
    for n in (1_000, 100_000, 1_000_000):
        z = gen.normal(size=n) * 5
        y = np.sign(gen.normal(size=n))
        yield f"logistic_terms n={n}", lambda z=z, y=y: K.np_logistic_terms(z, y), \
            lambda z=z, y=y: K.nb_logistic_terms(z, y)
        yield f"softplus_terms n={n}", lambda z=z: K.np_softplus_terms(z, 20.0), \
            lambda z=z: K.nb_softplus_terms(z, 20.0)
    for nq, nr, k in ((12, 12, 48), (100, 1000, 48), (20, 2000, 3072)):
        q = gen.uniform(size=(nq, k))
        r = gen.uniform(size=(nr, k))
        yield f"sq_dists {nq}x{nr} k={k}", lambda q=q, r=r: K.np_sq_dists(q, r), \
            lambda q=q, r=r: K.nb_sq_dists(q, r)


SNIPPET = """
import time
from datarecon.experiments import make_fixture, init_for, run_attack
from datarecon.numcore import RngStream
from datarecon import _kernels
fx = make_fixture()
x0, _ = init_for(fx, "random", RngStream(3))
t0 = time.perf_counter()
run_attack(fx.spec, fx.theta_star, fx.train.labels, x0, fx.loss, "gradpen")
print(_kernels.BACKEND, time.perf_counter() - t0)
"""


def end_to_end():
    for flag in ("0", "1"):
        env = dict(os.environ, DATARECON_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"{'gradpen reconstruction (fixture)':36s} {backend:>6s} {float(secs):9.3f} s")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not importable; nothing to compare")
    gen = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in cases(gen):
        for a, b in zip(np.atleast_1d(f_np()), np.atleast_1d(f_nb())):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:36s} {t_np * 1e3:8.3f}ms {t_nb * 1e3:8.3f}ms {t_np / t_nb:7.2f}x")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
