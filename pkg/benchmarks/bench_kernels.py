"""Compiled vs interpreted scheduling kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs once to compile, then both paths are timed on the same
inputs and their outputs compared. The interpreted path is the kernel's
``py_func``, the same code ``JOBSHOP_RL_NO_JIT=1`` selects.
"""

import argparse
import contextlib
import time

import numpy as np

from jobshop_rl import exact, kernels
from jobshop_rl._jit import HAS_NUMBA, python_version
from jobshop_rl.instances import Gaussian, GeneratorSpec, generate

KERNELS = ("decode_sequence", "spt_sequence", "random_makespans", "root_lower_bound", "bnb_search")


@contextlib.contextmanager
def interpreted():
    saved = {name: getattr(kernels, name) for name in KERNELS}
    try:
        for name, fn in saved.items():
            setattr(kernels, name, python_version(fn))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rollouts", type=int, default=2000)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba unavailable or disabled; both columns time the interpreted path")

    rows = []
    inst = generate(GeneratorSpec(8, 6, Gaussian(100, 10), seed=3))
    machines, times, lengths = inst.to_arrays()
    u = np.random.default_rng(0).random((args.rollouts, inst.num_tasks))

    def rollouts():
        return kernels.random_makespans(machines, times, lengths, inst.num_machines, u)

    rollouts()
    fast, a = best_of(rollouts, args.repeat)
    with interpreted():
        slow, b = best_of(rollouts, args.repeat)
    rows.append((f"random_makespans 8x6 x{args.rollouts}", fast, slow, np.array_equal(a, b)))

    small = generate(GeneratorSpec(4, 3, Gaussian(100, 10), seed=11))

    def search():
        r = exact.branch_and_bound(small, time_limit=None)
        return r.makespan, r.nodes

    search()
    fast, a = best_of(search, args.repeat)
    with interpreted():
        slow, b = best_of(search, 1)
    rows.append((f"branch_and_bound 4x3 ({a[1]} nodes)", fast, slow, a == b))

    print(f"{'kernel':40s} {'jit s':>10s} {'python s':>10s} {'speedup':>9s}  same")
    for name, fast, slow, same in rows:
        print(f"{name:40s} {fast:10.4f} {slow:10.4f} {slow / fast:9.1f}  {same}")


if __name__ == "__main__":
    main()
