"""Compare the compiled and pure-Python kernels on the hot loops.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from idtsim import _backend, attacks
from idtsim.config import SimConfig
from idtsim.core_sim import Core, Schedule
from idtsim.mem_model import cache_line_of


def workload(seed=0, duration=200_000_000):
    g = np.random.default_rng(seed)
    core = Core(SimConfig())
    s = cache_line_of(core.idt_line(33)).set_index
    sched = Schedule.merge(
        Schedule.interrupts(np.sort(g.integers(0, duration, 20_000)), 33),
        Schedule.interrupts(np.arange(0, duration, 12_000), 236),
        Schedule.accesses(np.sort(g.integers(0, duration, 5_000)), core.space.heap_page(40) + s * 64),
    )
    return sched, s, duration


def bench(name, repeat):
    kernel = _backend.load(name)
    sched, s, duration = workload()
    out = {}
    cases = {
        "monitor": lambda c: attacks.monitor(c, 33, duration, sched, log=False),
        "monitor (no fast-forward)": lambda c: attacks.monitor(c, 33, duration // 20, sched.before(duration // 20),
                                                               fast_forward=False, log=False),
        "prime+probe": lambda c: attacks.prime_probe_monitor(c, s, duration // 4, sched.before(duration // 4),
                                                             log=False),
        "oracle x 50k": lambda c: attacks.oracle_trials(c, 33, 50_000, cached=True),
    }
    for label, fn in cases.items():
        best = float("inf")
        for _ in range(repeat):
            core = Core(SimConfig(), seed=1, kernel=kernel)
            t0 = time.perf_counter()
            fn(core)
            best = min(best, time.perf_counter() - t0)
        out[label] = best
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = _backend.available()
    results = {n: bench(n, args.repeat) for n in names}
    labels = list(next(iter(results.values())))
    print(f"{'case':28s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label in labels:
        row = f"{label:28s}" + "".join(f"{results[n][label]:11.3f}s" for n in names)
        if len(names) == 2:
            row += f"{results['python'][label] / results['cython'][label]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
