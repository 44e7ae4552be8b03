"""Event throughput of the compiled and pure-Python event loops.

Usage: ``python benchmarks/bench_kernels.py [--N 256] [--events 200000]``.
Both backends consume the same uniforms, so they also end in the same state;
the script checks that before reporting.
"""

import argparse
import time

import numpy as np

from longjump import COMPILED_AVAILABLE, KernelSpec, Profile, RateFunction, build_kernel
from longjump.coupling import TwoClassSim
from longjump.dynamics import ExclusionSim, ZeroRangeSim
from longjump.measures import ThermoFunctions, sample_profile_measure


def _models(N: int):
    k = build_kernel(KernelSpec(1, 1.5), N)
    prof = Profile.parse("constant value=0.5")
    rate = RateFunction.from_name("linear")
    tf = ThermoFunctions(rate)
    ex0 = sample_profile_measure(prof, N, np.random.default_rng(1))
    zr0 = sample_profile_measure(Profile.parse("constant value=1.0"), N, np.random.default_rng(2), tf=tf)
    yield "exclusion", lambda b, seed: ExclusionSim(k, ex0, np.random.default_rng(seed), backend=b)
    yield "zero-range", lambda b, seed: ZeroRangeSim(k, rate, zr0, np.random.default_rng(seed), backend=b)
    delta = np.random.default_rng(3).integers(0, 2, N)
    yield "two-class", lambda b, seed: TwoClassSim(k, rate, zr0, delta, np.random.default_rng(seed),
                                                   backend=b)


def _time(make, backend: str, events: int):
    sim = make(backend, 7)
    t0 = time.perf_counter()
    sim.run_events(events)
    return time.perf_counter() - t0, sim


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--events", type=int, default=200_000)
    args = ap.parse_args(argv)
    if not COMPILED_AVAILABLE:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'model':<12} {'python ev/s':>14} {'compiled ev/s':>14} {'speedup':>9}  same-state")
    for name, make in _models(args.N):
        tp, sp = _time(make, "python", args.events)
        tc, sc = _time(make, "compiled", args.events)
        same = np.array_equal(_occ(sp), _occ(sc)) and sp.time == sc.time
        print(f"{name:<12} {args.events / tp:>14,.0f} {args.events / tc:>14,.0f} {tp / tc:>8.1f}x  {same}")


def _occ(sim):
    return sim.config.occupancy


if __name__ == "__main__":
    main()
