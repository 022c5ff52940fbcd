"""Time the compiled and pure-Python integrators on the same paths.

Usage: python benchmarks/bench_kernels.py [--paths N] [--t-max T]
"""
import argparse
import time

import numpy as np

from manydelta import _backend, mc
from manydelta.model import ModelParams
from manydelta.sde import SimConfig, simulate_many_delta, simulate_radial_one_delta


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=5)
    parser.add_argument("--t-max", type=float, default=0.2)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _backend.compiled_kernels is None:
        raise SystemExit("compiled extension is not built")
    params = ModelParams.uniform(4)
    z0 = np.array([0.0, 0.8, 0.4 + 0.7j, 1.2 + 0.5j])
    sim = SimConfig(dt_max=1e-3, t_max=args.t_max)
    cases = {
        "many_delta N=4": lambda k: [simulate_many_delta(z0, params, sim, mc.stream(1, i),
                                                         record=False, kernels=k)
                                     for i in range(args.paths)],
        "radial one-delta": lambda k: [simulate_radial_one_delta(0.5, 1.0, sim, mc.stream(2, i),
                                                                 eps=1e-4, q=1.0, record=False,
                                                                 kernels=k)
                                       for i in range(args.paths)],
    }
    print(f"{'case':<20}{'compiled [s]':>14}{'python [s]':>14}{'speed-up':>10}  agree")
    for name, run in cases.items():
        fast, a = _time(lambda: run(_backend.compiled_kernels), args.repeat)
        slow, b = _time(lambda: run(_backend.python_kernels), 1)
        same = all(_terminal(x) == _terminal(y) for x, y in zip(a, b))
        print(f"{name:<20}{fast:>14.4f}{slow:>14.4f}{slow / fast:>10.1f}  {same}")


def _terminal(rec):
    if hasattr(rec, "states"):
        return rec.states[-1].tobytes()
    return (rec.radius[-1], rec.occupation)


if __name__ == "__main__":
    main()
