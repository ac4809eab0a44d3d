"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--T SECONDS]

Prints best-of-N wall time per kernel and backend, and the speedup.
"""

import argparse
import time

import numpy as np

from smallgain import _kernels
from smallgain.problem import parse_spec
from smallgain.sim import integrate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(T):
    out = {}
    for name in ("linear_canonical", "feedthrough_loop", "ios_case"):
        spec = parse_spec(name)
        sc = spec.scenarios[-1]
        s1, s2 = spec.dynamics
        out[f"rk4 {name} (T={T:g})"] = (
            lambda b, s1=s1, s2=s2, sc=sc: integrate(s1, s2, sc.x0, sc.inputs, T, sc.dt, backend=b))

    t = np.concatenate([[0.0], np.geomspace(1e-3, 100.0, 2047)])
    back = (np.searchsorted(t, t / 4, side="right") - 1).astype(np.intp)
    Bv = np.outer(np.linspace(0, 10, 64), np.exp(-t))
    E0 = np.full_like(Bv, 1e3)
    out["envelope 64x2048"] = lambda b: _kernels.envelope_linear(Bv, back, 0.8, 0.1, E0, 1e-12,
                                                                 10_000, backend=b)
    X = np.random.default_rng(0).standard_normal((200_000, 4))
    out["running max 200000x4"] = lambda b: _kernels.running_abs_max(X, backend=b)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--T", type=float, default=2.0, help="simulated horizon for the rk4 cases")
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")
    header = f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10s}"
    print(header)
    for label, fn in cases(args.T).items():
        row = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        line = f"{label:34s}" + "".join(f"{row[b]:11.4f}s" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
