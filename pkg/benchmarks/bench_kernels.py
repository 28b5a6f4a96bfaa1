"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends run the same tapes on the same inputs; the script also prints
the largest difference between their results.
"""

import argparse
import math
import time

import numpy as np

from actionangle import _pykernels
from actionangle import holonomy as Hm
from actionangle.core.integrate import _field_tape
from actionangle.kepler import from_elements, kepler_observables

try:
    from actionangle import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases():
    H = kepler_observables().H
    field = _field_tape(H)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0.5, 2.0, (20000, 2)), rng.uniform(-1, 1, (20000, 2)),
                           np.zeros(20000)])
    z0 = from_elements(1.0, 0.5)
    nsteps = 20000
    h = 2 * math.pi / nsteps

    conn = Hm.ConnectionField.parse([["sin(phi1) + 0.3*cos(phi2)", "0.2"],
                                     ["0.5*sin(phi1 - phi2)", "cos(phi2)"]])
    path = Hm.ParameterPath.from_exprs(1.0, ["t", "sin(t)"])
    tape = Hm._characteristics_tape(conn, path.pieces[0])
    N, m = 32, 2
    nodes = Hm.grid_nodes(N, m)
    X0 = np.column_stack([nodes, np.zeros((N * N, m)), np.tile(np.eye(m).ravel(), (N * N, 1))])
    return {
        "eval_tape_batch (Kepler field, 20000 points)":
            lambda k: k.eval_tape_batch(field, pts),
        f"rk4 (Kepler orbit, {nsteps} steps)":
            lambda k: k.rk4(field, z0, 0.0, h, nsteps)[0],
        "rk4_batch (characteristics, 1024 nodes, 200 steps)":
            lambda k: k.rk4_batch(tape, X0, 1.0, -1.0 / 200, 200),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':55s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases().items():
        tp, outp = best_of(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:55s} {tp:11.4f}")
            continue
        tc, outc = best_of(lambda: fn(_ckernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(outp) - np.asarray(outc))))
        print(f"{name:55s} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
