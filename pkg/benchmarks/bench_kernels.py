"""Time the numba kernels against their pure-numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--batch 125] [--depth 16] [--width 4] [--repeat 5]

The numba path is warmed up once before timing so compilation is excluded.
Both paths are checked for agreement before any timing is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hdnn._accel import HAVE_NUMBA
from hdnn.backprop import bsm_trace, loss_and_grads
from hdnn.continuum import planar_flow
from hdnn.layers import init_network, run_forward


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=125)
    ap.add_argument("--depth", type=int, default=16)
    ap.add_argument("--width", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 0

    rng = np.random.default_rng(0)
    Y0 = rng.normal(size=(args.batch, args.width))
    labels = rng.integers(0, 2, size=args.batch)
    cases = []
    for arch in ("H1", "H2", "MS1", "MLP"):
        net = init_network(arch, args.width, args.depth, rng=1)
        tr = run_forward(net, Y0)
        cases += [
            (f"{arch} forward", lambda u, net=net: run_forward(net, Y0, use_numba=u).Ys[-1]),
            (f"{arch} loss+grads", lambda u, net=net: loss_and_grads(net, Y0, labels, use_numba=u)[1].flat()),
            (f"{arch} bsm", lambda u, net=net, tr=tr: bsm_trace(net, tr, use_numba=u).matrices),
        ]
    P = rng.normal(size=(256, 2))
    d = rng.uniform(5.0, 20.0, size=256)
    cases.append(("planar flow x256", lambda u: planar_flow(P, d, step=1e-2, use_numba=u)))

    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, fn in cases:
        a, b = fn(False), fn(True)  # warm-up, also compiles
        if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy paths disagree")
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
