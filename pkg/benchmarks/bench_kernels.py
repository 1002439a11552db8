"""Compiled vs pure-Python Dormand-Prince kernel on the full system.

    python3 benchmarks/bench_kernels.py [--t-end 2000] [--repeat 3]

Both backends integrate the same initial condition with the same
tolerances; the script reports wall time per run, the speed-up and the
largest state difference at the shared end time.
"""

import argparse
import time

import numpy as np

from mlgspt import _kernel_py
from mlgspt.integrate import _param_vector
from mlgspt.mmo import canonical_ic
from mlgspt.model import ParamSet

try:
    from mlgspt import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def run(kernel, y0, t_end, p):
    return kernel.run_full(list(y0), 0.0, t_end, _param_vector(p), 1e-9, 1e-9, 0.0, 2.0, 1e-12,
                           50_000_000, True, -1, 0.0, 0, False, -1, 0)


def bench(kernel, y0, t_end, p, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = run(kernel, y0, t_end, p)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=2000.0, help="horizon in ms")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--gsyn", type=float, default=4.3)
    a = ap.parse_args()
    p = ParamSet(g_syn=a.gsyn)
    y0 = canonical_ic(p)
    tp, outp = bench(_kernel_py, y0, a.t_end, p, a.repeat)
    print(f"python   : {tp:8.3f} s  steps={len(outp[0])}")
    if _kernel_c is None:
        print("compiled : not built")
        return
    tc, outc = bench(_kernel_c, y0, a.t_end, p, a.repeat)
    print(f"compiled : {tc:8.4f} s  steps={len(outc[0])}")
    print(f"speed-up : {tp / tc:8.1f}x")
    print(f"max |y_end difference| : {np.max(np.abs(np.asarray(outp[1])[-1] - np.asarray(outc[1])[-1])):.3e}")


if __name__ == "__main__":
    main()
