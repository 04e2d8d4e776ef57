#!/usr/bin/env python3
"""Benchmark the compiled path kernel against the pure-Python fallback.

Both backends are run on identical inputs; outputs are required to be
bit-identical before timings are reported.

Usage: python benchmarks/bench_kernels.py [--paths 2000] [--steps 1000]
"""

import argparse
import time

import numpy as np

import superproc as sp
from superproc import _kernels
from superproc._kernels import fallback
from superproc.sampler import _kernel_inputs, _stream


def run(kernel, m, mu0, dt, n_steps, n_paths, seed):
    ki = _kernel_inputs(m, sp.measure_vector(mu0, m.n))
    out = np.zeros((n_paths, m.n))
    bitgens = [_stream(seed, p) for p in range(n_paths)]
    t0 = time.perf_counter()
    kernel.simulate_chunk(
        ki["qT"], ki["beta"], ki["sig2"], ki["jump_comp"],
        ki["atom_off"], ki["atom_u"], ki["atom_w"], ki["x0"],
        dt, n_steps, 1e-12, bitgens, out, 0,
    )
    elapsed = time.perf_counter() - t0
    return out, elapsed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from superproc.checks import reference_model

    m, _ = reference_model("three_site")
    mu0 = [0.8, 0.5, 0.3]
    dt = 1e-3

    out_f, t_f = run(fallback, m, mu0, dt, args.steps, args.paths, args.seed)
    if _kernels.HAVE_COMPILED:
        out_c, t_c = run(_kernels.compiled, m, mu0, dt, args.steps, args.paths, args.seed)
        identical = np.array_equal(out_c, out_f)
        print(f"bit-identical outputs: {identical}")
        if not identical:
            raise SystemExit("backends disagree; benchmark aborted")
        rate_c = args.paths * args.steps / t_c
        rate_f = args.paths * args.steps / t_f
        print(f"compiled : {t_c:8.3f} s  ({rate_c:12.0f} path-steps/s)")
        print(f"fallback : {t_f:8.3f} s  ({rate_f:12.0f} path-steps/s)")
        print(f"speedup  : {t_f / t_c:8.1f} x")
    else:
        print("compiled kernel not built; fallback only")
        print(f"fallback : {t_f:8.3f} s ({args.paths * args.steps / t_f:12.0f} path-steps/s)")


if __name__ == "__main__":
    main()
