"""Compiled versus pure-Python kernel timings.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N] [--nodes N]``.
Prints the best-of-N wall time of each kernel per backend and the speed-up.
"""

from __future__ import annotations

import argparse
import sys
import timeit
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from ncdmm import _kernels_py  # noqa: E402
from test_kernels import flux_inputs, run_flux, stencil_inputs  # noqa: E402

try:
    from ncdmm import _kernels as _compiled
except ImportError:
    _compiled = None


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--nodes", type=int, default=6000, help="stencil count and node count for the flux kernel")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    sargs = stencil_inputs(rng, n_centres=args.nodes)
    pi, pj, fargs, size = flux_inputs(rng, n=args.nodes, npair=4 * args.nodes)
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    print(f"{'kernel':<14}{'backend':<9}{'seconds':>12}")
    results = {}
    for name, mod in backends:
        results["stencil_batch", name] = best(lambda: mod.stencil_batch(*sargs), args.repeat)
        results["pair_flux", name] = best(lambda: run_flux(mod, pi, pj, fargs, size), args.repeat)
    for (kernel, name), t in results.items():
        print(f"{kernel:<14}{name:<9}{t:12.6f}")
    if _compiled is None:
        print("compiled extension not available; only the fallback was timed")
        return 0
    for kernel in ("stencil_batch", "pair_flux"):
        print(f"speed-up {kernel}: {results[kernel, 'python'] / results[kernel, 'cython']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
