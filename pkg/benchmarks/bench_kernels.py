"""Time the banded nonlocal kernels: numba vs numpy, banded vs dense.

    python benchmarks/bench_kernels.py --nodes 2048 --tau-frac 0.05

Writes nothing; prints one line per (kernel, backend, band) combination.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qcollapse import _kernels
from qcollapse._operator import nonlocal_operator
from qcollapse.kernel import KernelSpec
from qcollapse.model import Couplings, ModeSpectrum, TimeGrid


def best_of(fn, repeats):
    fn()  # warm-up (numba compilation, caches)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2048)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--tau-frac", type=float, default=0.05, help="kernel tau as a fraction of the duration")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    spec = ModeSpectrum([1.0, -1.0], [1.0, -1.0], [0.0, 1.0], [0.0, 0.3])
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", args.tau_frac * args.duration))
    grid = TimeGrid(0.0, args.duration, args.nodes)
    rng = np.random.default_rng(args.seed)
    C = rng.normal(size=(args.nodes, spec.n_modes)) + 1j * rng.normal(size=(args.nodes, spec.n_modes))

    print(f"N={args.nodes} M={spec.n_modes} tau={cp.kernel.tau:g}")
    backends = ["numpy"] + (["numba"] if "numba" in _kernels._IMPLS else [])
    results = {}
    prev = _kernels.backend()
    try:
        for name in backends:
            _kernels.use_backend(name)
            for dense in (False, True):
                op = nonlocal_operator(spec, cp, grid, dense=dense)
                label = "dense" if dense else "banded"
                for kname, fn in (("c_tilde", lambda: op.c_tilde(C)), ("ri_sum", lambda: op.ri_sum(C))):
                    t = best_of(fn, args.repeats)
                    results[(kname, name, label)] = t
                    print(f"{kname:8s} {name:6s} {label:6s} band={op.band:5d} {t * 1e3:10.2f} ms")
    finally:
        _kernels.use_backend(prev)

    for name in backends:
        sp = results[("c_tilde", name, "dense")] / results[("c_tilde", name, "banded")]
        print(f"banded speedup ({name}): {sp:.1f}x")
    if len(backends) == 2:
        sp = results[("c_tilde", "numpy", "banded")] / results[("c_tilde", "numba", "banded")]
        print(f"numba over numpy (banded c_tilde): {sp:.1f}x")


if __name__ == "__main__":
    main()
