"""Time the compiled kernels against the numpy fallback.

Run from the repository root after an editable install::

    python benchmarks/bench_kernels.py [--repeat 20] [--nodes 48]

Both backends are imported side by side, so no environment switch is
needed.  Besides the timings, the script reports the largest relative
difference between the two backends on every input.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from blowup_lab import _kernels_py as pure
from blowup_lab.basis import make_grid
from blowup_lab.profile import Params, eval_phi

try:
    from blowup_lab import _kernels as compiled
except ImportError:
    compiled = None


def _inputs(nodes: int, seed: int = 0):
    grid = make_grid(nodes, 16)
    params = Params()
    y1, y2 = grid.mesh
    phi = eval_phi(y1, y2, params.s0, params)
    rng = np.random.default_rng(seed)
    # mix of tiny and O(1) perturbations so both branches of B are exercised
    q = phi * rng.uniform(-0.5, 0.5, phi.shape) * np.where(rng.random(phi.shape) < 0.5, 1e-4, 1.0)
    V = rng.standard_normal(phi.shape)
    R = 1e-3 * rng.standard_normal(phi.shape)
    x, w = grid.quad.nodes, grid.quad.weights
    return params.p, phi, q, V, R, x, w


def _cases(p, phi, q, V, R, x, w):
    return {
        "mehler_matrix": lambda m: m.mehler_matrix(x, x, w, 0.5),
        "nonlinear_b": lambda m: m.nonlinear_b(phi, q, p),
        "reaction": lambda m: m.reaction(phi, q, V, R, p),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--nodes", type=int, default=48)
    args = ap.parse_args(argv)

    cases = _cases(*_inputs(args.nodes))
    backends = [("python", pure)] + ([("cython", compiled)] if compiled is not None else [])
    if compiled is None:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':<15}" + "".join(f"{name + ' (ms)':>16}" for name, _ in backends) + f"{'speedup':>10}{'max rel diff':>15}")
    for name, fn in cases.items():
        times = []
        for _, mod in backends:
            fn(mod)  # warm up
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            times.append(1e3 * t)
        row = f"{name:<15}" + "".join(f"{t:>16.4f}" for t in times)
        if compiled is not None:
            a, b = np.asarray(fn(pure)), np.asarray(fn(compiled))
            diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
            row += f"{times[0] / times[1]:>10.2f}{diff:>15.2e}"
        print(row)


if __name__ == "__main__":
    main()
