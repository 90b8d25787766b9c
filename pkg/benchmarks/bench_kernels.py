"""Compare the compiled and numpy kernel backends.

Usage: ``python3 benchmarks/bench_kernels.py [--devices 20] [--coords 300000]``.
Both backends are run on identical inputs; their outputs are checked to
agree before timings are reported.
"""

import argparse
import timeit

import numpy as np

from bayesfl import kernels


KINDS = {"tanh": kernels.TANH, "sign": kernels.SIGN, "linear": kernels.LINEAR}


def bench(K, L, M, repeat, seed):
    rng = np.random.default_rng(seed)
    received = rng.standard_normal((K, L))
    offset = rng.standard_normal(K)
    scale = rng.uniform(0.5, 2.0, K)
    gain = rng.uniform(0.1, 3.0, K)
    truth = rng.standard_normal(L)
    estimate = rng.standard_normal(L)

    def separable(kind):
        kinds = np.full(K, kind, dtype=np.int8)
        return lambda b: kernels.separable_sum(received, offset, scale, gain, kinds, backend=b)

    cases = {f"sum[{name}]": separable(kind) for name, kind in KINDS.items()}
    cases["row_sq_error"] = lambda b: kernels.row_sq_error(estimate, truth, M, backend=b)
    rows = []
    for name, fn in cases.items():
        outputs = {b: fn(b) for b in kernels.available_backends()}
        if len(outputs) == 2:
            np.testing.assert_allclose(outputs["cython"], outputs["python"], rtol=1e-12, atol=1e-12)
        times = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=repeat))
                 for b in outputs}
        rows.append((name, times))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--devices", type=int, default=20)
    parser.add_argument("--coords", type=int, default=300_000)
    parser.add_argument("--width", type=int, default=300, help="row width for row_sq_error")
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}; K={args.devices}, L={args.coords}")
    print(f"{'kernel':<15}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, times in bench(args.devices, args.coords, args.width, args.repeat, args.seed):
        c, p = times.get("cython"), times["python"]
        cs = f"{1e3 * c:12.2f}" if c is not None else f"{'n/a':>12}"
        sp = f"{p / c:10.2f}" if c is not None else f"{'n/a':>10}"
        print(f"{name:<15}{cs}{1e3 * p:12.2f}{sp}")


if __name__ == "__main__":
    main()
