"""Compare the numba kernels with the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--rows 2000] [--n 10000] [--repeat 3]

Both backends are called in the same process through the ``backend``
argument; the POWERTAIL_NO_NUMBA environment flag selects the default for
library code. Outputs are also checked for agreement.
"""

import argparse
import time

import numpy as np

from powertail import _kernels as K
from powertail.distributions import ParetoTail, SymmetricPowerLaw, UEnvelope
from powertail.orderstats import EnvelopeParams, orderstat_envelope


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rows, n = args.rows, args.n
    key = 0x5EED

    cases = []
    for name, model in (("symmetric_power_law(4)", SymmetricPowerLaw(4)), ("u_envelope(4)", UEnvelope(4))):
        layout = K.SumLayout([model] * n, np.full(n, n**-0.5))
        cases.append((f"linear_sum {name}", rows * n,
                      lambda b, lay=layout: K.linear_sum(key, 0, rows, lay, backend=b)))
    par = ParetoTail(3)
    cases.append(("top_sums pareto(3) k=16", rows * n,
                  lambda b: K.top_sums(key, 0, rows, n, *par.kernel_spec(), 16, backend=b)[1]))
    env = orderstat_envelope(EnvelopeParams(1000, 3.0)).combined
    limits = np.where(env >= 1.0, np.inf, -np.log1p(-np.minimum(env, 1.0)))
    cases.append(("renyi_violations n=1000", 50 * rows * 1000,
                  lambda b: K.renyi_violations(key, 0, 50 * rows, limits, backend=b)))

    if K.HAVE_NUMBA:
        for _, _, fn in cases:  # compile outside the timed region
            fn("numba")
    print(f"{'kernel':34s} {'backend':>7s} {'seconds':>9s} {'ns/draw':>9s}")
    for label, draws, fn in cases:
        outs = {}
        for backend in (("numba", "numpy") if K.HAVE_NUMBA else ("numpy",)):
            secs, outs[backend] = best_of(lambda: fn(backend), args.repeat)
            print(f"{label:34s} {backend:>7s} {secs:9.3f} {1e9 * secs / draws:9.2f}")
        if len(outs) == 2:
            a, b = outs["numba"], outs["numpy"]
            same = np.array_equal(a, b) if a.dtype == bool else np.allclose(a, b, rtol=1e-10, atol=1e-12)
            print(f"{'':34s} backends agree: {same}")


if __name__ == "__main__":
    main()
