"""Compare the compiled and numpy quadrature kernels.

    python3 benchmarks/bench_kernels.py [--reps 3]

Prints one line per case: wall time of each backend, the speedup, and the
largest absolute difference between the two results.
"""
import argparse
import time

import numpy as np

from precoder_forge import _backend
from precoder_forge.channels import NoiseModel, builtin, random_gaussian
from precoder_forge.constellation import make_qam
from precoder_forge.gradients import mi_and_grad_a
from precoder_forge.mi import EffectiveChannel, mi_gh
from precoder_forge.quadrature import hermite_rule

CASES = [
    ("h1 M=4 L=3", builtin("h1"), 4, 3, 0.0),
    ("h1 M=16 L=3", builtin("h1"), 16, 3, 0.0),
    ("h1 M=16 L=5", builtin("h1"), 16, 5, 0.0),
    ("h2 M=32 L=3", builtin("h2"), 32, 3, 10.0),
    ("3x2 M=16 L=3", random_gaussian(3, 2, seed=1), 16, 3, 5.0),
]


def best_of(fn, reps):
    times, out = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()
    names = _backend.available()
    if "cython" not in names:
        print("compiled backend not built; only numpy available")
    print(f"{'case':16s} {'kind':5s} " + " ".join(f"{n:>10s}" for n in names) + "   speedup   max|diff|")
    for label, h, M, L, snr_db in CASES:
        c, rule = make_qam(M), hermite_rule(L)
        noise = NoiseModel.from_snr_db(snr_db)
        eff = EffectiveChannel.product(h)
        for kind in ("mi", "grad"):
            res = {}
            for name in names:
                if kind == "mi":
                    fn = lambda: mi_gh(eff, c, noise, rule, backend=name).bits
                else:
                    fn = lambda: mi_and_grad_a(eff, c, noise, rule, backend=name)[1]
                res[name] = best_of(fn, args.reps)
            times = [res[n][0] for n in names]
            speed = times[-1] / times[0] if len(names) > 1 else 1.0
            diff = float(np.max(np.abs(np.asarray(res[names[0]][1]) - np.asarray(res[names[-1]][1]))))
            print(f"{label:16s} {kind:5s} " + " ".join(f"{t:10.4f}" for t in times)
                  + f"   {speed:7.1f}x   {diff:.1e}")


if __name__ == "__main__":
    main()
