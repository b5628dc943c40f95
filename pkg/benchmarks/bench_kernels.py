"""Time the compiled kernel core against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from pqal import _backend

CASES = {
    "rbf_cross_gram 400x400 d=1": lambda r: (r.normal(size=(400, 1)), r.normal(size=(400, 1)), 0.7),
    "rbf_cross_gram 300x300 d=144": lambda r: (r.normal(size=(300, 144)), r.normal(size=(300, 144)), 12.0),
    "rbf_gram 500 d=2": lambda r: (r.normal(size=(500, 2)), 1.0),
    "delta_cross_gram 500x500": lambda r: (r.integers(0, 3, (500, 1)).astype(float),
                                           r.integers(0, 3, (500, 1)).astype(float)),
    "face_splitting 200 x (35, 35)": lambda r: (r.normal(size=(200, 35)), r.normal(size=(200, 35))),
    "khatri_rao_columnwise (35, 35) x 200": lambda r: (r.normal(size=(35, 200)), r.normal(size=(35, 200))),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = _backend.implementations()
    if "compiled" not in impls:
        print("compiled backend not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'case':<38}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, make in CASES.items():
        fn_name = label.split()[0]
        inputs = make(rng)
        times = {}
        for name, mod in impls.items():
            fn = getattr(mod, fn_name)
            prepared = tuple(np.ascontiguousarray(x) if isinstance(x, np.ndarray) else x for x in inputs)
            times[name] = min(timeit.repeat(lambda: fn(*prepared), number=1, repeat=args.repeat))
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{label:<38}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times.values()) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
