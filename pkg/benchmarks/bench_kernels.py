"""Time the layer kernels across the importable backends.

Workloads match the stock 16x16 model, so the numbers reflect what a
training step actually spends. The reference backend runs the same
cases only under --reference; it exists for oracle checks, not speed,
and a full-size case takes it minutes.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --reference
"""

import argparse
import time

import numpy as np

from gridcast.kernels import backends


def _cases(rng, scale):
    grid = max(4, int(16 * scale))
    ch = max(2, int(32 * scale))
    lc_out = max(1, ch // 2)
    hidden = max(8, int(256 * scale))

    x3 = rng.standard_normal((grid, grid, 18, ch))
    w3 = rng.standard_normal((3, 3, 5, ch, ch)) * 0.05
    x2 = rng.standard_normal((grid, grid, ch))
    w2 = rng.standard_normal((3, 3, ch, ch)) * 0.05
    wl = rng.standard_normal((grid, grid, 3, 3, ch, lc_out)) * 0.05
    xd = rng.standard_normal(grid * grid * ch)
    wd = rng.standard_normal((grid * grid * ch, hidden)) * 0.01

    return [
        ("conv3d", x3, w3, rng.standard_normal(ch) * 0.1, True),
        ("conv2d", x2, w2, rng.standard_normal(ch) * 0.1, True),
        ("lc2d", x2, wl, rng.standard_normal((grid, grid, lc_out)) * 0.1, True),
        ("dense", xd, wd, rng.standard_normal(hidden) * 0.1, False),
    ]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best * 1000.0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timed repeats per case; best is reported")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="shrink or grow the workload shapes")
    parser.add_argument("--reference", action="store_true",
                        help="also time the loop-level reference backend")
    args = parser.parse_args()

    available = backends()
    if not args.reference:
        available.pop("reference", None)
    rng = np.random.default_rng(42)
    cases = _cases(rng, args.scale)

    timings = {}
    print(f"{'op':8} {'backend':10} {'forward ms':>11} {'backward ms':>12}")
    for op, x, w, b, relu in cases:
        outputs = {}
        for name, impl in available.items():
            forward = getattr(impl, f"{op}_forward")
            backward = getattr(impl, f"{op}_backward")
            out = forward(x, w, b, relu)
            outputs[name] = out
            probe = np.ones_like(out)
            t_fwd = _time(lambda: forward(x, w, b, relu), args.repeats)
            t_bwd = _time(lambda: backward(x, w, out, probe, relu),
                          args.repeats)
            timings[(op, name)] = (t_fwd, t_bwd)
            print(f"{op:8} {name:10} {t_fwd:11.2f} {t_bwd:12.2f}")
        # the backends must agree before their times mean anything
        baseline = outputs["numpy"]
        for name, out in outputs.items():
            gap = float(np.max(np.abs(out - baseline)))
            if gap > 1e-10:
                raise SystemExit(f"{op}: {name} disagrees with numpy "
                                 f"by {gap:.3e}")

    if "cython" in available:
        print()
        for op, *_ in cases:
            nf, nb = timings[(op, "numpy")]
            cf, cb = timings[(op, "cython")]
            print(f"{op}: cython vs numpy "
                  f"{nf / cf:.1f}x forward, {nb / cb:.1f}x backward")


if __name__ == "__main__":
    main()
