"""Time the LSTM sequence kernels: compiled extension vs numpy fallback.

Runs the forward and forward+backward recurrences on a few realistic shapes
(T steps, B batch rows, H hidden units) and prints per-call milliseconds for
each backend plus the speedup.  Usage:

    python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from lstn.kernels import pure

try:
    from lstn.kernels import _core as compiled
except ImportError:
    compiled = None

SHAPES = [
    (8, 1, 32),    # single utterance encode
    (20, 8, 32),   # typical decode scoring batch
    (40, 64, 64),  # beam expansion at K*beam rows
]


def _inputs(T, B, H, rng):
    xproj = rng.standard_normal((T, 4 * H))
    h0 = rng.standard_normal((B, H))
    c0 = np.zeros((B, H))
    Wh = rng.standard_normal((H, 4 * H)) * 0.1
    b = np.zeros(4 * H)
    return xproj, h0, c0, Wh, b


def _time(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def bench(repeats: int):
    rng = np.random.default_rng(0)
    backends = [("python", pure)] + ([("compiled", compiled)] if compiled else [])
    print(f"{'shape (T,B,H)':>16}  {'pass':>8}  "
          + "  ".join(f"{name:>10}" for name, _ in backends)
          + ("  speedup" if compiled else ""))
    for T, B, H in SHAPES:
        xproj, h0, c0, Wh, b = _inputs(T, B, H, rng)
        for label in ("fwd", "fwd+bwd"):
            times = []
            for _, mod in backends:
                if label == "fwd":
                    fn = lambda m=mod: m.lstm_seq_forward(xproj, h0, c0, Wh, b)
                else:
                    hs, cs, gates = mod.lstm_seq_forward(xproj, h0, c0, Wh, b)
                    dhs = np.ones_like(hs)
                    dc_last = np.zeros_like(c0)
                    fn = lambda m=mod: m.lstm_seq_backward(
                        dhs, dc_last, h0, c0, Wh, hs, cs, gates)
                times.append(_time(fn, repeats))
            row = f"{f'({T},{B},{H})':>16}  {label:>8}  "
            row += "  ".join(f"{t:8.3f}ms" for t in times)
            if compiled:
                row += f"  {times[0] / times[1]:6.2f}x"
            print(row)
    if compiled is None:
        print("\ncompiled extension not available; showing python backend only")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    bench(args.repeats)


if __name__ == "__main__":
    main()
