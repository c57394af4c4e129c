"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported from the same module, so one process compares
them regardless of ``DDRF_DISABLE_NUMBA``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ddrf import _accel


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (compilation on first numba call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # (label, numpy fn, numba fn)
    b, c, h, k = 16, 80, 32, 3
    xp = rng.random((b, c, h + 2, h + 2))
    cols = _accel.im2col_numpy(xp, k, 1, h, h)
    img = rng.random((400 + 14, 400 + 14))
    ker = rng.random((15, 15))
    yield ("im2col 16x80x32x32 k3", lambda: _accel.im2col_numpy(xp, k, 1, h, h),
           lambda: _accel.im2col_numba(xp, k, 1, h, h))
    yield ("col2im 16x80x32x32 k3", lambda: _accel.col2im_numpy(cols, c, h + 2, h + 2, k, 1, h, h),
           lambda: _accel.col2im_numba(cols, c, h + 2, h + 2, k, 1, h, h))
    yield ("correlate 400x400 k15", lambda: _accel.correlate_valid_numpy(img, ker),
           lambda: _accel.correlate_valid_numba(img, ker))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba unavailable (or disabled); nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max diff':>11}")
    for label, f_np, f_nb in cases(rng):
        diff = float(np.max(np.abs(f_np() - f_nb())))
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{label:<26}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x{diff:>11.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
