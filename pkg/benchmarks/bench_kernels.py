"""Time the numba and numpy bilinear kernels on the shapes training uses.

    python benchmarks/bench_kernels.py [--repeat 20]

The search lookup samples every per-query cost slice at a handful of offsets;
the warp samples one image per pair at every pixel. Both directions (gather
for the forward pass, scatter for the backward pass) are timed.
"""
import argparse
import time

import numpy as np

from searchmorph import _accel, kernels

CASES = {
    # (B, C, H, W, points per batch item)
    "lookup level0 64x64 desk": (8 * 32 * 32, 1, 32, 32, 13),
    "lookup level3 64x64 desk": (8 * 32 * 32, 1, 4, 4, 13),
    "warp 64x64 batch 8": (8, 1, 64, 64, 64 * 64),
    "warp 192x160 mr": (1, 1, 192, 160, 192 * 160),
}


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def run(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, (b, c, h, w, p) in CASES.items():
        img = rng.random((b, c, h, w), dtype=np.float32)
        x = rng.uniform(-1, w, size=(b, p)).astype(np.float32)
        y = rng.uniform(-1, h, size=(b, p)).astype(np.float32)
        g = rng.random((b, c, p), dtype=np.float32)
        row = [name]
        for impl in ("numpy", "numba"):
            gather = getattr(kernels, f"bilinear_gather_{impl}")
            scatter = getattr(kernels, f"bilinear_scatter_{impl}")
            row.append(best_of(lambda: gather(img, x, y), repeat))
            row.append(best_of(lambda: scatter(g, img, x, y), repeat))
        rows.append(row)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not available (or SEARCHMORPH_NUMBA=0); nothing to compare")
    print(f"{'case':28s} {'np gather':>10s} {'np scatter':>11s} {'nb gather':>10s} "
          f"{'nb scatter':>11s} {'speedup':>8s}")
    for name, npg, nps, nbg, nbs in run(args.repeat):
        speed = (npg + nps) / (nbg + nbs)
        print(f"{name:28s} {npg * 1e3:9.2f}ms {nps * 1e3:10.2f}ms {nbg * 1e3:9.2f}ms "
              f"{nbs * 1e3:10.2f}ms {speed:7.1f}x")


if __name__ == "__main__":
    main()
