"""Time the compiled geometry kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the mean time per call for each backend and
the speedup. Both backends are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from recon import _kernels_py
from recon.simworld import make_world

try:
    from recon import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(world):
    obs = world.obstacles
    b = np.array(world.bounds, dtype=np.float64)
    grid = world.nav_grid
    ev = world.eval_grid
    free = np.argwhere(grid.free)
    sy, sx = free[0]
    gy, gx = free[-1]
    rng = np.random.default_rng(0)
    px = rng.uniform(1, world.width - 1, 600).cumsum() % (world.width - 2) + 1
    py = rng.uniform(1, world.height - 1, 600).cumsum() % (world.height - 2) + 1
    return {
        "raycast": lambda k: k.raycast(5.0, 5.0, 0.3, 32, 10.0, obs, b),
        "sweep": lambda k: k.sweep(5.0, 5.0, 5.4, 5.2, 0.25, obs, b),
        "grid_astar": lambda k: k.grid_astar(grid.free, int(sy), int(sx), int(gy), int(gx)),
        "cover_trace": lambda k: k.cover_trace(px, py, 2.0, ev.x0, ev.y0, ev.cell, ev.free),
    }


def agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-9, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    world = make_world(seed=100, size=(20.0, 20.0), n_obstacles=12)
    if _kernels is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':<12} {'python':>12} {'cython':>12} {'speedup':>8}")
    for name, fn in cases(world).items():
        n = 3 if name in ("grid_astar", "cover_trace") else 200
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=n, repeat=args.repeat)) / n
        if _kernels is None:
            print(f"{name:<12} {t_py * 1e6:10.1f}us {'-':>12} {'-':>8}")
            continue
        a, b = fn(_kernels_py), fn(_kernels)
        if name == "grid_astar":  # equal-cost paths may break ties differently
            a, b = a[0], b[0]
        if not agree(a, b):
            raise SystemExit(f"{name}: backends disagree")
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=n, repeat=args.repeat)) / n
        print(f"{name:<12} {t_py * 1e6:10.1f}us {t_cy * 1e6:10.1f}us {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
