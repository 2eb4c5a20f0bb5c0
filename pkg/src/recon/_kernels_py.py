"""Pure-Python/numpy versions of the geometry kernels.

Signatures and results match the compiled ``_kernels`` extension; this module
is used whenever the extension is not built (or ``RECON_PURE_PYTHON=1``).
"""
import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def raycast(x, y, theta, n_rays, max_range, obstacles, bounds):
    """Hit distance (clipped to ``max_range``) along ``n_rays`` evenly spaced bearings."""
    k = np.arange(n_rays)
    ang = theta + 2.0 * math.pi * k / n_rays
    dx = np.cos(ang)
    dy = np.sin(ang)
    xmin, ymin, xmax, ymax = bounds
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (xmax - x) / dx, np.where(dx < 0, (xmin - x) / dx, np.inf))
        ty = np.where(dy > 0, (ymax - y) / dy, np.where(dy < 0, (ymin - y) / dy, np.inf))
    best = np.minimum(np.minimum(tx, ty), max_range)
    best = np.maximum(best, 0.0)
    if len(obstacles):
        fx = x - obstacles[:, 0]
        fy = y - obstacles[:, 1]
        cc = fx * fx + fy * fy - obstacles[:, 2] ** 2  # (M,)
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]  # (K, M)
        disc = b * b - cc[None, :]
        with np.errstate(invalid="ignore"):
            t = -b - np.sqrt(disc)
        hit = (disc >= 0) & (t >= 0)
        t = np.where(hit, t, np.inf)
        t = np.where(cc[None, :] <= 0, 0.0, t)
        best = np.minimum(best, t.min(axis=1))
    return best


def sweep(x0, y0, x1, y1, radius, obstacles, bounds):
    """Largest fraction of the move x0,y0 -> x1,y1 a disc can travel before contact."""
    dx = x1 - x0
    dy = y1 - y0
    s = 1.0
    xmin, ymin, xmax, ymax = bounds
    if dx > 0:
        s = min(s, (xmax - radius - x0) / dx)
    elif dx < 0:
        s = min(s, (xmin + radius - x0) / dx)
    if dy > 0:
        s = min(s, (ymax - radius - y0) / dy)
    elif dy < 0:
        s = min(s, (ymin + radius - y0) / dy)
    a = dx * dx + dy * dy
    if a > 0:
        for cx, cy, cr in obstacles:
            fx = x0 - cx
            fy = y0 - cy
            rr = cr + radius
            cc = fx * fx + fy * fy - rr * rr
            b = 2.0 * (fx * dx + fy * dy)
            if cc <= 0:
                if b < 0:
                    s = 0.0
                continue
            disc = b * b - 4.0 * a * cc
            if disc < 0:
                continue
            s1 = (-b - math.sqrt(disc)) / (2.0 * a)
            if 0.0 <= s1 < s:
                s = s1
    return max(s, 0.0)


def grid_astar(free, sy, sx, gy, gx):
    """8-connected A* over a boolean grid; returns (cost in cells, path as (n, 2) int array)."""
    ny, nx = free.shape
    if not (free[sy, sx] and free[gy, gx]):
        return math.inf, np.zeros((0, 2), dtype=np.int64)

    def h(iy, ix):
        ddx = abs(ix - gx)
        ddy = abs(iy - gy)
        return (SQRT2 - 1.0) * min(ddx, ddy) + max(ddx, ddy)

    start = sy * nx + sx
    goal = gy * nx + gx
    g = {start: 0.0}
    parent = {start: -1}
    closed = set()
    heap = [(h(sy, sx), start)]
    steps = ((-1, -1, SQRT2), (-1, 0, 1.0), (-1, 1, SQRT2), (0, -1, 1.0),
             (0, 1, 1.0), (1, -1, SQRT2), (1, 0, 1.0), (1, 1, SQRT2))
    while heap:
        _, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == goal:
            break
        closed.add(u)
        uy, ux = divmod(u, nx)
        gu = g[u]
        for ddy, ddx, c in steps:
            vy = uy + ddy
            vx = ux + ddx
            if vy < 0 or vy >= ny or vx < 0 or vx >= nx or not free[vy, vx]:
                continue
            # no corner cutting on diagonals
            if ddy and ddx and not (free[uy, vx] and free[vy, ux]):
                continue
            v = vy * nx + vx
            ng = gu + c
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                heapq.heappush(heap, (ng + h(vy, vx), v))
    if goal not in g:
        return math.inf, np.zeros((0, 2), dtype=np.int64)
    path = []
    u = goal
    while u != -1:
        path.append(divmod(u, nx))
        u = parent[u]
    return g[goal], np.array(path[::-1], dtype=np.int64)


def cover_trace(px, py, radius, x0, y0, cell, free):
    """Cumulative count of free cells within ``radius`` of any pose so far, per pose."""
    ny, nx = free.shape
    seen = np.zeros((ny, nx), dtype=bool)
    out = np.zeros(len(px), dtype=np.int64)
    total = 0
    ri = int(math.ceil(radius / cell)) + 1
    for i in range(len(px)):
        cx = (px[i] - x0) / cell - 0.5
        cy = (py[i] - y0) / cell - 0.5
        ix0 = max(int(math.floor(cx)) - ri, 0)
        ix1 = min(int(math.ceil(cx)) + ri, nx - 1)
        iy0 = max(int(math.floor(cy)) - ri, 0)
        iy1 = min(int(math.ceil(cy)) + ri, ny - 1)
        if ix0 <= ix1 and iy0 <= iy1:
            ys = np.arange(iy0, iy1 + 1)
            xs = np.arange(ix0, ix1 + 1)
            gx = x0 + (xs + 0.5) * cell
            gy = y0 + (ys + 0.5) * cell
            inside = ((gx[None, :] - px[i]) ** 2 + (gy[:, None] - py[i]) ** 2) <= radius * radius
            block = seen[iy0:iy1 + 1, ix0:ix1 + 1]
            new = inside & ~block & free[iy0:iy1 + 1, ix0:ix1 + 1].astype(bool)
            total += int(new.sum())
            block |= new
        out[i] = total
    return out
