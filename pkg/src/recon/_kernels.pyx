# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: ray casting, swept-disc contact, grid A*, disc coverage.

Mirrors ``recon._kernels_py`` exactly; see that module for the reference semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, floor, ceil, fabs, INFINITY, M_PI
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair

cnp.import_array()

cdef double SQRT2 = sqrt(2.0)


def raycast(double x, double y, double theta, int n_rays, double max_range,
            const double[:, ::1] obstacles, bounds):
    cdef double xmin = bounds[0], ymin = bounds[1], xmax = bounds[2], ymax = bounds[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_rays, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t k, j, m = obstacles.shape[0]
    cdef double ang, dx, dy, best, t, fx, fy, cc, b, disc
    for k in range(n_rays):
        ang = theta + 2.0 * M_PI * k / n_rays
        dx = cos(ang)
        dy = sin(ang)
        best = max_range
        if dx > 0:
            t = (xmax - x) / dx
            if t < best:
                best = t
        elif dx < 0:
            t = (xmin - x) / dx
            if t < best:
                best = t
        if dy > 0:
            t = (ymax - y) / dy
            if t < best:
                best = t
        elif dy < 0:
            t = (ymin - y) / dy
            if t < best:
                best = t
        if best < 0:
            best = 0.0
        for j in range(m):
            fx = x - obstacles[j, 0]
            fy = y - obstacles[j, 1]
            cc = fx * fx + fy * fy - obstacles[j, 2] * obstacles[j, 2]
            if cc <= 0:
                best = 0.0
                continue
            b = dx * fx + dy * fy
            disc = b * b - cc
            if disc < 0:
                continue
            t = -b - sqrt(disc)
            if t >= 0 and t < best:
                best = t
        o[k] = best
    return out


def sweep(double x0, double y0, double x1, double y1, double radius,
          const double[:, ::1] obstacles, bounds):
    cdef double xmin = bounds[0], ymin = bounds[1], xmax = bounds[2], ymax = bounds[3]
    cdef double dx = x1 - x0, dy = y1 - y0, s = 1.0, a, fx, fy, rr, cc, b, disc, s1
    cdef Py_ssize_t j, m = obstacles.shape[0]
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
        for j in range(m):
            fx = x0 - obstacles[j, 0]
            fy = y0 - obstacles[j, 1]
            rr = obstacles[j, 2] + radius
            cc = fx * fx + fy * fy - rr * rr
            b = 2.0 * (fx * dx + fy * dy)
            if cc <= 0:
                if b < 0:
                    s = 0.0
                continue
            disc = b * b - 4.0 * a * cc
            if disc < 0:
                continue
            s1 = (-b - sqrt(disc)) / (2.0 * a)
            if s1 >= 0.0 and s1 < s:
                s = s1
    return s if s > 0.0 else 0.0


cdef inline double _octile(Py_ssize_t iy, Py_ssize_t ix, Py_ssize_t gy, Py_ssize_t gx):
    cdef double ddx = fabs(<double>(ix - gx)), ddy = fabs(<double>(iy - gy))
    if ddx < ddy:
        return (SQRT2 - 1.0) * ddx + ddy
    return (SQRT2 - 1.0) * ddy + ddx


def grid_astar(const cnp.uint8_t[:, ::1] free, Py_ssize_t sy, Py_ssize_t sx,
               Py_ssize_t gy, Py_ssize_t gx):
    cdef Py_ssize_t ny = free.shape[0], nx = free.shape[1]
    if not (free[sy, sx] and free[gy, gx]):
        return INFINITY, np.zeros((0, 2), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_arr = np.full(ny * nx, INFINITY)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] par_arr = np.full(ny * nx, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] closed_arr = np.zeros(ny * nx, dtype=np.uint8)
    cdef double[::1] g = g_arr
    cdef cnp.int64_t[::1] parent = par_arr
    cdef cnp.uint8_t[::1] closed = closed_arr
    cdef priority_queue[pair[double, Py_ssize_t]] heap
    cdef Py_ssize_t start = sy * nx + sx, goal = gy * nx + gx
    cdef Py_ssize_t u, v, uy, ux, vy, vx, k
    cdef double gu, ng, c
    cdef int[8] dys = [-1, -1, -1, 0, 0, 1, 1, 1]
    cdef int[8] dxs = [-1, 0, 1, -1, 1, -1, 0, 1]
    g[start] = 0.0
    # max-heap on (-f, -cell): equal f pops the lowest cell index, like heapq
    heap.push(pair[double, Py_ssize_t](-_octile(sy, sx, gy, gx), -start))
    while not heap.empty():
        u = -heap.top().second
        heap.pop()
        if closed[u]:
            continue
        if u == goal:
            break
        closed[u] = 1
        uy = u // nx
        ux = u - uy * nx
        gu = g[u]
        for k in range(8):
            vy = uy + dys[k]
            vx = ux + dxs[k]
            if vy < 0 or vy >= ny or vx < 0 or vx >= nx or not free[vy, vx]:
                continue
            if dys[k] != 0 and dxs[k] != 0:
                if not (free[uy, vx] and free[vy, ux]):
                    continue
                c = SQRT2
            else:
                c = 1.0
            v = vy * nx + vx
            ng = gu + c
            if ng < g[v]:
                g[v] = ng
                parent[v] = u
                heap.push(pair[double, Py_ssize_t](-(ng + _octile(vy, vx, gy, gx)), -v))
    if g[goal] == INFINITY:
        return INFINITY, np.zeros((0, 2), dtype=np.int64)
    cdef list path = []
    u = goal
    while u != -1:
        path.append((u // nx, u % nx))
        u = parent[u]
    path.reverse()
    return g[goal], np.array(path, dtype=np.int64)


def cover_trace(const double[::1] px, const double[::1] py, double radius, double x0,
                double y0, double cell, const cnp.uint8_t[:, ::1] free):
    cdef Py_ssize_t ny = free.shape[0], nx = free.shape[1], n = px.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] seen_arr = np.zeros((ny, nx), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] seen = seen_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef cnp.int64_t total = 0
    cdef Py_ssize_t i, ix, iy, ix0, ix1, iy0, iy1
    cdef Py_ssize_t ri = <Py_ssize_t>ceil(radius / cell) + 1
    cdef double cx, cy, gx, gy, r2 = radius * radius
    for i in range(n):
        cx = (px[i] - x0) / cell - 0.5
        cy = (py[i] - y0) / cell - 0.5
        ix0 = max(<Py_ssize_t>floor(cx) - ri, 0)
        ix1 = min(<Py_ssize_t>ceil(cx) + ri, nx - 1)
        iy0 = max(<Py_ssize_t>floor(cy) - ri, 0)
        iy1 = min(<Py_ssize_t>ceil(cy) + ri, ny - 1)
        for iy in range(iy0, iy1 + 1):
            gy = y0 + (iy + 0.5) * cell
            for ix in range(ix0, ix1 + 1):
                if seen[iy, ix] or not free[iy, ix]:
                    continue
                gx = x0 + (ix + 0.5) * cell
                if (gx - px[i]) * (gx - px[i]) + (gy - py[i]) * (gy - py[i]) <= r2:
                    seen[iy, ix] = 1
                    total += 1
        out[i] = total
    return out_arr
