# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pixel kernels. Same API and accumulation order as ``_pykernels``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"

cdef double _EDT_INF = 1e20


cdef inline Py_ssize_t _reflect101(Py_ssize_t i, Py_ssize_t n) nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * n - 2
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


def correlate2d(plane, kernel):
    cdef const double[:, :] src = np.ascontiguousarray(plane, dtype=np.float64)
    cdef const double[:, :] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ry = kh // 2, rx = kw // 2
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t[:] rows = np.empty(h + 2 * ry, dtype=np.intp)
    cdef Py_ssize_t[:] cols = np.empty(w + 2 * rx, dtype=np.intp)
    cdef Py_ssize_t y, x, ky, kx
    cdef double acc
    for y in range(h + 2 * ry):
        rows[y] = _reflect101(y - ry, h)
    for x in range(w + 2 * rx):
        cols[x] = _reflect101(x - rx, w)
    with nogil:
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for ky in range(kh):
                    for kx in range(kw):
                        acc = acc + k[ky, kx] * src[rows[y + ky], cols[x + kx]]
                out[y, x] = acc
    return out_arr


def nonmax_suppress(mag, bins):
    cdef const double[:, :] m = np.ascontiguousarray(mag, dtype=np.float64)
    cdef const signed char[:, :] b = np.ascontiguousarray(bins, dtype=np.int8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t y, x, dy, dx, yb, xb, ya, xa
    cdef double v, before, after
    with nogil:
        for y in range(h):
            for x in range(w):
                v = m[y, x]
                if v <= 0:
                    continue
                if b[y, x] == 0:
                    dy = 0
                    dx = -1
                elif b[y, x] == 1:
                    dy = -1
                    dx = -1
                elif b[y, x] == 2:
                    dy = -1
                    dx = 0
                else:
                    dy = -1
                    dx = 1
                yb = y + dy
                xb = x + dx
                ya = y - dy
                xa = x - dx
                before = m[yb, xb] if (0 <= yb < h and 0 <= xb < w) else 0.0
                after = m[ya, xa] if (0 <= ya < h and 0 <= xa < w) else 0.0
                if v > before and v >= after:
                    out[y, x] = v
    return out_arr


def hysteresis(nms, double low, double high):
    cdef const double[:, :] m = np.ascontiguousarray(nms, dtype=np.float64)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, :] out = out_arr
    stack_arr = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t[:] stack = stack_arr
    cdef Py_ssize_t top = 0, y, x, yy, xx, dy, dx, p
    with nogil:
        for y in range(h):
            for x in range(w):
                if m[y, x] > high:
                    out[y, x] = 1
                    stack[top] = y * w + x
                    top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            y = p // w
            x = p - y * w
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    yy = y + dy
                    xx = x + dx
                    if 0 <= yy < h and 0 <= xx < w and out[yy, xx] == 0 and m[yy, xx] > low:
                        out[yy, xx] = 1
                        stack[top] = yy * w + xx
                        top += 1
    return out_arr


def glcm_counts(levels, Py_ssize_t dy, Py_ssize_t dx, Py_ssize_t n_levels):
    cdef const long long[:, :] q = np.ascontiguousarray(levels, dtype=np.int64)
    cdef Py_ssize_t h = q.shape[0], w = q.shape[1]
    counts_arr = np.zeros((n_levels, n_levels), dtype=np.int64)
    cdef long long[:, :] counts = counts_arr
    cdef Py_ssize_t y0 = max(0, -dy), y1 = min(h, h - dy)
    cdef Py_ssize_t x0 = max(0, -dx), x1 = min(w, w - dx)
    cdef Py_ssize_t y, x
    with nogil:
        for y in range(y0, y1):
            for x in range(x0, x1):
                counts[q[y, x], q[y + dy, x + dx]] += 1
    return counts_arr


cdef void _edt_1d(double* f, Py_ssize_t n, double* d, Py_ssize_t* v, double* z) noexcept nogil:
    cdef Py_ssize_t k = 0, q, p
    cdef double s
    v[0] = 0
    z[0] = -INFINITY
    z[1] = INFINITY
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + <double>(q * q)) - (f[p] + <double>(p * p))) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = <double>((q - p) * (q - p)) + f[p]


def edt_squared(features):
    feat = np.asarray(features)
    cdef Py_ssize_t h = feat.shape[0], w = feat.shape[1]
    grid_arr = np.where(feat != 0, 0.0, _EDT_INF)
    cdef double[:, :] grid = grid_arr
    cdef Py_ssize_t n = max(h, w)
    cdef double[:] f = np.empty(n, dtype=np.float64)
    cdef double[:] d = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[:] v = np.empty(n, dtype=np.intp)
    cdef double[:] z = np.empty(n + 1, dtype=np.float64)
    cdef Py_ssize_t x, y
    with nogil:
        for x in range(w):
            for y in range(h):
                f[y] = grid[y, x]
            _edt_1d(&f[0], h, &d[0], &v[0], &z[0])
            for y in range(h):
                grid[y, x] = d[y]
        for y in range(h):
            for x in range(w):
                f[x] = grid[y, x]
            _edt_1d(&f[0], w, &d[0], &v[0], &z[0])
            for x in range(w):
                grid[y, x] = d[x]
    grid_arr[grid_arr >= _EDT_INF / 2] = np.inf
    return grid_arr
