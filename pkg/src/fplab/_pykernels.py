"""Pure-Python/numpy implementations of the pixel kernels.

Mirrors the API of the compiled ``_ckernels`` module one-for-one. Floating
point accumulation order matches the compiled loops so both backends agree
bit for bit.
"""

from collections import deque

import numpy as np

BACKEND = "python"

_EDT_INF = 1e20

# (dy, dx) of the "before" neighbor per quantized gradient direction; the
# "after" neighbor is the negation.
_NMS_OFFSETS = ((0, -1), (-1, -1), (-1, 0), (-1, 1))


def reflect101(idx, n):
    """Map integer indices into ``[0, n)`` mirroring without repeating the edge."""
    idx = np.asarray(idx, dtype=np.int64)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def correlate2d(plane, kernel):
    plane = np.ascontiguousarray(plane, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    h, w = plane.shape
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    rows = reflect101(np.arange(-ry, h + ry), h)
    cols = reflect101(np.arange(-rx, w + rx), w)
    padded = plane[np.ix_(rows, cols)]
    out = np.zeros((h, w), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            out += kernel[ky, kx] * padded[ky:ky + h, kx:kx + w]
    return out


def nonmax_suppress(mag, bins):
    mag = np.ascontiguousarray(mag, dtype=np.float64)
    bins = np.asarray(bins)
    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = mag
    out = np.zeros_like(mag)
    for b, (dy, dx) in enumerate(_NMS_OFFSETS):
        before = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        after = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep = (bins == b) & (mag > 0) & (mag > before) & (mag >= after)
        out[keep] = mag[keep]
    return out


def hysteresis(nms, low, high):
    nms = np.asarray(nms, dtype=np.float64)
    h, w = nms.shape
    out = np.zeros((h, w), dtype=np.uint8)
    queue = deque()
    for y, x in zip(*np.nonzero(nms > high)):
        out[y, x] = 1
        queue.append((int(y), int(x)))
    while queue:
        y, x = queue.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not out[yy, xx] and nms[yy, xx] > low:
                    out[yy, xx] = 1
                    queue.append((yy, xx))
    return out


def glcm_counts(levels, dy, dx, n_levels):
    levels = np.asarray(levels, dtype=np.int64)
    h, w = levels.shape
    y0, y1 = max(0, -dy), min(h, h - dy)
    x0, x1 = max(0, -dx), min(w, w - dx)
    counts = np.zeros((n_levels, n_levels), dtype=np.int64)
    if y1 <= y0 or x1 <= x0:
        return counts
    ref = levels[y0:y1, x0:x1].ravel()
    nbr = levels[y0 + dy:y1 + dy, x0 + dx:x1 + dx].ravel()
    np.add.at(counts, (ref, nbr), 1)
    return counts


def _edt_1d(f):
    n = len(f)
    d = np.empty(n, dtype=np.float64)
    v = [0] * n
    z = [0.0] * (n + 1)
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) * (q - p) + f[p]
    return d


def edt_squared(features):
    """Exact squared Euclidean distance to the nearest nonzero pixel."""
    features = np.asarray(features)
    h, w = features.shape
    grid = np.where(features != 0, 0.0, _EDT_INF)
    for x in range(w):
        grid[:, x] = _edt_1d(grid[:, x].tolist())
    for y in range(h):
        grid[y, :] = _edt_1d(grid[y, :].tolist())
    grid[grid >= _EDT_INF / 2] = np.inf
    return grid
