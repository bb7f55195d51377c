"""Evaluation metrics: SP (IoU of Otsu masks), CD (Chamfer over Canny edges),
Fréchet feature distance, GLCM texture distance, PSNR and CHC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels
from .filters import canny, histogram_bins
from .imagecore import BinaryMask, Image, to_gray_luma, to_rgb

GLCM_LEVELS = 16
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
GLCM_FEATURES = ("contrast", "correlation", "energy", "homogeneity")
CHC_BINS = 64

_EDT_MAX_CELLS = 4_000_000


class DegenerateHistogramError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


# --- SP ---------------------------------------------------------------------


def otsu_threshold(img: Image) -> int:
    """Byte level t maximizing between-class variance; foreground is > t."""
    levels = histogram_bins(to_gray_luma(img).plane(0)).ravel()
    hist = np.bincount(levels, minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("degenerate histogram: image has a single gray level")
    total = hist.sum()
    p = hist / total
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def otsu_mask(img: Image) -> BinaryMask:
    t = otsu_threshold(img)
    levels = histogram_bins(to_gray_luma(img).plane(0))
    return BinaryMask(levels > t)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        raise EmptyMaskError("both masks are empty")
    return np.count_nonzero(a.bits & b.bits) / union


# --- CD ---------------------------------------------------------------------


def edge_points(mask: BinaryMask) -> np.ndarray:
    """(row, col) coordinates of set pixels, shape (n, 2)."""
    return np.argwhere(mask.bits).astype(np.float64)


def _as_points(pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"point set must have shape (n, 2), got {pts.shape}")
    if len(pts) == 0:
        raise ValueError("point set is empty")
    return pts


def _nearest_edt(src, dst, origin, shape):
    grid = np.zeros(shape, dtype=np.uint8)
    idx = (dst - origin).astype(np.int64)
    grid[idx[:, 0], idx[:, 1]] = 1
    sq = kernels.edt_squared(grid)
    q = (src - origin).astype(np.int64)
    return np.sqrt(sq[q[:, 0], q[:, 1]])


def nearest_distances(src, dst) -> np.ndarray:
    """Distance from every point in ``src`` to its nearest neighbour in ``dst``.

    Integer-valued sets go through an exact squared distance transform over
    their joint bounding box; anything else uses a k-d tree.
    """
    src = _as_points(src)
    dst = _as_points(dst)
    both = np.vstack([src, dst])
    if np.all(both == np.round(both)):
        origin = both.min(axis=0)
        shape = tuple(int(s) for s in both.max(axis=0) - origin + 1)
        if shape[0] * shape[1] <= _EDT_MAX_CELLS:
            return _nearest_edt(src, dst, origin, shape)
    dist, _ = cKDTree(dst).query(src, k=1)
    return dist


def chamfer_distance(edges_a, edges_b) -> float:
    """Symmetric mean nearest-neighbour distance, averaged over both directions."""
    ab = nearest_distances(edges_a, edges_b)
    ba = nearest_distances(edges_b, edges_a)
    return 0.5 * (float(ab.mean()) + float(ba.mean()))


def canny_chamfer(a: Image, b: Image, high=150.0, low=50.0) -> float:
    ea = edge_points(canny(a, high, low))
    eb = edge_points(canny(b, high, low))
    if len(ea) == 0 or len(eb) == 0:
        return math.nan
    return chamfer_distance(ea, eb)


# --- GLCM -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GlcmFeatures:
    """Haralick quartet per offset; ``values[i, j]`` is feature j at offset i."""

    values: np.ndarray

    def feature(self, name: str) -> np.ndarray:
        return self.values[:, GLCM_FEATURES.index(name)]

    @property
    def contrast(self):
        return self.feature("contrast")

    @property
    def correlation(self):
        return self.feature("correlation")

    @property
    def energy(self):
        return self.feature("energy")

    @property
    def homogeneity(self):
        return self.feature("homogeneity")

    def normalized_vector(self) -> np.ndarray:
        """16-vector with contrast scaled by 1/(L-1)^2 so every entry is O(1)."""
        v = self.values.copy()
        v[:, 0] /= (GLCM_LEVELS - 1) ** 2
        return v.ravel()


def glcm_levels(img: Image) -> np.ndarray:
    gray = to_gray_luma(img).plane(0)
    return np.minimum(np.floor(gray * GLCM_LEVELS), GLCM_LEVELS - 1).astype(np.int64)


def glcm_matrix(levels: np.ndarray, offset) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix for one (drow, dcol) offset."""
    counts = kernels.glcm_counts(levels, offset[0], offset[1], GLCM_LEVELS)
    sym = (counts + counts.T).astype(np.float64)
    total = sym.sum()
    if total == 0:
        raise ValueError(f"no pixel pairs for offset {offset}")
    return sym / total


def haralick(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    contrast = float(np.sum(p * (i - j) ** 2))
    energy = math.sqrt(float(np.sum(p * p)))
    homogeneity = float(np.sum(p / (1.0 + (i - j) ** 2)))
    mu_i = float(np.sum(i * p))
    mu_j = float(np.sum(j * p))
    var_i = float(np.sum(p * (i - mu_i) ** 2))
    var_j = float(np.sum(p * (j - mu_j) ** 2))
    if var_i <= 1e-15 or var_j <= 1e-15:
        correlation = 0.0
    else:
        correlation = float(np.sum(p * (i - mu_i) * (j - mu_j))) / math.sqrt(var_i * var_j)
    return np.array([contrast, correlation, energy, homogeneity])


def glcm_features(img: Image) -> GlcmFeatures:
    if img.width < 2 or img.height < 2:
        raise ValueError("GLCM needs an image of at least 2x2 pixels")
    levels = glcm_levels(img)
    return GlcmFeatures(np.stack([haralick(glcm_matrix(levels, off)) for off in GLCM_OFFSETS]))


def glcm_distance(a: Image, b: Image) -> float:
    va = glcm_features(a).normalized_vector()
    vb = glcm_features(b).normalized_vector()
    return float(np.mean(np.abs(va - vb)))


def glcm_contrast(img: Image) -> float:
    """Raw GLCM contrast averaged over the four offsets."""
    return float(glcm_features(img).contrast.mean())


# --- PSNR -------------------------------------------------------------------


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB with peak 1. Identical images give ``math.inf``."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# --- CHC --------------------------------------------------------------------


def color_histogram(img: Image, mask: BinaryMask | None = None, bins: int = CHC_BINS) -> np.ndarray:
    """Per-channel L1-normalized histograms over masked pixels, shape (C, bins)."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if mask is None:
        sel = np.ones((img.height, img.width), dtype=bool)
    else:
        if mask.bits.shape != (img.height, img.width):
            raise ValueError("mask and image dimensions differ")
        sel = mask.bits
    n = np.count_nonzero(sel)
    if n == 0:
        raise EmptyMaskError("mask selects no pixels")
    out = np.empty((img.channels, bins))
    for c in range(img.channels):
        vals = img.plane(c)[sel]
        idx = np.minimum(np.floor(vals * bins), bins - 1).astype(np.int64)
        out[c] = np.bincount(idx, minlength=bins) / n
    return out


def pearson(h1: np.ndarray, h2: np.ndarray) -> float:
    d1 = h1 - h1.mean()
    d2 = h2 - h2.mean()
    s1 = float(np.sum(d1 * d1))
    s2 = float(np.sum(d2 * d2))
    if s1 == 0.0 or s2 == 0.0:
        return 1.0 if (s1 == 0.0 and s2 == 0.0) else 0.0
    return float(np.sum(d1 * d2)) / math.sqrt(s1 * s2)


def chc(a: Image, b: Image, mask_a=None, mask_b=None, bins: int = CHC_BINS) -> float:
    """Color histogram correlation averaged over channels."""
    if a.channels != b.channels:
        a, b = to_rgb(a), to_rgb(b)
    ha = color_histogram(a, mask_a, bins)
    hb = color_histogram(b, mask_b, bins)
    return float(np.mean([pearson(ha[c], hb[c]) for c in range(a.channels)]))


def foreground_mask(img: Image) -> BinaryMask:
    """Otsu foreground, or the full frame when the image is a single gray level."""
    try:
        mask = otsu_mask(img)
    except DegenerateHistogramError:
        return BinaryMask.full(img.width, img.height)
    return mask


# --- Fréchet feature distance -----------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def rank_deficient(self) -> bool:
        return self.count < self.dim + 1


PSD_TOL = 1e-8


def _floor_eigs(w: np.ndarray) -> np.ndarray:
    """Zero eigenvalues that are round-off relative to the largest one."""
    floor = w.size * np.finfo(np.float64).eps * max(abs(w).max(initial=0.0), np.finfo(np.float64).tiny)
    return np.where(w < floor, 0.0, w)


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min(initial=0.0) < -PSD_TOL * max(1.0, abs(w).max(initial=0.0)):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = _floor_eigs(w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Fréchet distance between Gaussians N(mu_a, S_a) and N(mu_b, S_b).

    d^2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)

    With X = S_a^1/2 and Y = S_b^1/2 the trace term is the nuclear norm of
    Y X, so the covariance part equals |X - Q Y|_F^2 where Q = V U^T comes
    from the SVD Y X = U s V^T. Summing squares avoids the cancellation of
    the trace form when the two covariances nearly agree.
    """
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    root_a = _sqrtm_psd(a.cov)
    root_b = _sqrtm_psd(b.cov)
    u, _, vt = np.linalg.svd(root_b @ root_a)
    q = vt.T @ u.T
    resid = root_a - q @ root_b
    diff = a.mean - b.mean
    return math.sqrt(float(diff @ diff) + float(np.sum(resid * resid)))


def feature_stats(images, extractor=None) -> FeatureStats:
    """Sample mean and unbiased covariance of per-image feature vectors.

    The default extractor is the appearance encoding (color histograms + GLCM).
    """
    images = list(images)
    if len(images) < 2:
        raise ValueError("feature statistics need at least two images")
    if extractor is None:
        from .conditioning import encode_appearance

        extractor = encode_appearance
    feats = np.stack([np.asarray(extractor(img), dtype=np.float64) for img in images])
    return stats_from_features(feats)


def stats_from_features(feats: np.ndarray) -> FeatureStats:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] < 2:
        raise ValueError("feature statistics need at least two samples")
    # shifting by the first row keeps duplicated rows exact (zero covariance)
    shift = feats[0]
    d = feats - shift
    m = d.mean(axis=0)
    centered = d - m
    cov = centered.T @ centered / (feats.shape[0] - 1)
    return FeatureStats(shift + m, cov, count=feats.shape[0])


# --- rank correlation -------------------------------------------------------


def rankdata(values) -> np.ndarray:
    """1-based ranks, ties receiving the mean of the ranks they span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (Pearson on tie-averaged ranks); nan if a side is constant."""
    rx = rankdata(x)
    ry = rankdata(y)
    if len(rx) != len(ry):
        raise ValueError("sequences differ in length")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(np.sum(dx * dx)) * float(np.sum(dy * dy)))
    if denom == 0.0:
        return math.nan
    return float(np.sum(dx * dy)) / denom
