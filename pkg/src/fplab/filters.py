"""Parameterized pixel-space filters and ordered filter chains.

A chain is applied to a conditioning image before it is encoded; the empty
chain is the identity. Every filter returns a new :class:`Image` with
intensities clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ._backend import kernels
from .imagecore import BinaryMask, Image, byte_levels, to_gray_luma

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
SOBEL_SCALE = 1.0 / (4.0 * math.sqrt(2.0))

CANNY_HIGH = 150.0
CANNY_LOW = 50.0
CANNY_BLUR_RADIUS = 2


def gaussian_sigma(radius: int) -> float:
    ksize = 2 * radius + 1
    return 0.3 * ((ksize - 1) * 0.5 - 1) + 0.8


def make_gaussian_kernel(radius: int) -> np.ndarray:
    """(2r+1)^2 normalized Gaussian window; sigma follows the usual ksize rule."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return np.ones((1, 1))
    sigma = gaussian_sigma(radius)
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gabor_kernel(radius, wavelength, theta, psi, sigma, gamma) -> np.ndarray:
    if wavelength <= 0 or sigma <= 0 or gamma <= 0:
        raise ValueError("wavelength, sigma and gamma must be positive")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    y, x = np.meshgrid(ax, ax, indexing="ij")
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    envelope = np.exp(-(xr ** 2 + gamma ** 2 * yr ** 2) / (2.0 * sigma ** 2))
    return envelope * np.cos(2.0 * math.pi * xr / wavelength + psi)


def _check_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {kernel.shape}")
    return kernel


def correlate_raw(img: Image, kernel) -> np.ndarray:
    """Per-channel correlation with reflect-101 borders, not clamped."""
    kernel = _check_kernel(kernel)
    planes = [kernels.correlate2d(img.plane(c), kernel) for c in range(img.channels)]
    return np.stack(planes, axis=2)


def convolve2d(img: Image, kernel) -> Image:
    return Image.from_array(correlate_raw(img, kernel))


def gaussian_blur(img: Image, radius: int) -> Image:
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return img
    return convolve2d(img, make_gaussian_kernel(radius))


def sharpen(img: Image, radius: int = 1, amount: float = 1.0) -> Image:
    """Unsharp mask: in + amount * (in - blur(in))."""
    if radius < 1:
        raise ValueError(f"sharpen radius must be >= 1, got {radius}")
    if amount <= 0:
        raise ValueError(f"amount must be positive, got {amount}")
    blurred = gaussian_blur(img, radius).pixels
    px = img.pixels
    return Image.from_array(px + amount * (px - blurred))


_DIFF = np.array([[-1.0, 0.0, 1.0]])
_SMOOTH = np.array([[1.0, 2.0, 1.0]])


def sobel_gradients(gray: Image):
    """3x3 Sobel responses, evaluated separably (difference, then [1, 2, 1]).

    Equal to correlation with SOBEL_X / SOBEL_Y; the separable order makes a
    constant region give exactly zero.
    """
    plane = gray.plane(0)
    gx = kernels.correlate2d(kernels.correlate2d(plane, _DIFF), _SMOOTH.T)
    gy = kernels.correlate2d(kernels.correlate2d(plane, _DIFF.T), _SMOOTH)
    return gx, gy


def sobel_magnitude(img: Image) -> Image:
    gx, gy = sobel_gradients(to_gray_luma(img))
    return Image.from_array((np.sqrt(gx * gx + gy * gy) * SOBEL_SCALE)[:, :, None])


def invert(img: Image) -> Image:
    return Image(1.0 - img.pixels)


def decolorize(img: Image) -> Image:
    return to_gray_luma(img)


def histogram_bins(values: np.ndarray) -> np.ndarray:
    """256-bin index of each intensity (the byte it would be saved as)."""
    return byte_levels(values)


def autocontrast_bounds(values: np.ndarray, cutoff_percent: float):
    """Low/high byte levels after discarding ``cutoff_percent`` of pixels per tail."""
    bins = histogram_bins(values).ravel()
    hist = np.bincount(bins, minlength=256)
    cut = int(bins.size * cutoff_percent // 100)
    cum = np.cumsum(hist)
    lo = int(np.searchsorted(cum, cut, side="right"))
    rcum = np.cumsum(hist[::-1])
    hi = 255 - int(np.searchsorted(rcum, cut, side="right"))
    return lo, hi


def autocontrast(img: Image, cutoff_percent: float = 1.0) -> Image:
    if not 0 <= cutoff_percent < 50:
        raise ValueError(f"cutoff must lie in [0, 50), got {cutoff_percent}")
    out = img.pixels.copy()
    for c in range(img.channels):
        lo, hi = autocontrast_bounds(img.plane(c), cutoff_percent)
        if hi <= lo:
            continue
        lo_v, hi_v = lo / 255.0, hi / 255.0
        out[:, :, c] = (img.plane(c) - lo_v) / (hi_v - lo_v)
    return Image.from_array(out)


def _direction_bins(gx, gy) -> np.ndarray:
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.zeros(angle.shape, dtype=np.int8)
    bins[(angle >= 22.5) & (angle < 67.5)] = 1
    bins[(angle >= 67.5) & (angle < 112.5)] = 2
    bins[(angle >= 112.5) & (angle < 157.5)] = 3
    return bins


def canny_nms(img: Image) -> np.ndarray:
    """Non-maximum-suppressed gradient magnitude on the 0-255 intensity scale."""
    gray = gaussian_blur(to_gray_luma(img), CANNY_BLUR_RADIUS)
    gx, gy = sobel_gradients(gray)
    gx = gx * 255.0
    gy = gy * 255.0
    mag = np.sqrt(gx * gx + gy * gy)
    return kernels.nonmax_suppress(mag, _direction_bins(gx, gy))


def canny(img: Image, high: float = CANNY_HIGH, low: float = CANNY_LOW) -> BinaryMask:
    if low < 0 or high < low:
        raise ValueError(f"need high >= low >= 0, got high={high}, low={low}")
    nms = canny_nms(img)
    return BinaryMask(kernels.hysteresis(nms, float(low), float(high)).astype(bool))


# --- stages and chains ------------------------------------------------------

_STAGE_DEFAULTS: dict[str, dict[str, Any]] = {
    "gaussian_blur": {"radius": 1},
    "sharpen": {"radius": 1, "amount": 1.0},
    "sobel_magnitude": {},
    "gabor": {"radius": 3, "wavelength": 4.0, "theta": 0.0, "psi": 0.0, "sigma": 2.0, "gamma": 1.0},
    "invert": {},
    "decolorize": {},
    "autocontrast": {"cutoff": 1.0},
    "canny": {"high": CANNY_HIGH, "low": CANNY_LOW},
}

_INT_PARAMS = {"radius"}

STAGE_KINDS = tuple(_STAGE_DEFAULTS)


def _validate(kind, p):
    if "radius" in p and p["radius"] < 0:
        raise ValueError(f"{kind}: radius must be >= 0")
    if kind == "sharpen":
        if p["radius"] < 1:
            raise ValueError("sharpen: radius must be >= 1")
        if p["amount"] <= 0:
            raise ValueError("sharpen: amount must be positive")
    elif kind == "gabor":
        for name in ("wavelength", "sigma", "gamma"):
            if p[name] <= 0:
                raise ValueError(f"gabor: {name} must be positive")
    elif kind == "autocontrast":
        if not 0 <= p["cutoff"] < 50:
            raise ValueError("autocontrast: cutoff must lie in [0, 50)")
    elif kind == "canny":
        if p["low"] < 0 or p["high"] < p["low"]:
            raise ValueError("canny: need high >= low >= 0")


@dataclass(frozen=True)
class FilterStage:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _STAGE_DEFAULTS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        defaults = _STAGE_DEFAULTS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"{self.kind}: unknown parameter(s) {sorted(unknown)}")
        merged = {}
        for name, default in defaults.items():
            value = self.params.get(name, default)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{self.kind}: parameter {name} must be numeric")
            if name in _INT_PARAMS:
                if float(value) != int(value):
                    raise ValueError(f"{self.kind}: {name} must be an integer")
                value = int(value)
            else:
                value = float(value)
            merged[name] = value
        _validate(self.kind, merged)
        object.__setattr__(self, "params", merged)

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def apply(self, img: Image) -> Image:
        p = self.params
        k = self.kind
        if k == "gaussian_blur":
            return gaussian_blur(img, p["radius"])
        if k == "sharpen":
            return sharpen(img, p["radius"], p["amount"])
        if k == "sobel_magnitude":
            return sobel_magnitude(img)
        if k == "gabor":
            kern = gabor_kernel(p["radius"], p["wavelength"], p["theta"], p["psi"], p["sigma"], p["gamma"])
            return Image.from_array(np.abs(correlate_raw(img, kern)))
        if k == "invert":
            return invert(img)
        if k == "decolorize":
            return decolorize(img)
        if k == "autocontrast":
            return autocontrast(img, p["cutoff"])
        return canny(img, p["high"], p["low"]).to_image()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FilterStage":
        if not isinstance(d, Mapping) or "kind" not in d:
            raise ValueError(f"filter stage must be an object with a 'kind', got {d!r}")
        extra = set(d) - {"kind", "params"}
        if extra:
            raise ValueError(f"filter stage has unknown key(s) {sorted(extra)}")
        return cls(d["kind"], dict(d.get("params") or {}))


@dataclass(frozen=True)
class FilterChain:
    stages: tuple[FilterStage, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def __len__(self):
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)

    def __add__(self, other: "FilterChain") -> "FilterChain":
        return FilterChain(self.stages + tuple(other.stages))

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.stages]

    @classmethod
    def from_list(cls, items) -> "FilterChain":
        if not isinstance(items, (list, tuple)):
            raise ValueError("filter chain must be a list of stages")
        return cls(tuple(FilterStage.from_dict(d) for d in items))


def apply_chain(chain: FilterChain, img: Image) -> Image:
    for stage in chain.stages:
        img = stage.apply(img)
    return img


def filterprompt_struct() -> FilterChain:
    """Decolorize (luma), invert, then 1% autocontrast."""
    return FilterChain(
        (
            FilterStage("decolorize"),
            FilterStage("invert"),
            FilterStage("autocontrast", {"cutoff": 1.0}),
        )
    )


NAMED_CHAINS = {"filterprompt_struct": filterprompt_struct}


def parse_chain_spec(text: str) -> FilterChain:
    """Parse ``"kind[:name=value...],..."``; ``filterprompt_struct`` expands in place.

    >>> len(parse_chain_spec("gaussian_blur:radius=2,invert"))
    2
    """
    stages: list[FilterStage] = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        name, *assigns = item.split(":")
        if name in NAMED_CHAINS:
            if assigns:
                raise ValueError(f"{name} takes no parameters")
            stages.extend(NAMED_CHAINS[name]().stages)
            continue
        params = {}
        for a in assigns:
            key, sep, raw = a.partition("=")
            if not sep:
                raise ValueError(f"bad parameter {a!r} in stage {name!r}")
            try:
                params[key] = float(raw)
            except ValueError:
                raise ValueError(f"non-numeric value {raw!r} for {name}.{key}") from None
        stages.append(FilterStage(name, params))
    return FilterChain(tuple(stages))
