"""Procedural toy data: textured shape images and Gaussian-mixture latents."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .conditioning import ConditionSet
from .diffusion import GaussianMixtureModel
from .imagecore import Image

SHAPES = ("circle", "square", "triangle")
FILLS = ("solid", "stripes", "dots")
EXTENT = 0.75  # shape bounding box as a fraction of the canvas side


@dataclass(frozen=True)
class ShapeSpec:
    shape: str = "square"
    fill: str = "solid"
    fg: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    size: int = 32
    period: int = 4
    angle: float = 0.0
    dot_radius: float = 1.0
    spacing: int = 4

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.fill not in FILLS:
            raise ValueError(f"unknown fill {self.fill!r}")
        for name in ("fg", "bg"):
            color = tuple(float(c) for c in getattr(self, name))
            if len(color) != 3 or not all(0.0 <= c <= 1.0 for c in color):
                raise ValueError(f"{name} must be an RGB triple in [0, 1]")
            object.__setattr__(self, name, color)
        if self.size < 4:
            raise ValueError("size must be >= 4")
        if self.period < 2 or self.spacing < 2:
            raise ValueError("period and spacing must be >= 2 px")
        if self.dot_radius <= 0:
            raise ValueError("dot_radius must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fg"] = list(self.fg)
        d["bg"] = list(self.bg)
        return d

    @classmethod
    def from_dict(cls, d) -> "ShapeSpec":
        d = dict(d)
        for name in ("fg", "bg"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def square_side(size: int) -> int:
    return int(round(EXTENT * size))


def shape_mask(spec: ShapeSpec) -> np.ndarray:
    """Boolean foreground of the untextured shape, tested at pixel centers."""
    n = spec.size
    side = square_side(n)
    lo = (n - side) // 2
    y, x = np.mgrid[0:n, 0:n]
    if spec.shape == "square":
        return (x >= lo) & (x < lo + side) & (y >= lo) & (y < lo + side)
    cx = cy = n / 2.0
    px, py = x + 0.5, y + 0.5
    if spec.shape == "circle":
        r = side / 2.0
        return (px - cx) ** 2 + (py - cy) ** 2 <= r * r
    # isosceles triangle, apex up, inside the same bounding box
    top, bottom = float(lo), float(lo + side)
    half = side / 2.0
    frac = (py - top) / side
    return (py >= top) & (py <= bottom) & (np.abs(px - cx) <= half * frac)


def _texture(spec: ShapeSpec, rng: np.random.Generator) -> np.ndarray:
    """True where the fill shows the primary color."""
    n = spec.size
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    if spec.fill == "solid":
        return np.ones((n, n), dtype=bool)
    if spec.fill == "stripes":
        phase = int(rng.integers(spec.period))
        a = math.radians(spec.angle)
        u = np.floor(y * math.cos(a) + x * math.sin(a) + 1e-9).astype(np.int64) + phase
        return (u % spec.period) < (spec.period + 1) // 2
    oy, ox = (int(v) for v in rng.integers(spec.spacing, size=2))
    cy = (np.floor((y - oy) / spec.spacing) + 0.5) * spec.spacing + oy
    cx = (np.floor((x - ox) / spec.spacing) + 0.5) * spec.spacing + ox
    return (y + 0.5 - cy) ** 2 + (x + 0.5 - cx) ** 2 <= spec.dot_radius ** 2


def gen_shape_image(spec: ShapeSpec, seed: int = 0) -> Image:
    """Rasterize a centered shape without antialiasing.

    The seed only moves texture phase (stripe offset, dot grid origin). The
    secondary texture color is the midpoint of fg and bg.
    """
    rng = np.random.default_rng(seed)
    mask = shape_mask(spec)
    primary = _texture(spec, rng)
    fg = np.asarray(spec.fg)
    bg = np.asarray(spec.bg)
    shade = 0.5 * (fg + bg)
    inside = np.where(primary[:, :, None], fg, shade)
    px = np.where(mask[:, :, None], inside, bg)
    return Image(px)


# --- decode map -------------------------------------------------------------


@dataclass(frozen=True)
class DecodeMap:
    """Row-major H x W x C layout between sampler vectors and images."""

    height: int
    width: int
    channels: int = 3

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels

    def encode(self, img: Image) -> np.ndarray:
        if img.shape != (self.height, self.width, self.channels):
            raise ValueError(f"image shape {img.shape} does not match decode map {(self.height, self.width, self.channels)}")
        return img.pixels.reshape(-1).copy()

    def decode(self, vec) -> Image:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.dim:
            raise ValueError(f"vector has {vec.size} entries, expected {self.dim}")
        return Image.from_array(vec.reshape(self.height, self.width, self.channels))

    @classmethod
    def for_image(cls, img: Image) -> "DecodeMap":
        return cls(img.height, img.width, img.channels)


# --- Gaussian-mixture latents ------------------------------------------------


def component_means(K: int, D: int, spacing: float) -> np.ndarray:
    """K centred points with pairwise distance >= spacing."""
    if K == 1:
        return np.zeros((1, D))
    if D >= K:
        means = np.zeros((K, D))
        means[np.arange(K), np.arange(K)] = spacing / math.sqrt(2.0)
        return means - means.mean(axis=0)
    if D == 1:
        return ((np.arange(K) - (K - 1) / 2.0) * spacing)[:, None]
    radius = spacing / (2.0 * math.sin(math.pi / K))
    ang = 2.0 * math.pi * np.arange(K) / K
    means = np.zeros((K, D))
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return means


def anchor_vectors(K: int, spacing: float) -> np.ndarray:
    """One-hot anchors scaled so that anchors sit ``spacing`` apart."""
    return np.eye(K) * (spacing / math.sqrt(2.0))


@dataclass
class GMDataset:
    gm: GaussianMixtureModel
    samples: np.ndarray
    labels: np.ndarray

    def condition(self, k: int) -> ConditionSet:
        a = self.gm.struct_anchors[k]
        return ConditionSet(a, self.gm.app_anchors[k], np.zeros(0))

    def items(self):
        """(x0, condition) pairs for denoiser fitting."""
        return [(x, self.condition(int(k))) for x, k in zip(self.samples, self.labels)]


def gen_gm_dataset(K: int, D: int, anchor_spacing: float, s: float, n_per_component: int, seed: int, tau: float | None = None) -> GMDataset:
    if K < 1 or D < 1 or n_per_component < 0:
        raise ValueError("need K >= 1, D >= 1, n_per_component >= 0")
    if anchor_spacing <= 0 or s < 0:
        raise ValueError("anchor_spacing must be positive and s non-negative")
    anchors = anchor_vectors(K, anchor_spacing)
    gm = GaussianMixtureModel(
        np.full(K, 1.0 / K),
        component_means(K, D, anchor_spacing),
        np.full(K, float(s)),
        struct_anchors=anchors,
        app_anchors=anchors,
        tau=tau if tau is not None else 0.1 * anchor_spacing,
    )
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n_per_component)
    samples = gm.means[labels] + s * rng.standard_normal((labels.size, D))
    return GMDataset(gm, samples, labels)


def random_color_specs(n: int, seed: int, *, shape="square", fill="solid", size=8, mean=0.5, std=0.15) -> list[ShapeSpec]:
    """Specs with fg/bg colors drawn from a clipped normal."""
    rng = np.random.default_rng(seed)
    colors = np.clip(rng.normal(mean, std, size=(n, 2, 3)), 0.0, 1.0)
    return [ShapeSpec(shape=shape, fill=fill, fg=tuple(c[0]), bg=tuple(c[1]), size=size) for c in colors]
