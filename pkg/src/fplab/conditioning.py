"""Structure / appearance condition encoders and the condition set.

The structure encoding is a gray thumbnail of the filtered reference; the
appearance encoding is per-channel color histograms followed by the
normalized GLCM feature vector. The two paths share no input, so a chain
on one reference never touches the other encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .filters import FilterChain, apply_chain
from .imagecore import Image, resize_bilinear, to_gray_luma, to_rgb
from .metrics import color_histogram, glcm_features


@dataclass(frozen=True)
class ConditionConfig:
    thumbnail: int = 16
    hist_bins: int = 16
    text_dim: int = 8

    def __post_init__(self):
        if self.thumbnail < 1 or self.hist_bins < 2 or self.text_dim < 0:
            raise ValueError(f"invalid condition config {self}")

    @property
    def struct_dim(self) -> int:
        return self.thumbnail * self.thumbnail

    @property
    def app_dim(self) -> int:
        return 3 * self.hist_bins + 16


DEFAULT_CONDITIONS = ConditionConfig()


def _readonly(v) -> np.ndarray:
    v = np.array(v, dtype=np.float64, copy=True).ravel()
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class ConditionSet:
    """Structure block C_c, appearance block C_s and the constant text stub C_t.

    ``struct_on``/``app_on`` record whether a block carries information; the
    dual-branch step clears one of them when it zeroes that block.
    """

    struct_cond: np.ndarray
    app_cond: np.ndarray
    text_stub: np.ndarray = None
    struct_on: bool = True
    app_on: bool = True

    def __post_init__(self):
        object.__setattr__(self, "struct_cond", _readonly(self.struct_cond))
        object.__setattr__(self, "app_cond", _readonly(self.app_cond))
        text = np.zeros(DEFAULT_CONDITIONS.text_dim) if self.text_stub is None else self.text_stub
        object.__setattr__(self, "text_stub", _readonly(text))
        if not (np.all(np.isfinite(self.struct_cond)) and np.all(np.isfinite(self.app_cond))):
            raise ValueError("condition vectors must be finite")

    @property
    def struct_dim(self) -> int:
        return self.struct_cond.size

    @property
    def app_dim(self) -> int:
        return self.app_cond.size

    def structure_only(self) -> "ConditionSet":
        return replace(self, app_cond=np.zeros_like(self.app_cond), app_on=False)

    def appearance_only(self) -> "ConditionSet":
        return replace(self, struct_cond=np.zeros_like(self.struct_cond), struct_on=False)

    def vector(self) -> np.ndarray:
        """Flat [C_t; C_s; C_c]."""
        return np.concatenate([self.text_stub, self.app_cond, self.struct_cond])

    def __eq__(self, other):
        if not isinstance(other, ConditionSet):
            return NotImplemented
        return (
            np.array_equal(self.struct_cond, other.struct_cond)
            and np.array_equal(self.app_cond, other.app_cond)
            and np.array_equal(self.text_stub, other.text_stub)
            and self.struct_on == other.struct_on
            and self.app_on == other.app_on
        )

    @classmethod
    def empty(cls, struct_dim=0, app_dim=0, text_dim=0) -> "ConditionSet":
        return cls(np.zeros(struct_dim), np.zeros(app_dim), np.zeros(text_dim))


def encode_structure(img: Image, chain: FilterChain = FilterChain(), config: ConditionConfig = DEFAULT_CONDITIONS) -> np.ndarray:
    """Filter, convert to luma, shrink to a thumbnail and flatten row-major."""
    filtered = to_gray_luma(apply_chain(chain, img))
    thumb = resize_bilinear(filtered, config.thumbnail, config.thumbnail)
    return thumb.pixels.reshape(-1).copy()


def encode_appearance(img: Image, chain: FilterChain = FilterChain(), config: ConditionConfig = DEFAULT_CONDITIONS) -> np.ndarray:
    """Filter, then concatenate RGB histograms with the 16 GLCM features."""
    filtered = apply_chain(chain, img)
    hist = color_histogram(to_rgb(filtered), None, config.hist_bins).ravel()
    texture = glcm_features(filtered).normalized_vector()
    return np.concatenate([hist, texture])


def build_condition_set(
    struct_img: Image,
    app_img: Image,
    struct_chain: FilterChain = FilterChain(),
    app_chain: FilterChain = FilterChain(),
    config: ConditionConfig = DEFAULT_CONDITIONS,
) -> ConditionSet:
    return ConditionSet(
        encode_structure(struct_img, struct_chain, config),
        encode_appearance(app_img, app_chain, config),
        np.zeros(config.text_dim),
    )
