import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fplab.filters import (
    SOBEL_SCALE,
    FilterChain,
    FilterStage,
    apply_chain,
    autocontrast,
    autocontrast_bounds,
    canny,
    canny_nms,
    convolve2d,
    decolorize,
    filterprompt_struct,
    gabor_kernel,
    gaussian_blur,
    gaussian_sigma,
    invert,
    make_gaussian_kernel,
    parse_chain_spec,
    sharpen,
    sobel_magnitude,
)
from fplab.imagecore import Image

unit = st.floats(0.0, 1.0, allow_nan=False)


def images(min_side=1, max_side=10, channels=(1, 3)):
    return st.tuples(
        st.integers(min_side, max_side), st.integers(min_side, max_side), st.sampled_from(channels)
    ).flatmap(lambda s: arrays(np.float64, s, elements=unit).map(Image))


# --- Gaussian kernel


def test_radius_zero_kernel_is_unit():
    assert make_gaussian_kernel(0).tolist() == [[1.0]]


@pytest.mark.parametrize("radius", [1, 2, 3, 4, 8])
def test_gaussian_kernel_normalized_and_symmetric(radius):
    k = make_gaussian_kernel(radius)
    assert k.shape == (2 * radius + 1,) * 2
    assert abs(k.sum() - 1.0) <= 1e-9
    assert np.array_equal(k, k[::-1, :])
    assert np.array_equal(k, k[:, ::-1])
    assert np.array_equal(k, k.T)


def test_gaussian_radius2_center_from_formula():
    sigma = 0.3 * ((5 - 1) * 0.5 - 1) + 0.8
    total = sum(math.exp(-(x * x + y * y) / (2 * sigma * sigma)) for x in range(-2, 3) for y in range(-2, 3))
    assert make_gaussian_kernel(2)[2, 2] == pytest.approx(1.0 / total, abs=1e-15)
    assert gaussian_sigma(2) == pytest.approx(1.1)


def test_negative_radius_rejected():
    with pytest.raises(ValueError):
        make_gaussian_kernel(-1)
    with pytest.raises(ValueError):
        gaussian_blur(Image(np.zeros((2, 2, 1))), -1)


# --- convolution


def test_identity_kernel_leaves_input_unchanged():
    img = Image(np.random.default_rng(0).random((4, 5, 3)))
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    assert convolve2d(img, k) == img


def test_reflect101_box_on_three_pixels():
    # Row [0, .5, 1] padded reflect-101 is [.5, 0, .5, 1, .5].
    out = convolve2d(Image(np.array([[0.0, 0.5, 1.0]])), np.full((1, 3), 1.0 / 3.0))
    assert out.pixels.ravel() == pytest.approx([1 / 3, 0.5, 2 / 3], abs=1e-12)


def test_reflect101_vertical_hand_trace():
    # Column [0.2, 0.4, 0.9] with kernel [0.1, 0.2, 0.3]^T: padded [0.4, 0.2, 0.4, 0.9, 0.4].
    img = Image(np.array([[0.2], [0.4], [0.9]]))
    k = np.array([[0.1], [0.2], [0.3]])
    out = convolve2d(img, k).pixels.ravel()
    expected = [0.1 * 0.4 + 0.2 * 0.2 + 0.3 * 0.4, 0.1 * 0.2 + 0.2 * 0.4 + 0.3 * 0.9, 0.1 * 0.4 + 0.2 * 0.9 + 0.3 * 0.4]
    assert out == pytest.approx(expected, abs=1e-12)


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        convolve2d(Image(np.zeros((3, 3, 1))), np.ones((2, 3)))


def test_convolution_output_clamped():
    out = convolve2d(Image(np.full((3, 3, 1), 0.8)), np.full((1, 1), 2.0))
    assert out.pixels.max() == 1.0


@settings(max_examples=40, deadline=None)
@given(unit, st.integers(1, 7), st.integers(1, 7), st.integers(0, 4))
def test_blur_maps_constants_to_themselves(v, w, h, r):
    out = gaussian_blur(Image.constant(w, h, v), r)
    assert np.allclose(out.pixels, v, atol=1e-9, rtol=0)


def test_blur_radius_zero_is_identity():
    img = Image(np.random.default_rng(2).random((4, 4, 3)))
    assert gaussian_blur(img, 0) == img


def test_single_bright_pixel_gives_kernel_stamp():
    px = np.zeros((5, 5, 1))
    px[2, 2, 0] = 1.0
    out = gaussian_blur(Image(px), 1).pixels[1:4, 1:4, 0]
    sigma = 0.8
    g = np.array([[math.exp(-(x * x + y * y) / (2 * sigma * sigma)) for x in (-1, 0, 1)] for y in (-1, 0, 1)])
    assert np.allclose(out, g / g.sum(), atol=1e-12, rtol=0)


# --- sharpen


def test_sharpen_constant_unchanged():
    img = Image.constant(5, 4, 0.3, 3)
    assert np.allclose(sharpen(img, 1, 1.0).pixels, 0.3, atol=1e-12, rtol=0)


def test_sharpen_small_amount_approaches_input():
    img = Image(np.random.default_rng(3).random((6, 6, 1)))
    assert np.max(np.abs(sharpen(img, 1, 1e-9).pixels - img.pixels)) < 1e-8


def test_sharpen_step_overshoot():
    row = np.array([0.25, 0.25, 0.25, 0.75, 0.75, 0.75])
    img = Image(np.tile(row, (3, 1)))
    sigma = 0.8
    e = math.exp(-1.0 / (2 * sigma * sigma))
    a = e / (1 + 2 * e)  # 1-D neighbour weight of the separable kernel
    out = sharpen(img, 1, 1.0).pixels[1, :, 0]
    assert out[2] == pytest.approx(0.25 - 0.5 * a, abs=1e-12)
    assert out[3] == pytest.approx(0.75 + 0.5 * a, abs=1e-12)


def test_sharpen_rejects_bad_params():
    img = Image.constant(3, 3, 0.5)
    with pytest.raises(ValueError):
        sharpen(img, 1, 0.0)
    with pytest.raises(ValueError):
        sharpen(img, 0, 1.0)


# --- Sobel


def test_sobel_constant_is_zero():
    assert np.all(sobel_magnitude(Image.constant(6, 5, 0.7, 3)).pixels == 0.0)


def test_sobel_vertical_step_peaks_next_to_step():
    img = Image(np.tile([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], (5, 1)))
    out = sobel_magnitude(img).pixels[:, :, 0]
    # Gx = 1 + 2 + 1 on both columns beside the step.
    peak = 4.0 * SOBEL_SCALE
    assert np.allclose(out[:, 2], peak, atol=1e-15)
    assert np.allclose(out[:, 3], peak, atol=1e-15)
    assert np.all(out[:, [0, 1, 4, 5]] == 0.0)


def test_sobel_horizontal_step_is_transpose():
    v = np.tile([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], (6, 1))
    a = sobel_magnitude(Image(v)).pixels[:, :, 0]
    b = sobel_magnitude(Image(v.T.copy())).pixels[:, :, 0]
    assert np.array_equal(a.T, b)


# --- Gabor


def test_gabor_center_is_one():
    k = gabor_kernel(3, 4.0, 0.3, 0.0, 2.0, 0.5)
    assert k[3, 3] == 1.0


def test_gabor_rotation_transposes_when_isotropic():
    a = gabor_kernel(3, 5.0, 0.0, 0.4, 1.5, 1.0)
    b = gabor_kernel(3, 5.0, math.pi / 2, 0.4, 1.5, 1.0)
    assert np.allclose(a.T, b, atol=1e-12)


def test_gabor_point_value_from_formula():
    lam, theta, psi, sigma, gamma = 4.5, 0.7, 0.2, 1.8, 0.6
    x, y = 1.0, -2.0
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    want = math.exp(-(xr * xr + gamma * gamma * yr * yr) / (2 * sigma * sigma)) * math.cos(2 * math.pi * xr / lam + psi)
    k = gabor_kernel(3, lam, theta, psi, sigma, gamma)
    assert k[3 + int(y), 3 + int(x)] == pytest.approx(want, abs=1e-15)


def test_gabor_rejects_nonpositive():
    with pytest.raises(ValueError):
        gabor_kernel(2, 0.0, 0.0, 0.0, 1.0, 1.0)


# --- invert, decolorize


def test_invert_values():
    assert invert(Image(np.array([[0.2]]))).pixels[0, 0, 0] == pytest.approx(0.8)
    assert np.all(invert(Image.constant(3, 2, 0.0, 3)).pixels == 1.0)


@settings(max_examples=60, deadline=None)
@given(images())
def test_invert_is_involution(img):
    assert invert(invert(img)) == img


@settings(max_examples=60, deadline=None)
@given(images())
def test_decolorize_is_idempotent(img):
    once = decolorize(img)
    assert decolorize(once) == once


# --- autocontrast


def test_autocontrast_constant_unchanged():
    img = Image.constant(4, 4, 0.4, 3)
    assert autocontrast(img, 1.0) == img


def test_autocontrast_symmetric_stretch():
    img = Image(np.array([[0.25, 0.5, 0.75]]))
    out = autocontrast(img, 0.0).pixels.ravel()
    assert out[0] == 0.0 and out[2] == 1.0
    assert out[1] == pytest.approx(0.5, abs=1e-12)


def _brute_bounds(values, cutoff):
    levels = sorted(int(math.floor(v * 255 + 0.5)) for v in values)
    cut = int(len(levels) * cutoff // 100)
    lo = next(L for L in range(256) if sum(1 for x in levels if x <= L) > cut)
    hi = next(L for L in range(255, -1, -1) if sum(1 for x in levels if x >= L) > cut)
    return lo, hi


def test_autocontrast_bounds_match_exhaustive_scan():
    rng = np.random.default_rng(4)
    vals = np.clip(rng.normal(0.5, 0.2, 1000), 0, 1)
    assert autocontrast_bounds(vals, 1.0) == _brute_bounds(vals, 1.0)
    assert autocontrast_bounds(vals, 5.0) == _brute_bounds(vals, 5.0)


def test_autocontrast_cutoff_validated():
    with pytest.raises(ValueError):
        autocontrast(Image.constant(2, 2, 0.5), 50.0)


# --- Canny


def test_canny_constant_is_empty():
    assert canny(Image.constant(16, 16, 0.6)).count() == 0


def test_canny_square_edges_near_boundary():
    px = np.zeros((32, 32, 1))
    px[8:24, 8:24] = 1.0
    edges = canny(Image(px), 150, 50).bits
    yy, xx = np.mgrid[0:32, 0:32]
    inside = (yy >= 8) & (yy < 24) & (xx >= 8) & (xx < 24)
    boundary = inside & ~((yy >= 9) & (yy < 23) & (xx >= 9) & (xx < 23))
    dist = np.full((32, 32), np.inf)
    for by, bx in np.argwhere(boundary):
        dist = np.minimum(dist, np.hypot(yy - by, xx - bx))
    assert edges.any()
    assert np.all(dist[edges] <= 1.0)
    near_edge = np.zeros_like(edges)
    for ey, ex in np.argwhere(edges):
        near_edge |= np.hypot(yy - ey, xx - ex) <= 1.0
    assert near_edge[boundary].mean() >= 0.9


def test_canny_rejects_inverted_thresholds():
    with pytest.raises(ValueError):
        canny(Image.constant(4, 4, 0.5), 10, 20)


@settings(max_examples=25, deadline=None)
@given(images(min_side=3, max_side=12), st.floats(0, 200), st.floats(0, 200), st.floats(0, 200))
def test_canny_subset_of_nms_and_monotone_in_high(img, low, h1, h2):
    h1, h2 = sorted((max(h1, low), max(h2, low)))
    support = canny_nms(img) > 0
    e1 = canny(img, h1, low).bits
    e2 = canny(img, h2, low).bits
    assert np.all(support[e1])
    assert np.all(e1[e2])  # raising high never adds pixels


# --- stages and chains


def test_empty_chain_and_double_invert_are_identity():
    img = Image(np.random.default_rng(5).random((4, 4, 3)))
    assert apply_chain(FilterChain(), img) == img
    assert apply_chain(parse_chain_spec("invert,invert"), img) == img


def test_filterprompt_struct_stages_in_order():
    chain = filterprompt_struct()
    assert [s.kind for s in chain] == ["decolorize", "invert", "autocontrast"]
    assert chain.stages[2].params["cutoff"] == 1.0


def test_filterprompt_struct_hand_trace():
    px = np.array([[[1, 0, 0], [0, 1, 0]], [[0, 0, 1], [1, 1, 1]]], dtype=np.float64)
    out = apply_chain(filterprompt_struct(), Image(px)).pixels.ravel()
    inv = [1 - 0.299, 1 - 0.587, 1 - 0.114, 0.0]
    # 4 pixels at 1% cut no pixel; bytes are 179, 105, 226, 0, so lo = 0, hi = 226.
    assert [math.floor(v * 255 + 0.5) for v in inv] == [179, 105, 226, 0]
    expected = [v / (226 / 255) for v in inv]
    assert out == pytest.approx(expected, abs=1e-12)


def test_filterprompt_struct_turns_white_lines_dark():
    px = np.zeros((8, 8, 3))
    px[3, :, :] = 1.0
    out = apply_chain(filterprompt_struct(), Image(px)).pixels[:, :, 0]
    assert np.all(out[3] == 0.0)
    assert np.all(out[np.arange(8) != 3] == 1.0)


def test_filterprompt_struct_twice_is_not_identity():
    grad = Image(np.tile(np.linspace(0.1, 0.7, 16), (4, 1)))
    chain = filterprompt_struct()
    once = apply_chain(chain, grad)
    assert apply_chain(chain, once) != grad


def test_stage_validation():
    with pytest.raises(ValueError):
        FilterStage("gaussian_blur", {"radius": -1})
    with pytest.raises(ValueError):
        FilterStage("autocontrast", {"cutoff": 60})
    with pytest.raises(ValueError):
        FilterStage("canny", {"high": 10, "low": 20})
    with pytest.raises(ValueError):
        FilterStage("gabor", {"sigma": 0})
    with pytest.raises(ValueError):
        FilterStage("nope")
    with pytest.raises(ValueError):
        FilterStage("invert", {"radius": 1})


def test_chain_serialization_round_trip():
    chain = FilterChain(
        (
            FilterStage("gaussian_blur", {"radius": 2}),
            FilterStage("gabor", {"theta": 0.1 + 0.2}),
            FilterStage("autocontrast", {"cutoff": 0.5}),
            FilterStage("canny", {"high": 120, "low": 40}),
        )
    )
    import json

    again = FilterChain.from_list(json.loads(json.dumps(chain.to_list())))
    assert again == chain
    assert again.to_list() == chain.to_list()


def test_parse_chain_spec_errors():
    with pytest.raises(ValueError):
        parse_chain_spec("blur")
    with pytest.raises(ValueError):
        parse_chain_spec("gaussian_blur:radius")
    with pytest.raises(ValueError):
        parse_chain_spec("gaussian_blur:radius=big")


def test_every_stage_kind_applies():
    img = Image(np.random.default_rng(6).random((9, 9, 3)))
    for kind in ("gaussian_blur", "sharpen", "sobel_magnitude", "gabor", "invert", "decolorize", "autocontrast", "canny"):
        out = FilterStage(kind).apply(img)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
