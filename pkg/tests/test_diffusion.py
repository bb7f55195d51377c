import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fplab.conditioning import ConditionSet
from fplab.diffusion import (
    ConditionImages,
    GaussianMixtureModel,
    LinearDenoiser,
    NoiseSchedule,
    OracleDenoiser,
    SamplerConfig,
    Window,
    bucket_edges,
    design_row,
    dual_branch_step,
    fit_linear_denoiser,
    forward_sample,
    make_linear_schedule,
    oracle_epsilon,
    reverse_step,
    sample_loop,
    solve_ridge,
    validate_windows,
)
from fplab.filters import FilterChain, FilterStage
from fplab.toydata import ShapeSpec, gen_shape_image


def quadrature_posterior_mean(x, abar, w, mu, s, n=10_000):
    """E[x0 | x_t = x] for a 1-D mixture by midpoint quadrature over x0."""
    lo = min(m - 10 * max(sd, 1e-3) for m, sd in zip(mu, s))
    hi = max(m + 10 * max(sd, 1e-3) for m, sd in zip(mu, s))
    h = (hi - lo) / n
    grid = lo + h * (np.arange(n) + 0.5)
    prior = sum(wk * np.exp(-0.5 * ((grid - m) / sd) ** 2) / sd for wk, m, sd in zip(w, mu, s))
    like = np.exp(-0.5 * (x - math.sqrt(abar) * grid) ** 2 / (1 - abar))
    post = prior * like
    return float(np.sum(grid * post) / np.sum(post))


# --- schedule


def test_schedule_two_steps():
    sched = make_linear_schedule(2, 0.1, 0.2)
    assert np.allclose(sched.alpha_bar, [0.9, 0.72], atol=1e-15)


def test_default_schedule_algebra():
    sched = make_linear_schedule()
    assert sched.T == 200
    assert np.all(np.diff(sched.alpha_bar) < 0)
    prods = [math.prod(sched.alpha[: i + 1]) for i in range(200)]
    assert np.max(np.abs(np.array(prods) - sched.alpha_bar)) <= 1e-12
    assert np.allclose(sched.sigma ** 2, sched.beta, atol=1e-15)
    assert sched.beta[0] == 1e-4 and sched.beta[-1] == 0.05


def test_schedule_bounds_rejected():
    for args in [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)]:
        with pytest.raises(ValueError):
            make_linear_schedule(*args)


# --- forward / reverse


def test_forward_examples():
    sched = NoiseSchedule([0.75])  # alpha_bar_1 = 0.25
    assert forward_sample(np.array([1.0]), 1, np.array([0.0]), sched)[0] == 0.5
    assert forward_sample(np.array([0.0]), 1, np.array([1.0]), sched)[0] == pytest.approx(math.sqrt(0.75))
    with pytest.raises(ValueError):
        forward_sample(np.zeros(2), 1, np.zeros(3), sched)
    with pytest.raises(ValueError):
        forward_sample(np.zeros(2), 2, np.zeros(2), sched)


def test_forward_variance_monte_carlo_small():
    sched = make_linear_schedule()
    rng = np.random.default_rng(0)
    t = 50
    xt = forward_sample(np.full((20_000, 2), 0.7), t, rng.standard_normal((20_000, 2)), sched)
    var = xt.var(axis=0, ddof=1)
    target = 1 - sched.alpha_bar[t - 1]
    se = target * math.sqrt(2 / (20_000 - 1))
    assert np.all(np.abs(var - target) <= 3 * se)


def test_reverse_collapses_without_noise():
    sched = make_linear_schedule(10, 0.01, 0.2)
    x = np.array([0.3, -1.2])
    out = reverse_step(x, np.zeros(2), 5, np.zeros(2), sched)
    assert np.array_equal(out, x / math.sqrt(sched.alpha[4]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_t1_round_trip_recovers_x0(seed):
    sched = make_linear_schedule()
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(5)
    eps = rng.standard_normal(5)
    xt = forward_sample(x0, 1, eps, sched)
    back = reverse_step(xt, eps, 1, rng.standard_normal(5), sched)  # z ignored at t = 1
    assert np.max(np.abs(back - x0)) <= 1e-12 * max(1.0, np.max(np.abs(x0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.integers(2, 200))
def test_reverse_step_is_affine_in_eps(seed, a, t):
    sched = make_linear_schedule()
    rng = np.random.default_rng(seed)
    x, e1, e2, z = rng.standard_normal((4, 3))
    mixed = reverse_step(x, a * e1 + (1 - a) * e2, t, z, sched)
    combo = a * reverse_step(x, e1, t, z, sched) + (1 - a) * reverse_step(x, e2, t, z, sched)
    assert np.allclose(mixed, combo, atol=1e-10)


# --- oracle


def test_point_mass_oracle():
    sched = make_linear_schedule()
    mu = np.array([0.5, -1.0])
    gm = GaussianMixtureModel([1.0], [mu], [0.0])
    x = np.array([0.1, 0.2])
    abar = sched.alpha_bar[99]
    want = (x - math.sqrt(abar) * mu) / math.sqrt(1 - abar)
    assert np.allclose(oracle_epsilon(x, 100, None, gm, sched), want, atol=1e-12)


def test_symmetric_pair_at_origin():
    sched = make_linear_schedule()
    gm = GaussianMixtureModel([0.5, 0.5], [[-2.0], [2.0]], [0.3, 0.3])
    assert abs(oracle_epsilon(np.array([0.0]), 30, None, gm, sched)[0]) <= 1e-15


@pytest.mark.parametrize("t", [1, 20, 120, 200])
def test_oracle_matches_quadrature_1d(t):
    sched = make_linear_schedule()
    w, mu, s = [0.3, 0.7], [-1.5, 2.0], [0.4, 0.8]
    gm = GaussianMixtureModel(w, np.array(mu)[:, None], s)
    abar = sched.alpha_bar[t - 1]
    for x in (-2.0, -0.3, 0.4, 1.7):
        m = quadrature_posterior_mean(x, abar, w, mu, s)
        want = (x - math.sqrt(abar) * m) / math.sqrt(1 - abar)
        got = oracle_epsilon(np.array([x]), t, None, gm, sched)[0]
        assert abs(got - want) <= 1e-6


def test_oracle_batch_matches_rows():
    sched = make_linear_schedule()
    rng = np.random.default_rng(1)
    gm = GaussianMixtureModel([0.2, 0.5, 0.3], rng.standard_normal((3, 4)), [0.1, 0.5, 0.0])
    xs = rng.standard_normal((6, 4))
    batch = oracle_epsilon(xs, 77, None, gm, sched)
    for i in range(6):
        assert np.allclose(batch[i], oracle_epsilon(xs[i], 77, None, gm, sched), atol=1e-12)


def test_tilt_uses_only_enabled_blocks():
    anchors = np.eye(2)
    gm = GaussianMixtureModel([0.5, 0.5], [[0.0], [1.0]], [0.1, 0.1], anchors, anchors, tau=0.1)
    c = ConditionSet(anchors[0], anchors[1], np.zeros(0))
    both = gm.tilted_weights(c)
    assert both == pytest.approx([0.5, 0.5])
    assert gm.tilted_weights(c.structure_only())[0] > 0.99
    assert gm.tilted_weights(c.appearance_only())[1] > 0.99


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixtureModel([0.4, 0.4], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        GaussianMixtureModel([1.0], [[0.0]], [-1.0])
    with pytest.raises(ValueError):
        GaussianMixtureModel([1.0], [[0.0]], [1.0], tau=0.0)


# --- linear denoiser


def planted_dataset(n_items=60, D=3, app_dim=2, struct_dim=2, seed=0):
    rng = np.random.default_rng(seed)
    Ma = rng.standard_normal((D, app_dim))
    Ms = rng.standard_normal((D, struct_dim))
    b = rng.standard_normal(D)
    items = []
    for _ in range(n_items):
        ca = rng.standard_normal(app_dim)
        cs = rng.standard_normal(struct_dim)
        items.append((Ma @ ca + Ms @ cs + b, ConditionSet(cs, ca, np.zeros(0))))
    return items, Ma, Ms, b


def planted_weights(sched, t, Ma, Ms, b):
    abar = sched.alpha_bar[t - 1]
    r, q = math.sqrt(abar), math.sqrt(1 - abar)
    D = b.size
    return np.vstack([np.eye(D) / q, -r * Ma.T / q, -r * Ms.T / q, -r * b[None, :] / q])


def test_planted_linear_weights_recovered():
    # beta_1 = 0.2 keeps x_t well away from collinear with the conditions, so
    # the ridge bias lambda * |W| / eig_min stays far below the tolerance.
    sched = make_linear_schedule(8, 0.2, 0.5)
    items, Ma, Ms, b = planted_dataset()
    model = fit_linear_denoiser(items, sched, buckets=8, lambda_reg=1e-8, samples_per_item=4, seed=3)
    for t in range(1, 9):
        W = model.weights[model.bucket_of(t)]
        assert np.max(np.abs(W - planted_weights(sched, t, Ma, Ms, b))) <= 1e-4


def test_duplicated_rows_give_identical_fit():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((40, 5))
    E = rng.standard_normal((40, 3))
    W1 = solve_ridge(A, E, 1e-3)
    W2 = solve_ridge(np.vstack([A, A]), np.vstack([E, E]), 1e-3)
    assert np.allclose(W1, W2, rtol=0, atol=1e-12)


def test_fit_is_deterministic_and_round_trips(tmp_path):
    sched = make_linear_schedule(20, 0.01, 0.2)
    items, *_ = planted_dataset(20)
    m1 = fit_linear_denoiser(items, sched, buckets=4, lambda_reg=1e-3, samples_per_item=2, seed=9)
    m2 = fit_linear_denoiser(items, sched, buckets=4, lambda_reg=1e-3, samples_per_item=2, seed=9)
    assert np.array_equal(m1.weights, m2.weights)
    m1.save(tmp_path / "m.npz")
    m3 = LinearDenoiser.load(tmp_path / "m.npz")
    assert np.array_equal(m3.weights, m1.weights) and np.array_equal(m3.edges, m1.edges)
    assert (m3.app_dim, m3.struct_dim, m3.lambda_reg) == (2, 2, 1e-3)


def test_fit_errors():
    sched = make_linear_schedule(10, 0.01, 0.2)
    with pytest.raises(ValueError):
        fit_linear_denoiser([], sched)
    x0 = np.zeros(2)
    items = [(x0, ConditionSet(np.zeros(1), np.zeros(1), np.zeros(0)))] * 3
    with pytest.raises(ValueError, match="singular"):
        fit_linear_denoiser(items, sched, buckets=2, lambda_reg=0.0)


def test_bucket_edges_partition():
    e = bucket_edges(200, 20)
    assert e[0] == 1 and e[-1] == 201 and np.all(np.diff(e) == 10)
    e = bucket_edges(7, 3)
    assert e[0] == 1 and e[-1] == 8 and np.all(np.diff(e) > 0)


def test_linear_model_rejects_wrong_condition_dims():
    model = LinearDenoiser(np.zeros((1, 4, 2)), np.array([1, 11]), 1, 0)
    ok = ConditionSet(np.zeros(0), np.zeros(1), np.zeros(0))
    assert model(np.zeros(2), 5, ok).shape == (2,)
    with pytest.raises(ValueError):
        model(np.zeros(2), 5, ConditionSet(np.zeros(1), np.zeros(1), np.zeros(0)))
    assert design_row(np.ones(2), ok).tolist() == [[1.0, 1.0, 0.0, 1.0]]


# --- dual-branch step


def _cond_model():
    anchors = np.eye(3)
    gm = GaussianMixtureModel(np.full(3, 1 / 3), np.diag([2.0, -1.0, 0.5]), np.full(3, 0.2), anchors, anchors, tau=0.5)
    sched = make_linear_schedule()
    return OracleDenoiser(gm, sched), sched, ConditionSet(anchors[0], anchors[2], np.zeros(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_weight_degeneracies_bitwise(seed, t):
    model, sched, cond = _cond_model()
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal((2, 3))
    s_only = reverse_step(x, model(x, t, cond.structure_only()), t, z, sched)
    a_only = reverse_step(x, model(x, t, cond.appearance_only()), t, z, sched)
    assert np.array_equal(dual_branch_step(x, t, cond, model, SamplerConfig(1.0, 0.0), z, sched), s_only)
    assert np.array_equal(dual_branch_step(x, t, cond, model, SamplerConfig(0.0, 0.5, 2.0), z, sched), a_only)


def test_identical_branches_equal_single_branch():
    sched = make_linear_schedule()
    blind = lambda x, t, c: 0.1 * np.asarray(x)  # ignores the condition
    cond = ConditionSet(np.ones(2), np.zeros(2), np.zeros(0))
    x, z = np.array([0.3, -0.4]), np.array([1.0, 2.0])
    single = reverse_step(x, blind(x, 9, cond), 9, z, sched)
    assert np.array_equal(dual_branch_step(x, 9, cond, blind, SamplerConfig(0.5, 0.5), z, sched), single)


def test_disabled_branch_weight_moves_to_other():
    model, sched, cond = _cond_model()
    x, z = np.ones(3), np.zeros(3)
    cfg = SamplerConfig(0.3, 0.7)
    w = Window(1, 200, structure=True, appearance=False)
    out = dual_branch_step(x, 50, cond, model, cfg, z, sched, w)
    assert np.allclose(out, reverse_step(x, model(x, 50, cond.structure_only()), 50, z, sched), atol=1e-15)
    with pytest.raises(ValueError):
        dual_branch_step(x, 50, cond, model, cfg, z, sched, Window(1, 200, False, False))


def test_normalization_enforced_unless_overridden():
    with pytest.raises(ValueError):
        SamplerConfig(0.6, 0.6)
    assert SamplerConfig(0.6, 0.6, allow_unnormalized=True).beta_w == 0.6
    assert SamplerConfig(0.5, 0.25, 2.0).lambda_w == 2.0


# --- windows and sampling loop


def test_window_validation():
    assert validate_windows([Window(7, 10), Window(1, 6)], 10)[0].start == 1
    for ws in ([Window(1, 5), Window(7, 10)], [Window(1, 6), Window(6, 10)], [Window(1, 9)], [Window(1, 10, False, False)]):
        with pytest.raises(ValueError):
            validate_windows(ws, 10)
    with pytest.raises(ValueError):
        validate_windows([Window(3, 2), Window(1, 10)], 10)


def _image_setup():
    struct = gen_shape_image(ShapeSpec("circle", "solid", (0.8, 0.8, 0.8), (0.1, 0.1, 0.1), size=8), 0)
    app = gen_shape_image(ShapeSpec("square", "stripes", (0.9, 0.5, 0.2), (0.1, 0.1, 0.2), size=8, period=2), 0)
    sched = make_linear_schedule(30, 1e-3, 0.3)
    rng = np.random.default_rng(0)
    gm = GaussianMixtureModel(
        np.full(4, 0.25), rng.random((4, 192)), np.full(4, 0.05), rng.random((4, 256)), rng.random((4, 64)), tau=2.0
    )
    return ConditionImages(struct, app), OracleDenoiser(gm, sched), sched


def test_sample_loop_deterministic_with_snapshots():
    inputs, model, sched = _image_setup()
    chains = {"blur": FilterChain((FilterStage("gaussian_blur", {"radius": 2}),))}
    cfg = SamplerConfig(windows=(Window(1, 12, appearance_chain="blur"), Window(13, 30)), seed=5)
    r1 = sample_loop(inputs, model, cfg, sched, chains=chains, snapshot_every=10)
    r2 = sample_loop(inputs, model, cfg, sched, chains=chains, snapshot_every=10)
    assert np.array_equal(r1.final, r2.final)
    assert [k for k, _ in r1.trajectory] == [10, 20, 30]
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(r1.trajectory, r2.trajectory))
    assert np.array_equal(r1.trajectory[-1][1], r1.final)
    assert len(r1.conditions) == 2  # one encoding per distinct chain pair


def test_late_appearance_schedule_changes_result():
    inputs, model, sched = _image_setup()
    always = SamplerConfig(seed=2)
    late = SamplerConfig(windows=(Window(1, 6, appearance=False), Window(7, 30)), seed=2)
    a = sample_loop(inputs, model, always, sched)
    b = sample_loop(inputs, model, late, sched)
    assert not np.array_equal(a.final, b.final)


def test_sample_loop_unknown_chain_and_dim():
    inputs, model, sched = _image_setup()
    with pytest.raises(ValueError):
        sample_loop(inputs, model, SamplerConfig(windows=(Window(1, 30, appearance_chain="nope"),)), sched)
    with pytest.raises(ValueError):
        sample_loop(inputs, lambda x, t, c: x, SamplerConfig(), sched)


def test_batched_sampling_shapes():
    inputs, model, sched = _image_setup()
    res = sample_loop(inputs, model, SamplerConfig(seed=1), sched, n_samples=3)
    assert res.final.shape == (3, 192)
