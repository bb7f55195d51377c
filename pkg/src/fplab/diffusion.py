"""Forward/reverse diffusion steps, closed-form and linear noise predictors,
the weighted dual-branch update and the windowed sampling loop.

Steps are indexed by ``t`` in ``1..T`` (noise level). Sampling windows are
indexed by sampling step ``k = T - t + 1``, so window ``[1, 6]`` covers the
first six reverse steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .conditioning import DEFAULT_CONDITIONS, ConditionConfig, ConditionSet, build_condition_set
from .filters import FilterChain
from .imagecore import Image

DEFAULT_T = 200
DEFAULT_BETA1 = 1e-4
DEFAULT_BETAT = 0.05
DEFAULT_BUCKETS = 20
NORMALIZATION_TOL = 1e-12


# --- schedule ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64, copy=True).ravel()
        if beta.size < 1 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("betas must lie in (0, 1)")
        alpha = 1.0 - beta
        derived = {"beta": beta, "alpha": alpha, "alpha_bar": np.cumprod(alpha), "sigma": np.sqrt(beta)}
        for name, arr in derived.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.beta.size

    def index(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} outside [1, {self.T}]")
        return t - 1

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}


def make_linear_schedule(T: int = DEFAULT_T, beta1: float = DEFAULT_BETA1, betaT: float = DEFAULT_BETAT) -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0 < beta1 <= betaT < 1:
        raise ValueError(f"need 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
    return NoiseSchedule(np.linspace(beta1, betaT, T))


def _check_dims(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"dimension mismatch between x and {what}: {np.shape(a)} vs {np.shape(b)}")


def forward_sample(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _check_dims(x0, eps, "eps")
    abar = sched.alpha_bar[sched.index(t)]
    return math.sqrt(abar) * np.asarray(x0, dtype=np.float64) + math.sqrt(1.0 - abar) * np.asarray(eps, dtype=np.float64)


def reverse_step(x_t, eps_hat, t: int, z, sched: NoiseSchedule) -> np.ndarray:
    """One ancestral update x_t -> x_{t-1}; the noise term is dropped at t = 1."""
    _check_dims(x_t, eps_hat, "eps_hat")
    if z is not None:
        _check_dims(x_t, z, "z")
    i = sched.index(t)
    a = sched.alpha[i]
    abar = sched.alpha_bar[i]
    mean = (np.asarray(x_t) - ((1.0 - a) / math.sqrt(1.0 - abar)) * np.asarray(eps_hat)) / math.sqrt(a)
    if t == 1 or z is None:
        return mean
    return mean + sched.sigma[i] * np.asarray(z)


# --- closed-form oracle -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianMixtureModel:
    """Isotropic Gaussian mixture over R^D with per-component condition anchors.

    Anchors are stored per condition block; a block whose anchors are ``None``
    never tilts the weights.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    struct_anchors: np.ndarray | None = None
    app_anchors: np.ndarray | None = None
    tau: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        stds = np.broadcast_to(np.asarray(self.stds, dtype=np.float64), w.shape).copy()
        if means.shape[0] != w.size:
            raise ValueError("one mean per component required")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError(f"weights must be non-negative and sum to 1 (sum={w.sum()})")
        if np.any(stds < 0):
            raise ValueError("component stds must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        for name in ("struct_anchors", "app_anchors"):
            anchors = getattr(self, name)
            if anchors is not None:
                anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
                if anchors.shape[0] != w.size:
                    raise ValueError(f"{name}: one anchor per component required")
                object.__setattr__(self, name, anchors)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def tilted_log_weights(self, cond: ConditionSet | None) -> np.ndarray:
        logw = np.log(np.where(self.weights > 0, self.weights, 1e-300))
        if cond is None:
            return logw
        blocks = (
            (cond.struct_on, cond.struct_cond, self.struct_anchors),
            (cond.app_on, cond.app_cond, self.app_anchors),
        )
        for on, vec, anchors in blocks:
            if not on or anchors is None:
                continue
            if anchors.shape[1] != vec.size:
                raise ValueError(f"condition block has {vec.size} entries, anchors have {anchors.shape[1]}")
            d2 = np.sum((vec[None, :] - anchors) ** 2, axis=1)
            logw = logw - d2 / (2.0 * self.tau ** 2)
        return logw

    def tilted_weights(self, cond: ConditionSet | None) -> np.ndarray:
        lw = self.tilted_log_weights(cond)
        return np.exp(lw - logsumexp(lw))

    def sample(self, n: int, rng: np.random.Generator, cond: ConditionSet | None = None):
        w = self.tilted_weights(cond)
        labels = rng.choice(self.K, size=n, p=w)
        noise = rng.standard_normal((n, self.dim))
        return self.means[labels] + self.stds[labels, None] * noise, labels


def oracle_epsilon(x_t, t: int, cond: ConditionSet | None, gm: GaussianMixtureModel, sched: NoiseSchedule) -> np.ndarray:
    """Exact E[eps | x_t, c] when x0 follows the condition-tilted mixture."""
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != gm.dim:
        raise ValueError(f"x has dimension {x.shape[1]}, mixture has {gm.dim}")
    abar = sched.alpha_bar[sched.index(t)]
    one_minus = 1.0 - abar
    if one_minus <= 0.0:
        raise ValueError("degenerate schedule: 1 - alpha_bar_t = 0")
    ra = math.sqrt(abar)
    var = abar * gm.stds ** 2 + one_minus  # (K,)
    # |x - ra mu_k|^2 expanded to keep memory at O(n K)
    sq = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * ra * (x @ gm.means.T)
        + abar * np.sum(gm.means * gm.means, axis=1)[None, :]
    )
    sq = np.maximum(sq, 0.0)
    logp = gm.tilted_log_weights(cond)[None, :] - 0.5 * gm.dim * np.log(var)[None, :] - sq / (2.0 * var[None, :])
    resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    shrink = resp @ (ra * gm.stds ** 2 / var)  # coefficient on x_t
    pull = (resp / var[None, :]) @ gm.means * one_minus
    x0_mean = shrink[:, None] * x + pull
    eps = (x - ra * x0_mean) / math.sqrt(one_minus)
    return eps[0] if single else eps


class OracleDenoiser:
    """Callable noise predictor backed by :func:`oracle_epsilon`."""

    def __init__(self, gm: GaussianMixtureModel, sched: NoiseSchedule):
        self.gm = gm
        self.sched = sched

    @property
    def dim(self) -> int:
        return self.gm.dim

    def __call__(self, x_t, t, cond):
        return oracle_epsilon(x_t, t, cond, self.gm, self.sched)


# --- linear denoiser --------------------------------------------------------


def bucket_edges(T: int, buckets: int) -> np.ndarray:
    if not 1 <= buckets <= T:
        raise ValueError(f"buckets must lie in [1, T={T}], got {buckets}")
    return np.round(np.linspace(1, T + 1, buckets + 1)).astype(np.int64)


def design_row(x_t, cond: ConditionSet) -> np.ndarray:
    """[x_t ; C_s ; C_c ; 1] for a batch of states sharing one condition."""
    x = np.atleast_2d(x_t)
    n = x.shape[0]
    tail = np.concatenate([cond.app_cond, cond.struct_cond, [1.0]])
    return np.hstack([x, np.broadcast_to(tail, (n, tail.size))])


def solve_ridge(A, E, lambda_reg: float) -> np.ndarray:
    """Solve (A^T A / n + lambda I) W = A^T E / n."""
    A = np.asarray(A, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    n = A.shape[0]
    return _solve_normal(A.T @ A, A.T @ E, n, lambda_reg)


def _solve_normal(gram, rhs, n, lambda_reg):
    lhs = gram / n + lambda_reg * np.eye(gram.shape[0])
    try:
        if lambda_reg == 0.0 and np.linalg.matrix_rank(lhs) < lhs.shape[0]:
            raise np.linalg.LinAlgError("rank deficient")
        return np.linalg.solve(lhs, rhs / n)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular normal equations (lambda_reg={lambda_reg}): {exc}") from None


@dataclass(frozen=True, eq=False)
class LinearDenoiser:
    """Per-time-bucket affine map [x_t; C_s; C_c; 1] -> eps_hat."""

    weights: np.ndarray  # (B, P, D)
    edges: np.ndarray  # (B + 1,)
    app_dim: int
    struct_dim: int
    lambda_reg: float = 0.0

    @property
    def dim(self) -> int:
        return self.weights.shape[2]

    @property
    def buckets(self) -> int:
        return self.weights.shape[0]

    def bucket_of(self, t: int) -> int:
        b = int(np.searchsorted(self.edges, t, side="right")) - 1
        if not 0 <= b < self.buckets:
            raise ValueError(f"step {t} outside the fitted range")
        return b

    def __call__(self, x_t, t, cond: ConditionSet):
        if cond.app_dim != self.app_dim or cond.struct_dim != self.struct_dim:
            raise ValueError(
                f"condition dims ({cond.struct_dim}, {cond.app_dim}) do not match the model "
                f"({self.struct_dim}, {self.app_dim})"
            )
        x = np.asarray(x_t, dtype=np.float64)
        out = design_row(x, cond) @ self.weights[self.bucket_of(t)]
        return out[0] if x.ndim == 1 else out

    def save(self, target) -> None:
        """Write an .npz archive to a path or a binary file object."""
        arrays = dict(
            weights=self.weights,
            edges=self.edges,
            dims=np.array([self.app_dim, self.struct_dim]),
            lambda_reg=np.array(self.lambda_reg),
        )
        if hasattr(target, "write"):
            np.savez(target, **arrays)
            return
        with open(target, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "LinearDenoiser":
        with np.load(path) as z:
            app_dim, struct_dim = (int(v) for v in z["dims"])
            return cls(z["weights"], z["edges"], app_dim, struct_dim, float(z["lambda_reg"]))


def fit_linear_denoiser(
    dataset: Sequence[tuple[np.ndarray, ConditionSet]],
    sched: NoiseSchedule,
    buckets: int = DEFAULT_BUCKETS,
    lambda_reg: float = 1e-6,
    samples_per_item: int = 4,
    seed: int = 0,
    chunk_rows: int = 4096,
) -> LinearDenoiser:
    """Ridge-fit one affine noise predictor per time bucket.

    For every bucket and item, ``samples_per_item`` pairs (t, eps) are drawn,
    x_t is formed by :func:`forward_sample`, and the normal equations are
    accumulated. Deterministic for a given seed.

    The ridge term acts on the mean-normalized Gram matrix, whose smallest
    eigenvalues at t = 1 are about beta_1, so ``lambda_reg`` should sit well
    below beta_1 or it shrinks the low-noise predictions.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if samples_per_item < 1:
        raise ValueError("samples_per_item must be >= 1")
    X0 = np.stack([np.asarray(x, dtype=np.float64).ravel() for x, _ in dataset])
    conds = [c for _, c in dataset]
    D = X0.shape[1]
    app_dim, struct_dim = conds[0].app_dim, conds[0].struct_dim
    if any(c.app_dim != app_dim or c.struct_dim != struct_dim for c in conds):
        raise ValueError("all dataset conditions must share dimensions")
    tails = np.stack([np.concatenate([c.app_cond, c.struct_cond, [1.0]]) for c in conds])
    edges = bucket_edges(sched.T, buckets)
    P = D + tails.shape[1]
    rng = np.random.default_rng(seed)
    item_idx = np.repeat(np.arange(len(dataset)), samples_per_item)
    n_rows = item_idx.size
    W = np.empty((buckets, P, D))
    for b in range(buckets):
        ts = rng.integers(edges[b], edges[b + 1], size=n_rows)
        eps = rng.standard_normal((n_rows, D))
        gram = np.zeros((P, P))
        rhs = np.zeros((P, D))
        for lo in range(0, n_rows, chunk_rows):
            sl = slice(lo, lo + chunk_rows)
            abar = sched.alpha_bar[ts[sl] - 1][:, None]
            xt = np.sqrt(abar) * X0[item_idx[sl]] + np.sqrt(1.0 - abar) * eps[sl]
            A = np.hstack([xt, tails[item_idx[sl]]])
            gram += A.T @ A
            rhs += A.T @ eps[sl]
        W[b] = _solve_normal(gram, rhs, n_rows, lambda_reg)
    return LinearDenoiser(W, edges, app_dim, struct_dim, lambda_reg)


# --- dual-branch sampling ---------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Sampling steps ``start..end`` (inclusive, 1 = first reverse step)."""

    start: int
    end: int
    structure: bool = True
    appearance: bool = True
    structure_chain: str | None = None
    appearance_chain: str | None = None

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "structure": self.structure,
            "appearance": self.appearance,
            "structure_chain": self.structure_chain,
            "appearance_chain": self.appearance_chain,
        }


def validate_windows(windows: Sequence[Window], T: int) -> list[Window]:
    if not windows:
        raise ValueError("at least one sampling window is required")
    ordered = sorted(windows, key=lambda w: w.start)
    expected = 1
    for w in ordered:
        if w.end < w.start:
            raise ValueError(f"window [{w.start}, {w.end}] is empty")
        if w.start != expected:
            kind = "gap" if w.start > expected else "overlap"
            raise ValueError(f"window {kind} at step {min(expected, w.start)}: windows must tile [1, {T}]")
        if not (w.structure or w.appearance):
            raise ValueError(f"window [{w.start}, {w.end}] disables both branches")
        expected = w.end + 1
    if expected != T + 1:
        raise ValueError(f"windows end at step {expected - 1}, must cover [1, {T}]")
    return ordered


@dataclass(frozen=True)
class SamplerConfig:
    alpha_w: float = 0.5
    beta_w: float = 0.5
    lambda_w: float = 1.0
    windows: tuple[Window, ...] = ()
    seed: int = 0
    allow_unnormalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        if not self.allow_unnormalized:
            total = self.alpha_w + self.beta_w * self.lambda_w
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise ValueError(f"alpha + beta * lambda = {total}, expected 1 (set allow_unnormalized to override)")

    def windows_for(self, T: int) -> list[Window]:
        if not self.windows:
            return [Window(1, T)]
        return validate_windows(self.windows, T)


Denoiser = Callable[[np.ndarray, int, ConditionSet], np.ndarray]


def dual_branch_step(x_t, t: int, cond: ConditionSet, model: Denoiser, cfg: SamplerConfig, z, sched: NoiseSchedule, window: Window | None = None):
    """X_{t-1} = alpha * x_hat(structure) + beta * lambda * x_hat(appearance).

    Each branch sees the condition with the other block zeroed and shares
    ``z``. A disabled branch's weight moves to the enabled one.
    """
    use_s = window is None or window.structure
    use_a = window is None or window.appearance
    w_struct = cfg.alpha_w
    w_app = cfg.beta_w * cfg.lambda_w
    if use_s and use_a:
        x_c = reverse_step(x_t, model(x_t, t, cond.structure_only()), t, z, sched)
        x_s = reverse_step(x_t, model(x_t, t, cond.appearance_only()), t, z, sched)
        return w_struct * x_c + w_app * x_s
    if use_s:
        return (w_struct + w_app) * reverse_step(x_t, model(x_t, t, cond.structure_only()), t, z, sched)
    if use_a:
        return (w_struct + w_app) * reverse_step(x_t, model(x_t, t, cond.appearance_only()), t, z, sched)
    raise ValueError(f"both branches disabled at t={t}")


@dataclass(frozen=True, eq=False)
class ConditionImages:
    struct_img: Image
    app_img: Image


@dataclass
class SampleResult:
    final: np.ndarray
    trajectory: list[tuple[int, np.ndarray]]
    conditions: dict


def sample_loop(
    cond_inputs,
    model: Denoiser,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    *,
    chains: Mapping[str, FilterChain] | None = None,
    n_samples: int | None = None,
    dim: int | None = None,
    snapshot_every: int = 0,
    cond_config: ConditionConfig = DEFAULT_CONDITIONS,
) -> SampleResult:
    """Run T reverse steps from x_T ~ N(0, I).

    ``cond_inputs`` is either a fixed :class:`ConditionSet` or a
    :class:`ConditionImages` pair that each window re-encodes with its own
    chains (cached per distinct chain pair). With ``n_samples`` set, all
    samples advance together as rows of one array; the draw order is
    x_T, then one z per step for t > 1.
    """
    T = sched.T
    windows = cfg.windows_for(T)
    chains = dict(chains or {})
    dim = dim if dim is not None else getattr(model, "dim", None)
    if dim is None:
        raise ValueError("sample dimension unknown: pass dim or use a model exposing .dim")

    cache: dict[tuple, ConditionSet] = {}

    def chain(name):
        if name is None:
            return FilterChain()
        if name not in chains:
            raise ValueError(f"unknown chain id {name!r}")
        return chains[name]

    def conditions_for(w: Window) -> ConditionSet:
        if isinstance(cond_inputs, ConditionSet):
            return cond_inputs
        key = (w.structure_chain, w.appearance_chain)
        if key not in cache:
            cache[key] = build_condition_set(
                cond_inputs.struct_img, cond_inputs.app_img, chain(w.structure_chain), chain(w.appearance_chain), cond_config
            )
        return cache[key]

    rng = np.random.default_rng(cfg.seed)
    shape = (dim,) if n_samples is None else (n_samples, dim)
    x = rng.standard_normal(shape)
    trajectory = []
    wi = 0
    for k in range(1, T + 1):
        while windows[wi].end < k:
            wi += 1
        w = windows[wi]
        t = T - k + 1
        z = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
        x = dual_branch_step(x, t, conditions_for(w), model, cfg, z, sched, w)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at sampling step {k}")
        if snapshot_every and (k % snapshot_every == 0 or k == T):
            trajectory.append((k, x.copy()))
    return SampleResult(x, trajectory, cache)
