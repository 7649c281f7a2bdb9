"""Flat progressive-partitioning learner.

A codebook of weighted prototypes is trained online.  At a fixed temperature
the prototype statistics follow gradient-free stochastic-approximation
recursions driven by Gibbs association probabilities; an outer loop anneals
the temperature geometrically, doubling the codebook by small perturbations
at each level and re-merging the pairs that did not separate.  The number of
distinct prototypes therefore grows only when the temperature crosses a
critical value of the data itself, which `critical_lambda` estimates from the
curvature of the divergence and the largest covariance eigenvalue.

Concurrency: one state has one writer.  Read-only queries (predict_region,
average_distortion, density_at) may run concurrently with each other but not
with training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .divergence import (
    DivergenceKind,
    DomainError,
    POSITIVE_FLOOR,
    divergences_to,
    pairwise_divergence,
    phi_second_derivative,
    scale_factor,
)

__all__ = [
    "AnnealerState",
    "AnnealingConfig",
    "Codevector",
    "ConfigError",
    "CorruptStateError",
    "CurvePoint",
    "EmptyStreamError",
    "NumericError",
    "Trainer",
    "anneal_fit",
    "average_distortion",
    "converged_at_level",
    "critical_lambda",
    "density_at",
    "estimate_cell_volumes",
    "gibbs_memberships",
    "maybe_insert_class",
    "merge_effective",
    "perturb_codebook",
    "predict_region",
    "predict_region_many",
    "remove_idle",
    "sa_step",
]

# Nominal seconds per divergence evaluation.  Curve logs report elapsed time
# as work_units * WORK_UNIT_SECONDS so that identical seeded runs produce
# byte-identical logs; wall-clock timing would break that determinism.
WORK_UNIT_SECONDS = 5e-8

# How many initial observations feed the automatic perturbation-size estimate.
SCALE_ESTIMATE_SAMPLES = 100

# Smoothing weight for the convergence trigger's running movement mean.
MOVE_EMA_WEIGHT = 1.0 / 16.0


class ConfigError(ValueError):
    """Invalid annealing configuration."""


class EmptyStreamError(ValueError):
    """The observation stream produced no data."""


class CorruptStateError(RuntimeError):
    """Internal invariants violated (e.g. all priors zero)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during training."""


@dataclass
class Codevector:
    """One prototype: location mu, prior estimate rho, weighted sum sigma.

    The location always equals weighted_sum / prior.  `label` is set in
    classification mode, `model_params` when a local output model is
    attached (see the models module for the parameter layout).
    """

    location: np.ndarray
    prior: float
    weighted_sum: np.ndarray
    label: Optional[int] = None
    model_params: Optional[np.ndarray] = None


@dataclass
class AnnealingConfig:
    """Temperature schedule, tolerances and stepsizes for one learner.

    delta=None estimates the perturbation size from the first
    SCALE_ESTIMATE_SAMPLES observations as 0.01 x the mean per-coordinate
    standard deviation.
    """

    lambda_start: float = 0.99
    gamma: float = 0.9
    lambda_min: float = 0.01
    eps_converge: float = 1e-4
    eps_merge: float = 1e-2
    eps_idle: float = 1e-4
    delta: Optional[float] = None
    stepsize_a: float = 1.0
    stepsize_b: float = 0.5
    k_max: int = 128
    max_iters_per_level: int = 20000

    def validate(self) -> None:
        if not (0.0 < self.lambda_min < self.lambda_start < 1.0):
            raise ConfigError(
                f"need 0 < lambda_min < lambda_start < 1, got "
                f"lambda_min={self.lambda_min}, lambda_start={self.lambda_start}"
            )
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("eps_converge", "eps_merge", "eps_idle"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive (or None for automatic)")
        if self.stepsize_a <= 0 or self.stepsize_b <= 0:
            raise ConfigError("stepsize parameters must be positive")
        if self.k_max < 1:
            raise ConfigError("k_max must be a positive integer")
        if self.max_iters_per_level < 1:
            raise ConfigError("max_iters_per_level must be a positive integer")

    def alpha(self, n: int) -> float:
        """Slow stepsize 1 / (a + b n), n counted per observation."""
        return 1.0 / (self.stepsize_a + self.stepsize_b * n)


@dataclass
class CurvePoint:
    """One row of the performance-curve log, emitted per temperature level.

    elapsed_seconds is a deterministic work estimate (divergence
    evaluations x nominal rate), not wall-clock time, so that repeated
    seeded runs log identical values.
    """

    lambda_: float
    temperature: float
    metric: float
    codevector_count: int
    samples_observed: int
    elapsed_seconds: float

    def as_row(self) -> list:
        return [
            self.lambda_,
            self.temperature,
            self.metric,
            self.codevector_count,
            self.samples_observed,
            self.elapsed_seconds,
        ]


@dataclass
class LevelRecord:
    """Outcome of one temperature level (converged vs iteration-capped)."""

    lambda_: float
    converged: bool
    iterations: int


class AnnealerState:
    """Mutable state of one flat learner.

    Prototype statistics are kept as stacked arrays (locations (K, d),
    priors (K,), weighted_sums (K, d)) for vectorized updates; the
    `codevectors` property materializes per-prototype records.
    """

    def __init__(self, config: AnnealingConfig, divergence: DivergenceKind):
        config.validate()
        self.config = config
        self.divergence = divergence
        self.lambda_ = config.lambda_start
        self.locations: np.ndarray = np.empty((0, 0))
        self.priors: np.ndarray = np.empty(0)
        self.weighted_sums: np.ndarray = np.empty((0, 0))
        self.labels: Optional[np.ndarray] = None
        # Local-model storage, managed by the models module.
        self.model_kind: Optional[str] = None  # None | "constant" | "affine"
        self.out_sums: Optional[np.ndarray] = None  # (K,) constant-model accumulators
        self.model_weights: Optional[np.ndarray] = None  # (K, d) affine weights
        self.model_biases: Optional[np.ndarray] = None  # (K,) affine offsets
        self.model_steps: Optional[np.ndarray] = None  # (K,) fast-update counters
        # Bookkeeping.
        self.samples_seen = 0
        self.step_index = 0  # observation index within the current level
        self.hit_counts: np.ndarray = np.empty(0)  # training hits per cell
        self.bbox_min: Optional[np.ndarray] = None
        self.bbox_max: Optional[np.ndarray] = None
        self.work_units = 0  # divergence evaluations spent training
        self.curve_log: list[CurvePoint] = []
        self.level_log: list[LevelRecord] = []
        self.delta: Optional[float] = config.delta  # resolved perturbation size

    # -- introspection -------------------------------------------------

    @property
    def k(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def temperature(self) -> float:
        return self.lambda_ / (1.0 - self.lambda_)

    @property
    def codevectors(self) -> list[Codevector]:
        out = []
        for i in range(self.k):
            out.append(
                Codevector(
                    location=self.locations[i].copy(),
                    prior=float(self.priors[i]),
                    weighted_sum=self.weighted_sums[i].copy(),
                    label=None if self.labels is None else int(self.labels[i]),
                    model_params=self._model_params(i),
                )
            )
        return out

    def _model_params(self, i: int) -> Optional[np.ndarray]:
        if self.model_kind == "constant":
            return np.array([self.out_sums[i]])
        if self.model_kind == "affine":
            return np.append(self.model_weights[i], self.model_biases[i])
        return None

    # -- codebook surgery ----------------------------------------------

    def init_first(self, x: np.ndarray, label: Optional[int] = None,
                   y: Optional[float] = None) -> None:
        """Seed the codebook with a single prototype at the first observation."""
        x = np.asarray(x, dtype=float)
        self.locations = x[None, :].copy()
        self.priors = np.array([1.0])
        self.weighted_sums = x[None, :].copy()
        if label is not None:
            self.labels = np.array([label], dtype=int)
        if self.model_kind == "constant":
            self.out_sums = np.array([0.0 if y is None else float(y)])
        elif self.model_kind == "affine":
            d = x.shape[0]
            self.model_weights = np.zeros((1, d))
            self.model_biases = np.zeros(1)
            self.model_steps = np.zeros(1, dtype=int)
        self.hit_counts = np.array([1.0])
        self.samples_seen = 1
        self._track_bbox(x)

    def _track_bbox(self, x: np.ndarray) -> None:
        if self.bbox_min is None:
            self.bbox_min = x.copy()
            self.bbox_max = x.copy()
        else:
            np.minimum(self.bbox_min, x, out=self.bbox_min)
            np.maximum(self.bbox_max, x, out=self.bbox_max)

    def _take(self, keep: np.ndarray) -> None:
        """Restrict every per-codevector array to the given index order."""
        self.locations = self.locations[keep]
        self.priors = self.priors[keep]
        self.weighted_sums = self.weighted_sums[keep]
        self.hit_counts = self.hit_counts[keep]
        if self.labels is not None:
            self.labels = self.labels[keep]
        if self.out_sums is not None:
            self.out_sums = self.out_sums[keep]
        if self.model_weights is not None:
            self.model_weights = self.model_weights[keep]
            self.model_biases = self.model_biases[keep]
            self.model_steps = self.model_steps[keep]


# ----------------------------------------------------------------------
# Memberships and single-prototype updates
# ----------------------------------------------------------------------


def gibbs_memberships(state: AnnealerState, x) -> np.ndarray:
    """Association probabilities p(mu_i | x) at the current temperature.

    p_i is proportional to rho_i * exp(-((1 - lambda)/lambda) d(x, mu_i)),
    computed in log space with max subtraction so exponents up to +-700 in
    magnitude neither overflow nor underflow the normalization.
    """
    if state.k < 1:
        raise CorruptStateError("no codevectors")
    x = np.asarray(x, dtype=float)
    divs = divergences_to(state.divergence, x, state.locations)
    return _memberships_from_divs(state, divs)


def _memberships_from_divs(state: AnnealerState, divs: np.ndarray) -> np.ndarray:
    if not np.any(state.priors > 0):
        raise CorruptStateError("all priors are zero")
    with np.errstate(divide="ignore"):
        logits = np.log(state.priors) - scale_factor(state.lambda_) * divs
    logits -= logits.max()
    weights = np.exp(logits)
    return weights / weights.sum()


def sa_step(cv: Codevector, x, membership: float, alpha: float) -> Codevector:
    """One stochastic-approximation update of a single prototype.

    rho <- rho + alpha (p - rho); sigma <- sigma + alpha (x p - sigma);
    location <- sigma / rho.
    """
    if not 0.0 <= membership <= 1.0:
        raise ValueError(f"membership must lie in [0, 1], got {membership}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.asarray(x, dtype=float)
    prior = cv.prior + alpha * (membership - cv.prior)
    weighted_sum = cv.weighted_sum + alpha * (x * membership - cv.weighted_sum)
    assert prior > 0.0, "prior driven to zero; cannot happen for alpha <= 1"
    return replace(
        cv, prior=prior, weighted_sum=weighted_sum, location=weighted_sum / prior
    )


def converged_at_level(prev_locations: np.ndarray, state: AnnealerState) -> bool:
    """True when every prototype's scaled movement since the snapshot is
    below eps_converge.  The iteration cap is reported separately by the
    trainer's level log."""
    if prev_locations.shape != state.locations.shape:
        raise ValueError("snapshot is not aligned with the current codebook")
    scale = scale_factor(state.lambda_)
    moved = np.array(
        [
            pairwise_divergence(
                state.divergence, state.locations[i][None, :], prev_locations[i][None, :]
            )[0, 0]
            for i in range(state.k)
        ]
    )
    return bool(np.all(scale * moved < state.config.eps_converge))


# ----------------------------------------------------------------------
# Codebook restructuring
# ----------------------------------------------------------------------


def perturb_codebook(state: AnnealerState, rng: np.random.Generator) -> AnnealerState:
    """Replace every prototype by the pair {mu + delta u, mu - delta u}.

    u is a fresh random unit vector per prototype.  Children split the
    parent's prior (and hit count) evenly and inherit label and model
    parameters.  Under generalized KL a pair that leaves the positive
    orthant is retried with half the magnitude, up to 10 times.
    """
    if state.k > state.config.k_max:
        raise CorruptStateError(
            f"cannot perturb: {state.k} codevectors exceed k_max={state.config.k_max}"
        )
    if state.delta is None:
        raise CorruptStateError("perturbation size not resolved yet")
    k, d = state.locations.shape
    plus = np.empty((k, d))
    minus = np.empty((k, d))
    for i in range(k):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        delta = state.delta
        for attempt in range(11):
            plus[i] = state.locations[i] + delta * u
            minus[i] = state.locations[i] - delta * u
            if state.divergence is not DivergenceKind.GENERALIZED_KL:
                break
            if plus[i].min() > POSITIVE_FLOOR and minus[i].min() > POSITIVE_FLOOR:
                break
            if attempt == 10:
                raise DomainError(
                    "perturbation left the positive orthant even after 10 halvings"
                )
            delta /= 2.0

    # Interleave so each parent's pair stays adjacent.
    new_loc = np.empty((2 * k, d))
    new_loc[0::2] = plus
    new_loc[1::2] = minus
    half = np.repeat(state.priors, 2) / 2.0
    state.locations = new_loc
    state.priors = half
    state.weighted_sums = new_loc * half[:, None]
    state.hit_counts = np.repeat(state.hit_counts, 2) / 2.0
    if state.labels is not None:
        state.labels = np.repeat(state.labels, 2)
    if state.out_sums is not None:
        state.out_sums = np.repeat(state.out_sums, 2) / 2.0
    if state.model_weights is not None:
        state.model_weights = np.repeat(state.model_weights, 2, axis=0)
        state.model_biases = np.repeat(state.model_biases, 2)
        state.model_steps = np.repeat(state.model_steps, 2)
    return state


def merge_effective(state: AnnealerState) -> AnnealerState:
    """Absorb near-duplicate prototypes (greedy, in index order).

    Prototype j absorbs i > j when the scaled divergence d(mu_j, mu_i)
    falls below eps_merge and, in classification mode, labels agree.  The
    absorber gains the absorbed prior and weighted sum, so total prior
    mass is conserved and the merged location is the prior-weighted mean.
    """
    scale = scale_factor(state.lambda_)
    alive = np.ones(state.k, dtype=bool)
    for j in range(state.k):
        if not alive[j]:
            continue
        for i in range(j + 1, state.k):
            if not alive[i]:
                continue
            if state.labels is not None and state.labels[i] != state.labels[j]:
                continue
            div = pairwise_divergence(
                state.divergence,
                state.locations[j][None, :],
                state.locations[i][None, :],
            )[0, 0]
            if scale * div < state.config.eps_merge:
                state.priors[j] += state.priors[i]
                state.weighted_sums[j] += state.weighted_sums[i]
                state.hit_counts[j] += state.hit_counts[i]
                if state.out_sums is not None:
                    state.out_sums[j] += state.out_sums[i]
                state.locations[j] = state.weighted_sums[j] / state.priors[j]
                alive[i] = False
    if not alive.all():
        state._take(np.flatnonzero(alive))
    return state


def remove_idle(state: AnnealerState) -> AnnealerState:
    """Drop prototypes whose prior fell below eps_idle, then renormalize.

    Weighted sums (and constant-model accumulators) are rescaled by the
    same factor as the priors so locations and model values are unchanged.
    The last prototype overall, and the last of any label, is never
    dropped.  Hit counts of dropped cells migrate to the nearest surviving
    cell (same label when labelled) to keep their total equal to the
    number of observed samples.
    """
    keep = state.priors >= state.config.eps_idle
    if not keep.any():
        keep[int(np.argmax(state.priors))] = True
    if state.labels is not None:
        for lab in np.unique(state.labels):
            mask = state.labels == lab
            if not keep[mask].any():
                idx = np.flatnonzero(mask)
                keep[idx[np.argmax(state.priors[idx])]] = True
    dropped = np.flatnonzero(~keep)
    if dropped.size:
        kept = np.flatnonzero(keep)
        for i in dropped:
            candidates = kept
            if state.labels is not None:
                same = kept[state.labels[kept] == state.labels[i]]
                if same.size:
                    candidates = same
            divs = pairwise_divergence(
                state.divergence, state.locations[i][None, :], state.locations[candidates]
            )[0]
            state.hit_counts[candidates[int(np.argmin(divs))]] += state.hit_counts[i]
        state._take(kept)
    total = state.priors.sum()
    state.priors /= total
    state.weighted_sums /= total
    if state.out_sums is not None:
        state.out_sums /= total
    return state


def maybe_insert_class(state: AnnealerState, x, label: int) -> AnnealerState:
    """Append a prototype at x carrying `label` if the label is new.

    The newcomer takes prior 1/K_new; existing priors (and weighted sums,
    keeping locations fixed) are scaled down so the total stays 1.
    """
    if state.labels is None:
        raise CorruptStateError("state is not in classification mode")
    if label in state.labels:
        return state
    x = np.asarray(x, dtype=float)
    k_new = state.k + 1
    share = 1.0 / k_new
    rescale = (1.0 - share) / state.priors.sum()
    state.priors = np.append(state.priors * rescale, share)
    state.weighted_sums = np.vstack([state.weighted_sums * rescale, x * share])
    if state.out_sums is not None:
        state.out_sums = np.append(state.out_sums * rescale, 0.0)
    state.locations = np.vstack([state.locations, x])
    state.labels = np.append(state.labels, label)
    state.hit_counts = np.append(state.hit_counts, 0.0)
    if state.model_weights is not None:
        state.model_weights = np.vstack([state.model_weights, np.zeros(state.dim)])
        state.model_biases = np.append(state.model_biases, 0.0)
        state.model_steps = np.append(state.model_steps, 0)
    return state


# ----------------------------------------------------------------------
# Queries
# ----------------------------------------------------------------------


def predict_region(state: AnnealerState, x) -> int:
    """Index of the nearest prototype (ties to the lowest index)."""
    if state.k < 1:
        raise CorruptStateError("no codevectors")
    divs = divergences_to(state.divergence, np.asarray(x, dtype=float), state.locations)
    return int(np.argmin(divs))


def predict_region_many(state: AnnealerState, points: np.ndarray,
                        chunk: int = 8192) -> np.ndarray:
    """Vectorized predict_region over rows of `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(points.shape[0], dtype=int)
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        out[start:start + chunk] = pairwise_divergence(
            state.divergence, block, state.locations
        ).argmin(axis=1)
    return out


def average_distortion(state: AnnealerState, batch: np.ndarray,
                       chunk: int = 8192) -> float:
    """Mean divergence between each batch point and its nearest prototype."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    total = 0.0
    for start in range(0, batch.shape[0], chunk):
        block = batch[start:start + chunk]
        total += pairwise_divergence(state.divergence, block, state.locations).min(
            axis=1
        ).sum()
    return total / batch.shape[0]


def critical_lambda(kind: DivergenceKind, node_samples: np.ndarray) -> float:
    """Temperature threshold below which the codebook of this sample splits.

    Computes the largest eigenvalue nu of the (population) sample
    covariance and the maximum coordinate curvature kappa of phi at the
    sample mean; the critical point satisfies T* = kappa * nu, returned
    as lambda* = T* / (1 + T*).  A degenerate batch returns 0 (no split
    at any temperature).
    """
    batch = np.atleast_2d(np.asarray(node_samples, dtype=float))
    if batch.ndim != 2 or batch.shape[0] < 2:
        raise ValueError("need a batch of at least 2 samples")
    mean = batch.mean(axis=0)
    centered = batch - mean
    cov = centered.T @ centered / batch.shape[0]
    nu = float(np.linalg.eigvalsh(cov)[-1])
    if nu <= 1e-15:
        return 0.0
    kappa = float(phi_second_derivative(kind, mean).max())
    t_star = kappa * nu
    return t_star / (1.0 + t_star)


def estimate_cell_volumes(state: AnnealerState, rng: np.random.Generator,
                          n_samples: int = 100_000) -> np.ndarray:
    """Monte-Carlo Voronoi-cell volumes over the observed bounding box."""
    if state.bbox_min is None:
        raise CorruptStateError("no observations seen; bounding box unknown")
    box_volume = float(np.prod(state.bbox_max - state.bbox_min))
    points = rng.uniform(state.bbox_min, state.bbox_max, size=(n_samples, state.dim))
    winners = predict_region_many(state, points)
    counts = np.bincount(winners, minlength=state.k)
    return counts / n_samples * box_volume


def density_at(state: AnnealerState, x, n_total: int,
               volume_estimates: np.ndarray) -> float:
    """Histogram-style density estimate count(S_i) / (n Vol(S_i)) at x."""
    i = predict_region(state, x)
    vol = float(volume_estimates[i])
    if vol <= 0.0:
        raise ValueError(f"cell {i} has zero estimated volume")
    return float(state.hit_counts[i]) / (n_total * vol)


# ----------------------------------------------------------------------
# Training engine
# ----------------------------------------------------------------------


class Trainer:
    """Incremental driver for one learner: feed observations one at a time.

    Handles level transitions (perturb / converge / merge / prune / decay)
    internally, so a caller can simply loop `observe` until `done`.  Tasks:

    - "cluster":          unsupervised partitioning
    - "regress-constant": adds per-cell running output means
    - "regress-affine":   adds per-cell affine models on a fast timescale
    - "classify":         label-gated updates plus new-label insertion

    `eval_set` (a batch, optionally with outputs/labels) makes the curve
    metric an evaluation-set distortion / MSE / accuracy computed at each
    level end; otherwise the metric is the running value over the level.
    """

    def __init__(
        self,
        config: AnnealingConfig,
        divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
        *,
        task: str = "cluster",
        rng: Optional[np.random.Generator] = None,
        fast_beta: Optional[Callable[[int], float]] = None,
        eval_set: Optional[tuple] = None,
        level_callback: Optional[Callable[["Trainer", CurvePoint], None]] = None,
    ):
        if task not in ("cluster", "regress-constant", "regress-affine", "classify"):
            raise ConfigError(f"unknown task {task!r}")
        if task == "regress-affine" and fast_beta is None:
            raise ConfigError("regress-affine requires a fast stepsize schedule")
        self.config = config
        self.task = task
        self.rng = rng if rng is not None else np.random.default_rng()
        self.fast_beta = fast_beta
        self.eval_set = eval_set
        self.level_callback = level_callback
        self.state = AnnealerState(config, divergence)
        if task == "regress-constant":
            self.state.model_kind = "constant"
        elif task == "regress-affine":
            self.state.model_kind = "affine"
        self.class_counts: dict[int, int] = {}
        self.done = False
        self._level_open = False
        self._pending: list[tuple] = []  # warmup buffer while delta is unresolved
        self._metric_sum = 0.0
        self._metric_n = 0
        self._move_ema: Optional[float] = None

    # -- public API ------------------------------------------------------

    def observe(self, x, y: Optional[float] = None,
                label: Optional[int] = None) -> None:
        if self.done:
            raise RuntimeError("trainer already terminated")
        x = np.asarray(x, dtype=float)
        if self.state.delta is None:
            self._pending.append((x, y, label))
            if len(self._pending) >= SCALE_ESTIMATE_SAMPLES:
                self._flush_pending()
            return
        self._train_one(x, y, label)

    def finalize(self) -> AnnealerState:
        """Close out training when the stream is exhausted."""
        if self.state.delta is None and self._pending:
            self._flush_pending()
        if self._level_open:
            self._end_level(converged=False)
        self.done = True
        if self.state.k == 0:
            raise EmptyStreamError("observation stream was empty")
        return self.state

    # -- internals ---------------------------------------------------------

    def _flush_pending(self) -> None:
        xs = np.array([p[0] for p in self._pending])
        spread = xs.std(axis=0).mean() if len(xs) > 1 else 0.0
        self.state.delta = 0.01 * spread if spread > 0 else 1e-3
        pending, self._pending = self._pending, []
        for x, y, label in pending:
            self._train_one(x, y, label)

    def _train_one(self, x: np.ndarray, y, label) -> None:
        st = self.state
        if st.k == 0:
            if self.task == "classify" and label is None:
                raise ValueError("classification task requires labels")
            st.init_first(x, label=label if self.task == "classify" else None, y=y)
            if self.task == "classify":
                self.class_counts[label] = 1
            return
        if not self._level_open:
            self._begin_level()
        if self.task == "classify":
            self.class_counts[label] = self.class_counts.get(label, 0) + 1
            maybe_insert_class(st, x, label)
        st._track_bbox(x)
        st.samples_seen += 1

        divs = divergences_to(st.divergence, x, st.locations)
        st.work_units += st.k
        memberships = _memberships_from_divs(st, divs)
        winner = int(np.argmin(divs))
        # The level-local stepsize index starts at 1: alpha(0) = 1/a would be
        # a full-replacement step at the default a = 1, collapsing every
        # prototype onto the level's first observation (and zeroing priors
        # whose membership underflowed).  alpha < 1 keeps priors positive.
        alpha = self.config.alpha(st.step_index + 1)
        prev_locations = st.locations.copy()

        if self.task == "classify":
            effective = memberships * (st.labels == label)
        else:
            effective = memberships
        st.priors += alpha * (effective - st.priors)
        st.weighted_sums += alpha * (x * effective[:, None] - st.weighted_sums)
        st.locations = st.weighted_sums / st.priors[:, None]

        self._accumulate_metric(divs, winner, x, y, label)

        if self.task == "regress-constant":
            st.out_sums += alpha * (y * memberships - st.out_sums)
        elif self.task == "regress-affine":
            beta = self.fast_beta(int(st.model_steps[winner]))
            residual = float(st.model_weights[winner] @ x + st.model_biases[winner] - y)
            st.model_weights[winner] -= beta * 2.0 * residual * x
            st.model_biases[winner] -= beta * 2.0 * residual
            st.model_steps[winner] += 1
            if not (np.isfinite(st.model_weights[winner]).all()
                    and math.isfinite(st.model_biases[winner])):
                raise NumericError("affine model diverged (non-finite parameters)")

        if self.task == "classify":
            same = np.flatnonzero(st.labels == label)
            hit = same[int(np.argmin(divs[same]))]
        else:
            hit = winner
        st.hit_counts[hit] += 1.0
        st.step_index += 1

        if st.divergence is DivergenceKind.SQUARED_EUCLIDEAN:
            diff = st.locations - prev_locations
            moved = np.einsum("kd,kd->k", diff, diff)
        else:
            moved = np.array([
                pairwise_divergence(st.divergence, st.locations[i][None, :],
                                    prev_locations[i][None, :])[0, 0]
                for i in range(st.k)
            ])
        st.work_units += st.k
        # Convergence trigger: running mean of the worst per-observation
        # scaled movement.  The raw single-observation condition fires on the
        # first sample that happens to land near its prototype (a geometric
        # waiting time, nearly independent of actual convergence); averaging
        # restores the intended behavior that lower temperatures take longer.
        worst = float(scale_factor(st.lambda_) * moved.max())
        if self._move_ema is None:
            self._move_ema = worst
        else:
            self._move_ema += MOVE_EMA_WEIGHT * (worst - self._move_ema)
        if self._move_ema < self.config.eps_converge:
            self._end_level(converged=True)
        elif st.step_index >= self.config.max_iters_per_level:
            self._end_level(converged=False)

    def _begin_level(self) -> None:
        st = self.state
        perturb_codebook(st, self.rng)
        st.step_index = 0
        if st.model_steps is not None:
            # Each level is an independent two-timescale run; the fast
            # clocks restart alongside the slow one.
            st.model_steps[:] = 0
        self._metric_sum = 0.0
        self._metric_n = 0
        self._move_ema = None
        self._level_open = True

    def _accumulate_metric(self, divs, winner, x, y, label) -> None:
        # Running metric over the level, computed before the update:
        # winner distortion (cluster/classify-free), squared residual
        # (regression) or top-membership label accuracy (classification).
        if self.task == "cluster":
            value = float(divs[winner])
        elif self.task == "regress-constant":
            st = self.state
            value = (st.out_sums[winner] / st.priors[winner] - y) ** 2
        elif self.task == "regress-affine":
            st = self.state
            value = float(st.model_weights[winner] @ x + st.model_biases[winner] - y) ** 2
        else:
            st = self.state
            guess = st.labels[int(np.argmax(_memberships_from_divs(st, divs)))]
            value = 1.0 if guess == label else 0.0
        self._metric_sum += value
        self._metric_n += 1

    def _eval_metric(self) -> float:
        from .models import predict_value  # local import to avoid a cycle

        st = self.state
        if self.eval_set is None:
            return self._metric_sum / max(self._metric_n, 1)
        if self.task == "cluster":
            (batch,) = self.eval_set
            return average_distortion(st, batch)
        if self.task in ("regress-constant", "regress-affine"):
            batch, targets = self.eval_set
            preds = np.array([predict_value(st, row) for row in batch])
            return float(np.mean((preds - targets) ** 2))
        batch, labels = self.eval_set
        hits = 0
        for row, lab in zip(batch, labels):
            p = gibbs_memberships(st, row)
            hits += int(st.labels[int(np.argmax(p))] == lab)
        return hits / len(labels)

    def _end_level(self, converged: bool) -> None:
        st = self.state
        st.level_log.append(LevelRecord(st.lambda_, converged, st.step_index))
        merge_effective(st)
        remove_idle(st)
        point = CurvePoint(
            lambda_=st.lambda_,
            temperature=st.temperature,
            metric=self._eval_metric(),
            codevector_count=st.k,
            samples_observed=st.samples_seen,
            elapsed_seconds=st.work_units * WORK_UNIT_SECONDS,
        )
        st.curve_log.append(point)
        if self.level_callback is not None:
            self.level_callback(self, point)
        self._level_open = False
        if st.k > self.config.k_max:
            self.done = True
        elif self.config.gamma * st.lambda_ < self.config.lambda_min:
            self.done = True
        else:
            st.lambda_ *= self.config.gamma


def anneal_fit(
    stream: Iterable,
    config: Optional[AnnealingConfig] = None,
    divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
    rng: Optional[np.random.Generator] = None,
    eval_batch: Optional[np.ndarray] = None,
) -> AnnealerState:
    """Run the full annealing schedule over a stream of vectors.

    Stops at lambda_min, when the codebook exceeds k_max after pruning,
    or when the stream is exhausted, whichever comes first.
    """
    trainer = Trainer(
        config if config is not None else AnnealingConfig(),
        divergence,
        task="cluster",
        rng=rng,
        eval_set=None if eval_batch is None else (eval_batch,),
    )
    for x in stream:
        if trainer.done:
            break
        trainer.observe(x)
    return trainer.finalize()


def cycle_batch(batch: np.ndarray, max_passes: int = 1_000_000) -> Iterator[np.ndarray]:
    """Iterate over a frozen batch repeatedly, in order."""
    for _ in range(max_passes):
        yield from batch
