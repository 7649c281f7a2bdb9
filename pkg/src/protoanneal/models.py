"""Per-cell output models: running-mean constants and two-timescale affine fits.

Constant models ride on the same slow stepsize as the partition updates
(their value is a membership-weighted running mean, maintained as an
accumulator divided by the cell prior).  Differentiable models instead take
stochastic-gradient steps on a faster timescale: the partition sees the model
as equilibrated because alpha(n)/beta(n) -> 0.  Squared error is the one
output metric shipped; it keeps every gradient checkable by finite
differences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .core import (
    AnnealerState,
    AnnealingConfig,
    Codevector,
    ConfigError,
    NumericError,
    Trainer,
    predict_region,
)
from .divergence import DivergenceKind

__all__ = [
    "AffineModel",
    "LocalModelKind",
    "TwoTimescaleStepsizes",
    "constant_model_step",
    "constant_value",
    "fit_constant_regression",
    "predict_value",
    "sgd_model_step",
    "two_timescale_fit",
]


class LocalModelKind(str, enum.Enum):
    CONSTANT = "constant"
    AFFINE = "affine"


@dataclass
class AffineModel:
    """Affine predictor w . x + b for one cell."""

    weights: np.ndarray
    bias: float

    def predict(self, x) -> float:
        return float(self.weights @ np.asarray(x, dtype=float) + self.bias)


@dataclass
class TwoTimescaleStepsizes:
    """Slow/fast stepsize schedules alpha(n) = 1/(a + b n), beta(n) = 1/(a + b n^p).

    The exponent p must lie in (0.5, 1): p > 0.5 keeps beta square-summable,
    p < 1 makes alpha(n)/beta(n) -> 0 so the partition updates are the slow
    process.  beta(0) = 1/beta_a bounds the first gradient steps; gradient
    stability needs beta < 1/(2(|x|^2 + 1)), so scale beta_a to the feature
    norms (the default suits |x| up to about 2).
    """

    alpha_a: float = 1.0
    alpha_b: float = 0.5
    beta_a: float = 10.0
    beta_b: float = 0.5
    exponent: float = 0.6

    def validate(self) -> None:
        for name in ("alpha_a", "alpha_b", "beta_a", "beta_b"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.5 < self.exponent < 1.0:
            raise ConfigError(
                f"fast-stepsize exponent must lie in (0.5, 1), got {self.exponent}"
            )

    def alpha(self, n: int) -> float:
        return 1.0 / (self.alpha_a + self.alpha_b * n)

    def beta(self, n: int) -> float:
        return 1.0 / (self.beta_a + self.beta_b * n ** self.exponent)


def constant_model_step(cv: Codevector, y: float, membership: float,
                        alpha: float) -> Codevector:
    """Advance a cell's output accumulator: sigma <- sigma + alpha (y p - sigma).

    The cell value is sigma / prior; `cv.prior` must already reflect the
    concurrent partition update for this observation (same alpha).
    """
    if cv.model_params is None:
        raise ValueError("codevector has no constant model attached")
    sigma = float(cv.model_params[0])
    sigma += alpha * (y * membership - sigma)
    return replace(cv, model_params=np.array([sigma]))


def constant_value(cv: Codevector) -> float:
    """Current constant-model output sigma / prior."""
    return float(cv.model_params[0]) / cv.prior


def sgd_model_step(model: AffineModel, x, y: float, beta: float) -> AffineModel:
    """One squared-error gradient step on (w, b)."""
    x = np.asarray(x, dtype=float)
    residual = model.predict(x) - y
    weights = model.weights - beta * 2.0 * residual * x
    bias = model.bias - beta * 2.0 * residual
    if not (np.isfinite(weights).all() and np.isfinite(bias)):
        raise NumericError("affine gradient step produced non-finite parameters")
    return AffineModel(weights=weights, bias=float(bias))


def predict_value(state: AnnealerState, x) -> float:
    """Evaluate the winning cell's local model at x."""
    x = np.asarray(x, dtype=float)
    i = predict_region(state, x)
    if state.model_kind == "constant":
        return float(state.out_sums[i] / state.priors[i])
    if state.model_kind == "affine":
        return float(state.model_weights[i] @ x + state.model_biases[i])
    raise ValueError("state carries no local models")


def fit_constant_regression(
    stream: Iterable,
    config: Optional[AnnealingConfig] = None,
    divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
    rng: Optional[np.random.Generator] = None,
    eval_set: Optional[tuple] = None,
) -> AnnealerState:
    """Anneal a partition while tracking per-cell output means.

    `stream` yields (x, y) pairs.  No fast timescale is needed: the
    constant value is just another running mean alongside the prior.
    """
    trainer = Trainer(
        config if config is not None else AnnealingConfig(),
        divergence,
        task="regress-constant",
        rng=rng,
        eval_set=eval_set,
    )
    for x, y in stream:
        if trainer.done:
            break
        trainer.observe(x, y=float(y))
    return trainer.finalize()


def two_timescale_fit(
    stream: Iterable,
    config: Optional[AnnealingConfig] = None,
    stepsizes: Optional[TwoTimescaleStepsizes] = None,
    divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
    rng: Optional[np.random.Generator] = None,
    eval_set: Optional[tuple] = None,
) -> AnnealerState:
    """Anneal a partition while fitting per-cell affine models.

    Every observation applies the slow partition update to all cells and
    one fast gradient step to the model of the winning cell only.  The
    slow schedule comes from `stepsizes` (overriding the config's a, b so
    the two schedules stay a matched pair); fast-update counters are kept
    per cell and inherited by both children on a perturbation.
    """
    stepsizes = stepsizes if stepsizes is not None else TwoTimescaleStepsizes()
    stepsizes.validate()
    config = config if config is not None else AnnealingConfig()
    config = replace(config, stepsize_a=stepsizes.alpha_a, stepsize_b=stepsizes.alpha_b)
    trainer = Trainer(
        config,
        divergence,
        task="regress-affine",
        rng=rng,
        fast_beta=stepsizes.beta,
        eval_set=eval_set,
    )
    for x, y in stream:
        if trainer.done:
            break
        trainer.observe(x, y=float(y))
    return trainer.finalize()
