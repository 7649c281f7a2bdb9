"""Classification on top of the annealed partition.

The shipped classifier is generative: updates are gated by the indicator
s_i = 1[label(mu_i) = label(x)], so each label's prototypes estimate a
class-conditional density.  Prediction is either Bayes (argmax of estimated
prior times class-conditional density) or the cheap nearest-neighbor rule
(label of the top Gibbs membership).  A relaxed majority-vote route also
exists: train constant models on labels-as-values and round the cell means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import (
    AnnealerState,
    AnnealingConfig,
    CorruptStateError,
    Trainer,
    gibbs_memberships,
    maybe_insert_class,
)
from .divergence import DivergenceKind, divergences_to, pairwise_divergence

__all__ = [
    "ClassPriors",
    "bayes_predict",
    "class_conditional_step",
    "class_conditional_volumes",
    "class_density_at",
    "fit_classifier",
    "majority_vote_labels",
    "maybe_insert_class",
    "nn_predict",
]


@dataclass
class ClassPriors:
    """Empirical label frequencies pi_j = counts[j] / total."""

    counts: dict[int, int] = field(default_factory=dict)
    total: int = 0

    def update(self, label: int) -> None:
        self.counts[label] = self.counts.get(label, 0) + 1
        self.total += 1

    def prior(self, label: int) -> float:
        if self.total == 0:
            return 0.0
        return self.counts.get(label, 0) / self.total

    @property
    def labels(self) -> list[int]:
        return sorted(self.counts)


def class_conditional_step(state: AnnealerState, x, label: int,
                           alpha: float) -> AnnealerState:
    """One label-gated stochastic-approximation update.

    Memberships are computed over the whole codebook; the update for
    prototype i uses s_i * p_i where s_i indicates a label match, so
    other-label prototypes simply decay (rho <- rho (1 - alpha)).
    """
    if state.labels is None:
        raise CorruptStateError("state is not in classification mode")
    x = np.asarray(x, dtype=float)
    memberships = gibbs_memberships(state, x)
    effective = memberships * (state.labels == label)
    state.priors += alpha * (effective - state.priors)
    state.weighted_sums += alpha * (x * effective[:, None] - state.weighted_sums)
    state.locations = state.weighted_sums / state.priors[:, None]
    return state


def nn_predict(state: AnnealerState, x) -> int:
    """Label of the prototype with the largest association probability."""
    if state.labels is None:
        raise CorruptStateError("codebook carries no labels")
    memberships = gibbs_memberships(state, x)
    return int(state.labels[int(np.argmax(memberships))])


def class_conditional_volumes(
    state: AnnealerState,
    rng: np.random.Generator,
    n_samples: int = 100_000,
) -> dict[int, np.ndarray]:
    """Per-label Monte-Carlo cell volumes over the observed bounding box.

    For each label, cells are the Voronoi regions of that label's
    prototypes alone; the returned array is aligned with the indices
    given by `np.flatnonzero(state.labels == label)`.
    """
    if state.labels is None:
        raise CorruptStateError("codebook carries no labels")
    if state.bbox_min is None:
        raise CorruptStateError("no observations seen; bounding box unknown")
    box_volume = float(np.prod(state.bbox_max - state.bbox_min))
    points = rng.uniform(state.bbox_min, state.bbox_max, size=(n_samples, state.dim))
    out: dict[int, np.ndarray] = {}
    for label in np.unique(state.labels):
        idx = np.flatnonzero(state.labels == label)
        winners = pairwise_divergence(
            state.divergence, points, state.locations[idx]
        ).argmin(axis=1)
        counts = np.bincount(winners, minlength=idx.size)
        out[int(label)] = counts / n_samples * box_volume
    return out


def class_density_at(
    state: AnnealerState,
    priors: ClassPriors,
    x,
    label: int,
    volumes_by_label: dict[int, np.ndarray],
) -> float:
    """Class-conditional density estimate p(x | c = label)."""
    idx = np.flatnonzero(state.labels == label)
    if idx.size == 0:
        return 0.0
    divs = divergences_to(state.divergence, np.asarray(x, dtype=float),
                          state.locations[idx])
    local = int(np.argmin(divs))
    vol = float(volumes_by_label[label][local])
    if vol <= 0.0:
        raise ValueError(f"label {label} cell {local} has zero estimated volume")
    n_label = priors.counts.get(label, 0)
    if n_label == 0:
        return 0.0
    return float(state.hit_counts[idx[local]]) / (n_label * vol)


def bayes_predict(
    state: AnnealerState,
    priors: ClassPriors,
    x,
    volumes_by_label: dict[int, np.ndarray],
) -> int:
    """argmax over labels of pi_j * p(x | c = j); ties to the lowest label."""
    if state.labels is None or state.k == 0:
        raise CorruptStateError("no trained codevectors")
    best_label, best_score = None, -np.inf
    for label in priors.labels:
        score = priors.prior(label) * class_density_at(
            state, priors, x, label, volumes_by_label
        )
        if score > best_score:
            best_label, best_score = label, score
    return int(best_label)


def majority_vote_labels(state: AnnealerState) -> AnnealerState:
    """Label each cell by rounding its constant-model value (ties to 1).

    Expects constant models trained on labels-as-values in {0, 1}; the
    cell mean is then the local fraction of label-1 observations, and
    rounding reproduces a majority vote inside each region.
    """
    if state.model_kind != "constant":
        raise ValueError("majority vote requires trained constant models")
    values = state.out_sums / state.priors
    state.labels = (values >= 0.5).astype(int)
    return state


def fit_classifier(
    stream: Iterable,
    config: Optional[AnnealingConfig] = None,
    divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
    rng: Optional[np.random.Generator] = None,
    eval_set: Optional[tuple] = None,
) -> tuple[AnnealerState, ClassPriors]:
    """Anneal a labelled codebook with gated updates (generative route).

    `stream` yields (x, label) pairs.  Returns the trained state and the
    empirical label priors observed along the way.
    """
    trainer = Trainer(
        config if config is not None else AnnealingConfig(),
        divergence,
        task="classify",
        rng=rng,
        eval_set=eval_set,
    )
    for x, label in stream:
        if trainer.done:
            break
        trainer.observe(x, label=int(label))
    state = trainer.finalize()
    priors = ClassPriors()
    for label, count in sorted(trainer.class_counts.items()):
        priors.counts[label] = count
        priors.total += count
    return state, priors
