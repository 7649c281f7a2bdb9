"""Bregman divergences and the curvature data used by the split diagnostic.

Two members are supported: squared Euclidean distance, generated by
phi(x) = <x, x>, and the generalized Kullback-Leibler divergence, generated
by phi(x) = <x, log x> on strictly positive vectors.  The divergence kind is
a closed enumeration (not a user callback) so that every consumer can also
ask for the diagonal of the Hessian of phi, which the bifurcation diagnostic
needs alongside the divergence itself.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import enum

import numpy as np

__all__ = [
    "DivergenceKind",
    "DomainError",
    "POSITIVE_FLOOR",
    "bregman_eval",
    "divergences_to",
    "pairwise_divergence",
    "phi_second_derivative",
    "scaled_dissimilarity",
    "scale_factor",
    "eval_count",
    "reset_eval_count",
]

# Coordinates at or below this are rejected under generalized KL.  Clamping
# instead of rejecting would silently corrupt the centroid condition.
POSITIVE_FLOOR = 1e-12


class DomainError(ValueError):
    """Input outside the divergence domain (or mismatched dimensions)."""


class DivergenceKind(str, enum.Enum):
    SQUARED_EUCLIDEAN = "squared-euclidean"
    GENERALIZED_KL = "generalized-kl"


# Count of pointwise divergence evaluations, for complexity instrumentation
# (e.g. verifying that a tree forward pass touches few codevectors).  Not
# thread safe; intended for single-threaded measurement only.
_eval_count = 0


def eval_count() -> int:
    return _eval_count


def reset_eval_count() -> None:
    global _eval_count
    _eval_count = 0


def _check_domain(kind: DivergenceKind, v: np.ndarray, name: str) -> None:
    if kind is DivergenceKind.GENERALIZED_KL and np.any(v <= POSITIVE_FLOOR):
        raise DomainError(
            f"generalized-kl requires strictly positive {name} "
            f"(min coordinate {v.min():.3g})"
        )


def bregman_eval(kind: DivergenceKind, x, mu) -> float:
    """Evaluate d_phi(x, mu) for a single pair of vectors.

    Nonnegative, zero iff x == mu.  Raises DomainError on dimension
    mismatch or non-positive coordinates under generalized KL.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if x.shape != mu.shape:
        raise DomainError(f"dimension mismatch: x {x.shape} vs mu {mu.shape}")
    global _eval_count
    _eval_count += 1
    if kind is DivergenceKind.SQUARED_EUCLIDEAN:
        diff = x - mu
        return float(np.dot(diff, diff))
    _check_domain(kind, x, "x")
    _check_domain(kind, mu, "mu")
    return float(np.dot(x, np.log(x) - np.log(mu)) - np.sum(x - mu))


def divergences_to(kind: DivergenceKind, x: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """d_phi(x, mu_i) for one point against a (K, d) stack of locations."""
    if x.shape[-1] != locations.shape[-1]:
        raise DomainError(
            f"dimension mismatch: x has {x.shape[-1]} coordinates, "
            f"codebook has {locations.shape[-1]}"
        )
    global _eval_count
    _eval_count += locations.shape[0]
    if kind is DivergenceKind.SQUARED_EUCLIDEAN:
        diff = locations - x
        return np.einsum("kd,kd->k", diff, diff)
    _check_domain(kind, x, "x")
    _check_domain(kind, locations, "mu")
    return (x * (np.log(x) - np.log(locations))).sum(axis=1) - (x - locations).sum(axis=1)


def pairwise_divergence(kind: DivergenceKind, points: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """(n, K) divergence matrix between row vectors and codevector locations."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != locations.shape[1]:
        raise DomainError(
            f"dimension mismatch: points are {points.shape[1]}-D, "
            f"codebook is {locations.shape[1]}-D"
        )
    global _eval_count
    _eval_count += points.shape[0] * locations.shape[0]
    if kind is DivergenceKind.SQUARED_EUCLIDEAN:
        diff = points[:, None, :] - locations[None, :, :]
        return np.einsum("nkd,nkd->nk", diff, diff)
    _check_domain(kind, points, "points")
    _check_domain(kind, locations, "mu")
    xlogx = (points * np.log(points)).sum(axis=1)
    cross = points @ np.log(locations).T
    return (
        xlogx[:, None]
        - cross
        - points.sum(axis=1)[:, None]
        + locations.sum(axis=1)[None, :]
    )


def phi_second_derivative(kind: DivergenceKind, mu) -> np.ndarray:
    """Diagonal of the Hessian of phi at mu.

    Constant 2 per coordinate for squared Euclidean, 1/mu_j for
    generalized KL.  This is the curvature term that multiplies the
    conditional covariance in the critical-temperature condition.
    """
    mu = np.asarray(mu, dtype=float)
    if kind is DivergenceKind.SQUARED_EUCLIDEAN:
        return np.full(mu.shape, 2.0)
    _check_domain(kind, mu, "mu")
    return 1.0 / mu


def scale_factor(lam: float) -> float:
    """The (1 - lambda)/lambda factor, i.e. inverse temperature 1/T."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return (1.0 - lam) / lam


def scaled_dissimilarity(kind: DivergenceKind, x, mu, lam: float) -> float:
    """Temperature-scaled divergence ((1 - lambda)/lambda) * d_phi(x, mu)."""
    return scale_factor(lam) * bregman_eval(kind, x, mu)
