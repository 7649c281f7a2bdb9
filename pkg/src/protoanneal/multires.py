"""Dyadic-averaging resolution pyramid for coarse-to-fine tree training.

Level l+1 averages adjacent pairs of level-l coordinates (zero-padding odd
lengths), so level l has ceil(d / 2^l) coordinates and the levels are nested:
reducing a level-l vector once gives exactly the level-(l+1) vector.  This is
a Haar approximation cascade; it is linear and contracts energy, which is all
the tree trainer relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .tree import Tree, TreeNode

__all__ = [
    "MultiResSample",
    "ResolutionPyramid",
    "build_pyramid",
    "level_dim",
    "mr_predict",
    "mr_update",
    "reduce_once",
]

# A multi-resolution sample is the list [x^0, x^1, ..., x^depth].
MultiResSample = list


def level_dim(d: int, level: int) -> int:
    """Coordinate count of a d-dimensional vector reduced `level` times."""
    for _ in range(level):
        d = (d + 1) // 2
    return d


def reduce_once(x: np.ndarray) -> np.ndarray:
    """Average adjacent coordinate pairs, zero-padding an odd tail."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] % 2:
        x = np.append(x, 0.0)
    return 0.5 * (x[0::2] + x[1::2])


def build_pyramid(x, depth: int) -> MultiResSample:
    """Full-to-coarse representation [x^0, ..., x^depth] of one vector."""
    if depth < 0:
        raise ValueError("pyramid depth must be non-negative")
    levels = [np.asarray(x, dtype=float)]
    for _ in range(depth):
        levels.append(reduce_once(levels[-1]))
    return levels


@dataclass
class ResolutionPyramid:
    """Projection spec stored with tree snapshots: depth plus the (fixed)
    reduction rule, so prediction reproduces training-time projections."""

    depth: int
    reduction: str = "dyadic-mean"
    padding: str = "zero"

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("pyramid depth must be >= 1")
        if self.reduction != "dyadic-mean" or self.padding != "zero":
            raise ValueError("only dyadic-mean reduction with zero padding is defined")

    def build(self, x) -> MultiResSample:
        return build_pyramid(x, self.depth)

    def resolution_for_level(self, tree_level: int) -> int:
        """Tree level r trains on x^(depth - r); deeper trees clamp to x^0."""
        return max(self.depth - tree_level, 0)


def mr_update(tree: "Tree", sample, y: Optional[float] = None,
              label: Optional[int] = None) -> "TreeNode":
    """Route a multi-resolution sample and train the receiving leaf.

    `sample` is either a prebuilt [x^0 ... x^depth] list or a raw vector
    (the tree builds the pyramid itself).  Identical to the plain tree
    update except each node sees its own resolution.
    """
    return tree.update(sample, y=y, label=label)


def mr_predict(tree: "Tree", sample):
    """Same descent as mr_update without mutating state."""
    return tree.predict(sample)
