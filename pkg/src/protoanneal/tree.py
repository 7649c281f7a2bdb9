"""Tree-structured progressive partitioning.

Each node runs its own flat annealer on the samples routed into its region.
When a node's annealer terminates (its level schedule or codevector target
fires), its partition is frozen and each cell is promoted to a child node --
unless the depth limit applies, the node ended with a single cell, or (in
classification mode) every cell carries the same label, in which case the
node collapses to one prototype and stops growing.  Frozen ancestors never
retrain, so routing through them stays stationary for their descendants.

Growth is asynchronous: nodes are updated whenever a sample lands in them,
so dense regions refine first.  With an in-memory dataset, sibling subtrees
can instead be trained by parallel workers; the result is identical because
every node draws from a generator seeded by its own path and trains only on
its own slice.

With a resolution pyramid attached, a node at tree level r routes and trains
on the reduced vector x^(depth - r): coarse features shape the shallow
layers, full resolution reaches the leaves.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import (
    AnnealerState,
    AnnealingConfig,
    ConfigError,
    CurvePoint,
    Trainer,
    WORK_UNIT_SECONDS,
    predict_region,
)
from .divergence import DivergenceKind, pairwise_divergence
from .models import TwoTimescaleStepsizes
from .multires import ResolutionPyramid, reduce_once

__all__ = [
    "SplitCriterion",
    "Tree",
    "TreeNode",
    "route",
    "same_class_prune",
    "tree_cell_volumes",
    "tree_density_at",
    "tree_predict",
    "update_leaf",
]

_PATH_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


def _per_level(value, level: int):
    """Read a scalar-or-sequence per-level setting, clamping to the last."""
    if isinstance(value, (int, float)):
        return value
    return value[min(level, len(value) - 1)]


@dataclass
class SplitCriterion:
    """When a node stops annealing and hands its cells to children.

    k_target and lambda_stop may be sequences indexed by node level
    (clamped to their last entry).  max_depth counts node layers: a tree
    with max_depth=3 has nodes at levels 0..2, so a node splits only
    while its children would sit at level <= max_depth - 1.  A node also
    needs at least min_samples_to_split observations before it may split.
    """

    k_target: Union[int, Sequence[int]] = 4
    lambda_stop: Union[float, Sequence[float]] = (0.3, 0.1, 0.01)
    max_depth: int = 3
    min_samples_to_split: int = 100

    def validate(self) -> None:
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        targets = [self.k_target] if isinstance(self.k_target, int) else list(self.k_target)
        if any(t < 2 for t in targets):
            raise ConfigError("k_target must be >= 2")

    def k_target_at(self, level: int) -> int:
        return int(_per_level(self.k_target, level))

    def lambda_stop_at(self, level: int) -> float:
        return float(_per_level(self.lambda_stop, level))


class TreeNode:
    """One region of the partition, identified by its path from the root."""

    def __init__(self, path_id: str, level: int, trainer: Trainer):
        self.path_id = path_id
        self.level = level
        self.trainer = trainer
        self.children: list[TreeNode] = []
        self.status = "growing"  # growing | internal | leaf-final

    @property
    def oda(self) -> AnnealerState:
        return self.trainer.state

    @property
    def is_leaf(self) -> bool:
        return self.status != "internal"

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def same_class_prune(node: TreeNode) -> TreeNode:
    """Collapse a node whose cells all share one label.

    The surviving prototype sits at the prior-weighted mean of the cell
    locations with the summed prior; the node becomes a final leaf, since
    splitting a single-class region cannot move any decision boundary.
    """
    st = node.oda
    if st.labels is None or st.k == 0:
        return node
    if np.unique(st.labels).size != 1:
        return node
    total_prior = st.priors.sum()
    location = (st.priors[:, None] * st.locations).sum(axis=0) / total_prior
    st.locations = location[None, :]
    st.priors = np.array([total_prior])
    st.weighted_sums = location[None, :] * total_prior
    st.labels = st.labels[:1].copy()
    st.hit_counts = np.array([st.hit_counts.sum()])
    if st.out_sums is not None:
        st.out_sums = np.array([st.out_sums.sum()])
    if st.model_weights is not None:
        st.model_weights = st.model_weights[:1].copy()
        st.model_biases = st.model_biases[:1].copy()
        st.model_steps = st.model_steps[:1].copy()
    node.status = "leaf-final"
    return node


class Tree:
    """Grows and queries a tree of per-region annealers.

    `task` is any Trainer task; `pyramid_depth` attaches a resolution
    pyramid (the root then trains on the coarsest level).  Every node's
    generator is seeded from (seed, node path), so training is
    reproducible regardless of update interleaving or worker count.
    """

    def __init__(
        self,
        config: Optional[AnnealingConfig] = None,
        split: Optional[SplitCriterion] = None,
        divergence: DivergenceKind = DivergenceKind.SQUARED_EUCLIDEAN,
        *,
        task: str = "cluster",
        seed: int = 0,
        pyramid_depth: Optional[int] = None,
        stepsizes: Optional[TwoTimescaleStepsizes] = None,
    ):
        self.base_config = config if config is not None else AnnealingConfig()
        self.split = split if split is not None else SplitCriterion()
        self.split.validate()
        self.divergence = divergence
        self.task = task
        self.seed = seed
        self.pyramid = ResolutionPyramid(pyramid_depth) if pyramid_depth else None
        self.stepsizes = stepsizes
        if task == "regress-affine" and stepsizes is None:
            self.stepsizes = TwoTimescaleStepsizes()
        self.samples_seen = 0
        self.split_log: list[tuple[int, str]] = []  # (global sample count, path)
        self.curve_log: list[CurvePoint] = []
        self.bbox_min: Optional[np.ndarray] = None
        self.bbox_max: Optional[np.ndarray] = None
        self._growing = 0
        self.root = self._make_node("0", 0)

    # -- construction ---------------------------------------------------

    def _node_config(self, level: int) -> AnnealingConfig:
        # A node stops once K reaches its level's target ("K > k_max" with
        # k_max = k_target - 1) or once lambda decays past the level's stop.
        cfg = replace(
            self.base_config,
            lambda_min=self.split.lambda_stop_at(level),
            k_max=self.split.k_target_at(level) - 1,
        )
        if self.stepsizes is not None:
            cfg = replace(cfg, stepsize_a=self.stepsizes.alpha_a,
                          stepsize_b=self.stepsizes.alpha_b)
        return cfg

    def _make_node(self, path_id: str, level: int) -> TreeNode:
        # Seeding by path (not by creation order) keeps parallel offline
        # training bit-identical to sequential training.
        key = tuple(_PATH_DIGITS.index(c) for c in path_id)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))
        trainer = Trainer(
            self._node_config(level),
            self.divergence,
            task=self.task,
            rng=rng,
            fast_beta=None if self.stepsizes is None else self.stepsizes.beta,
            level_callback=self._on_node_level,
        )
        self._growing += 1
        return TreeNode(path_id, level, trainer)

    def _on_node_level(self, trainer: Trainer, point: CurvePoint) -> None:
        # Lift the node-level curve point to tree scope: global sample
        # count, total leaf cells, and total work across all nodes.
        self.curve_log.append(
            CurvePoint(
                lambda_=point.lambda_,
                temperature=point.temperature,
                metric=point.metric,
                codevector_count=self.total_leaf_cells(),
                samples_observed=self.samples_seen,
                elapsed_seconds=self.total_work_units() * WORK_UNIT_SECONDS,
            )
        )

    # -- resolution handling ----------------------------------------------

    def _as_sample(self, x) -> list:
        """Per-level view list for x (a single full-resolution view when no
        pyramid is attached).  Accepts a prebuilt pyramid list and checks
        its shapes against the reduction rule."""
        if self.pyramid is None:
            return [np.asarray(x, dtype=float)]
        if isinstance(x, (list, tuple)):
            levels = [np.asarray(v, dtype=float) for v in x]
            if len(levels) != self.pyramid.depth + 1:
                raise ValueError(
                    f"expected {self.pyramid.depth + 1} pyramid levels, "
                    f"got {len(levels)}"
                )
            for l in range(1, len(levels)):
                expected = reduce_once(levels[l - 1]).shape
                if levels[l].shape != expected:
                    raise ValueError(
                        f"pyramid level {l} has shape {levels[l].shape}, "
                        f"expected {expected}"
                    )
            return levels
        return self.pyramid.build(x)

    def _view(self, sample: list, node_level: int) -> np.ndarray:
        if self.pyramid is None:
            return sample[0]
        return sample[self.pyramid.resolution_for_level(node_level)]

    # -- training -----------------------------------------------------------

    def update(self, x, y: Optional[float] = None,
               label: Optional[int] = None) -> TreeNode:
        """Route one observation to its leaf and apply one training step.

        Returns the leaf that received the sample.  Final leaves absorb
        samples without effect; `complete` reports when every leaf is
        final.
        """
        sample = self._as_sample(x)
        self._track_bbox(sample[0])
        self.samples_seen += 1
        node = self._descend(sample)
        if node.status != "growing":
            return node
        trainer = node.trainer
        trainer.observe(self._view(sample, node.level), y=y, label=label)
        if trainer.done:
            self._finalize_node(node)
        return node

    def fit_stream(self, stream: Iterable) -> "Tree":
        """Online training: consume (x[, y | label]) items until the tree is
        complete or the stream runs out."""
        for item in stream:
            if self._growing == 0:
                break
            if self.task == "cluster":
                self.update(item)
            elif self.task == "classify":
                self.update(item[0], label=int(item[1]))
            else:
                self.update(item[0], y=float(item[1]))
        self._close_open_leaves()
        return self

    def _close_open_leaves(self) -> None:
        for node in self.root.walk():
            if node.status != "growing":
                continue
            if node.oda.k == 0:
                node.status = "leaf-final"  # region never saw data
                self._growing -= 1
                continue
            if not node.trainer.done:
                node.trainer.finalize()
            self._finalize_node(node)

    def fit_offline(self, X: np.ndarray, outputs: Optional[np.ndarray] = None,
                    workers: int = 1) -> "Tree":
        """Train from an in-memory dataset, cycling each node's slice until
        the node terminates; sibling subtrees may train in parallel.

        The curve log is assembled afterwards in depth-first node order,
        so it is reproducible for any worker count.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.bbox_min = X.min(axis=0)
        self.bbox_max = X.max(axis=0)
        self.samples_seen = X.shape[0]
        samples = [self._as_sample(row) for row in X]
        outputs = None if outputs is None else np.asarray(outputs)
        self._fit_node_offline(self.root, samples, outputs, workers)
        # Reassemble bookkeeping in depth-first node order so the result is
        # reproducible for any worker count (the counter and the live curve
        # log are only ordered for single-threaded training).
        self._growing = sum(1 for n in self.root.walk() if n.status == "growing")
        self.curve_log = []
        for node in self.root.walk():
            self.curve_log.extend(node.oda.curve_log)
        return self

    def _fit_node_offline(self, node: TreeNode, samples: list,
                          outputs, workers: int) -> None:
        trainer = node.trainer
        while not trainer.done:
            for i, sample in enumerate(samples):
                if trainer.done:
                    break
                x = self._view(sample, node.level)
                if self.task == "classify":
                    trainer.observe(x, label=int(outputs[i]))
                elif self.task == "cluster":
                    trainer.observe(x)
                else:
                    trainer.observe(x, y=float(outputs[i]))
        self._finalize_node(node, log=False)
        if node.status != "internal":
            return
        buckets: list[list] = [[] for _ in node.children]
        out_buckets: list[list] = [[] for _ in node.children]
        for i, sample in enumerate(samples):
            j = predict_region(node.oda, self._view(sample, node.level))
            buckets[j].append(sample)
            if outputs is not None:
                out_buckets[j].append(outputs[i])
        jobs = []
        for child, bucket, outs in zip(node.children, buckets, out_buckets):
            if not bucket:
                child.status = "leaf-final"  # empty cell, nothing to refine
                self._growing -= 1
                continue
            jobs.append((child, bucket, np.array(outs) if outputs is not None else None))
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(self._fit_node_offline, c, b, o, 1)
                           for c, b, o in jobs]
                for f in futures:
                    f.result()
        else:
            for c, b, o in jobs:
                self._fit_node_offline(c, b, o, workers)

    def _finalize_node(self, node: TreeNode, log: bool = True) -> None:
        self._growing -= 1
        if self.task == "classify":
            same_class_prune(node)
            if node.status == "leaf-final":
                return
        st = node.oda
        can_split = (
            st.k >= 2
            and node.level < self.split.max_depth - 1
            and st.samples_seen >= self.split.min_samples_to_split
        )
        if not can_split:
            node.status = "leaf-final"
            return
        for j in range(st.k):
            node.children.append(
                self._make_node(node.path_id + _PATH_DIGITS[j], node.level + 1)
            )
        node.status = "internal"
        if log:
            self.split_log.append((self.samples_seen, node.path_id))

    def _track_bbox(self, x: np.ndarray) -> None:
        if self.bbox_min is None:
            self.bbox_min = x.copy()
            self.bbox_max = x.copy()
        else:
            np.minimum(self.bbox_min, x, out=self.bbox_min)
            np.maximum(self.bbox_max, x, out=self.bbox_max)

    # -- routing and prediction -----------------------------------------------

    def _descend(self, sample: list) -> TreeNode:
        node = self.root
        while node.status == "internal":
            j = predict_region(node.oda, self._view(sample, node.level))
            child = node.children[j]
            if child.oda.k == 0 and child.status != "growing":
                # Unpopulated cell: the frozen parent summary serves queries.
                return node
            node = child
        return node

    def route(self, x) -> TreeNode:
        """Node whose region contains x (deterministic for a frozen tree)."""
        return self._descend(self._as_sample(x))

    def predict_cell(self, x) -> tuple[str, int]:
        """(node path, cell index) of the region containing x."""
        sample = self._as_sample(x)
        node = self._descend(sample)
        return node.path_id, predict_region(node.oda, self._view(sample, node.level))

    def predict_value(self, x) -> float:
        from .models import predict_value

        sample = self._as_sample(x)
        node = self._descend(sample)
        return predict_value(node.oda, self._view(sample, node.level))

    def predict_label(self, x) -> int:
        from .classify import nn_predict

        sample = self._as_sample(x)
        node = self._descend(sample)
        return nn_predict(node.oda, self._view(sample, node.level))

    def predict(self, x):
        """Route to a leaf and delegate to its predictor for the task."""
        if self.task == "cluster":
            return self.predict_cell(x)
        if self.task == "classify":
            return self.predict_label(x)
        return self.predict_value(x)

    # -- structure queries ------------------------------------------------

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.root.walk() if n.is_leaf]

    def complete(self) -> bool:
        return all(n.status != "growing" for n in self.root.walk())

    def total_leaf_cells(self) -> int:
        return sum(n.oda.k for n in self.leaves())

    def total_work_units(self) -> int:
        return sum(n.oda.work_units for n in self.root.walk())

    def depth(self) -> int:
        return max(n.level for n in self.root.walk())


# Spec-surface aliases over the Tree methods.


def route(tree: Tree, x) -> TreeNode:
    return tree.route(x)


def update_leaf(tree: Tree, x, y: Optional[float] = None,
                label: Optional[int] = None) -> TreeNode:
    return tree.update(x, y=y, label=label)


def tree_predict(tree: Tree, x):
    return tree.predict(x)


# -- leaf-level density ---------------------------------------------------


def _reduce_rows(X: np.ndarray) -> np.ndarray:
    if X.shape[1] % 2:
        X = np.hstack([X, np.zeros((X.shape[0], 1))])
    return X.reshape(X.shape[0], -1, 2).mean(axis=2)


def tree_cell_volumes(
    tree: Tree, rng: np.random.Generator, n_samples: int = 100_000
) -> dict[tuple[str, int], float]:
    """Monte-Carlo volume of every populated cell, keyed by (node path, cell)."""
    if tree.bbox_min is None:
        raise ValueError("tree has seen no observations")
    box_volume = float(np.prod(tree.bbox_max - tree.bbox_min))
    points = rng.uniform(tree.bbox_min, tree.bbox_max,
                         size=(n_samples, tree.bbox_min.shape[0]))
    depth = 0 if tree.pyramid is None else tree.pyramid.depth
    views = [points]
    for _ in range(depth):
        views.append(_reduce_rows(views[-1]))

    counts: dict[tuple[str, int], int] = {}

    def assign(node: TreeNode, idx: np.ndarray) -> None:
        level = 0 if tree.pyramid is None else tree.pyramid.resolution_for_level(node.level)
        winners = pairwise_divergence(
            tree.divergence, views[level][idx], node.oda.locations
        ).argmin(axis=1)
        if node.status == "internal":
            for j, child in enumerate(node.children):
                sub = idx[winners == j]
                if sub.size == 0:
                    continue
                if child.oda.k == 0:
                    key = (node.path_id, j)
                    counts[key] = counts.get(key, 0) + sub.size
                else:
                    assign(child, sub)
        else:
            for j in range(node.oda.k):
                key = (node.path_id, j)
                hits = int((winners == j).sum())
                if hits:
                    counts[key] = counts.get(key, 0) + hits

    assign(tree.root, np.arange(n_samples))
    return {key: c / n_samples * box_volume for key, c in counts.items()}


def tree_density_at(tree: Tree, x, volumes: dict[tuple[str, int], float]) -> float:
    """Leaf-cell histogram density: count(cell) / (N Vol(cell)).

    N is the number of samples consumed by final leaves during their own
    training, so the estimate integrates to one over the observed box up
    to Monte-Carlo volume error.
    """
    n_total = sum(n.oda.samples_seen for n in tree.leaves() if n.oda.k > 0)
    sample = tree._as_sample(x)
    node = tree._descend(sample)
    cell = predict_region(node.oda, tree._view(sample, node.level))
    vol = volumes.get((node.path_id, cell), 0.0)
    if vol <= 0.0:
        raise ValueError(f"cell ({node.path_id}, {cell}) has zero estimated volume")
    return float(node.oda.hit_counts[cell]) / (n_total * vol)
