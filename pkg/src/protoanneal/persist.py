"""Model snapshots: JSON documents with value-exact float round-trips.

Floats are serialized with Python's repr (shortest round-trip form), so a
load reproduces every stored decimal exactly and therefore every prediction.
Flat snapshots carry {version, divergence, lambda, config, codevectors,
curve_log} plus the bookkeeping needed for density queries; tree snapshots
embed one flat document per node, keyed by path, with the pyramid header
when one was used.  Snapshots are for prediction and inspection; resuming
training from one is not supported.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from typing import Union

import numpy as np

from .core import AnnealerState, AnnealingConfig, CurvePoint
from .divergence import DivergenceKind
from .models import TwoTimescaleStepsizes
from .tree import SplitCriterion, Tree, TreeNode

__all__ = ["SnapshotError", "load_model", "save_model"]

SCHEMA_VERSION = 1


class SnapshotError(ValueError):
    """Unreadable snapshot or schema version mismatch."""


def _optional_list(arr) -> Union[list, None]:
    return None if arr is None else np.asarray(arr).tolist()


def _state_to_dict(state: AnnealerState) -> dict:
    codevectors = []
    for cv in state.codevectors:
        codevectors.append(
            {
                "location": cv.location.tolist(),
                "prior": cv.prior,
                "weighted_sum": cv.weighted_sum.tolist(),
                "label": cv.label,
                "model_params": _optional_list(cv.model_params),
            }
        )
    return {
        "divergence": state.divergence.value,
        "lambda": state.lambda_,
        "config": asdict(state.config),
        "model_kind": state.model_kind,
        "codevectors": codevectors,
        "curve_log": [p.as_row() for p in state.curve_log],
        "samples_seen": state.samples_seen,
        "hit_counts": state.hit_counts.tolist(),
        "bbox_min": _optional_list(state.bbox_min),
        "bbox_max": _optional_list(state.bbox_max),
        "work_units": state.work_units,
        "delta": state.delta,
    }


def _state_from_dict(doc: dict) -> AnnealerState:
    config = AnnealingConfig(**doc["config"])
    state = AnnealerState(config, DivergenceKind(doc["divergence"]))
    state.lambda_ = doc["lambda"]
    state.model_kind = doc.get("model_kind")
    cvs = doc["codevectors"]
    if cvs:
        state.locations = np.array([c["location"] for c in cvs], dtype=float)
        state.priors = np.array([c["prior"] for c in cvs], dtype=float)
        state.weighted_sums = np.array([c["weighted_sum"] for c in cvs], dtype=float)
        if cvs[0]["label"] is not None:
            state.labels = np.array([c["label"] for c in cvs], dtype=int)
        if state.model_kind == "constant":
            state.out_sums = np.array(
                [c["model_params"][0] for c in cvs], dtype=float
            )
        elif state.model_kind == "affine":
            params = np.array([c["model_params"] for c in cvs], dtype=float)
            state.model_weights = params[:, :-1]
            state.model_biases = params[:, -1]
            state.model_steps = np.zeros(len(cvs), dtype=int)
    state.curve_log = [
        CurvePoint(row[0], row[1], row[2], int(row[3]), int(row[4]), row[5])
        for row in doc["curve_log"]
    ]
    state.samples_seen = doc["samples_seen"]
    state.hit_counts = np.array(doc["hit_counts"], dtype=float)
    if doc["bbox_min"] is not None:
        state.bbox_min = np.array(doc["bbox_min"], dtype=float)
        state.bbox_max = np.array(doc["bbox_max"], dtype=float)
    state.work_units = doc["work_units"]
    state.delta = doc["delta"]
    return state


def _node_to_dict(node: TreeNode) -> dict:
    return {
        "path_id": node.path_id,
        "level": node.level,
        "status": node.status,
        "oda": _state_to_dict(node.oda),
        "children": [_node_to_dict(c) for c in node.children],
    }


def _tree_to_dict(tree: Tree) -> dict:
    return {
        "task": tree.task,
        "divergence": tree.divergence.value,
        "seed": tree.seed,
        "config": asdict(tree.base_config),
        "split": {
            "k_target": list(tree.split.k_target)
            if not isinstance(tree.split.k_target, int) else tree.split.k_target,
            "lambda_stop": list(tree.split.lambda_stop)
            if not isinstance(tree.split.lambda_stop, (int, float))
            else tree.split.lambda_stop,
            "max_depth": tree.split.max_depth,
            "min_samples_to_split": tree.split.min_samples_to_split,
        },
        "stepsizes": None if tree.stepsizes is None else asdict(tree.stepsizes),
        "pyramid": None if tree.pyramid is None else {
            "depth": tree.pyramid.depth,
            "reduction": tree.pyramid.reduction,
            "padding": tree.pyramid.padding,
        },
        "samples_seen": tree.samples_seen,
        "bbox_min": _optional_list(tree.bbox_min),
        "bbox_max": _optional_list(tree.bbox_max),
        "curve_log": [p.as_row() for p in tree.curve_log],
        "root": _node_to_dict(tree.root),
    }


def _tree_from_dict(doc: dict) -> Tree:
    split = SplitCriterion(**doc["split"])
    stepsizes = None
    if doc.get("stepsizes") is not None:
        stepsizes = TwoTimescaleStepsizes(**doc["stepsizes"])
    pyramid = doc.get("pyramid")
    tree = Tree(
        AnnealingConfig(**doc["config"]),
        split,
        DivergenceKind(doc["divergence"]),
        task=doc["task"],
        seed=doc["seed"],
        pyramid_depth=None if pyramid is None else pyramid["depth"],
        stepsizes=stepsizes,
    )
    tree.samples_seen = doc["samples_seen"]
    if doc["bbox_min"] is not None:
        tree.bbox_min = np.array(doc["bbox_min"], dtype=float)
        tree.bbox_max = np.array(doc["bbox_max"], dtype=float)
    tree.curve_log = [
        CurvePoint(r[0], r[1], r[2], int(r[3]), int(r[4]), r[5])
        for r in doc["curve_log"]
    ]

    def rebuild(node_doc: dict) -> TreeNode:
        node = tree._make_node(node_doc["path_id"], node_doc["level"])
        node.trainer.state = _state_from_dict(node_doc["oda"])
        node.trainer.done = node_doc["status"] != "growing"
        node.status = node_doc["status"]
        node.children = [rebuild(c) for c in node_doc["children"]]
        return node

    tree.root = rebuild(doc["root"])
    tree._growing = sum(1 for n in tree.root.walk() if n.status == "growing")
    return tree


def save_model(path, model: Union[AnnealerState, Tree]) -> None:
    if isinstance(model, Tree):
        doc = {"version": SCHEMA_VERSION, "kind": "tree", **_tree_to_dict(model)}
    elif isinstance(model, AnnealerState):
        doc = {"version": SCHEMA_VERSION, "kind": "flat", **_state_to_dict(model)}
    else:
        raise TypeError(f"cannot snapshot {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> Union[AnnealerState, Tree]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"unreadable snapshot: {exc}") from None
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise SnapshotError(
            f"snapshot version {version!r} not supported (expected {SCHEMA_VERSION})"
        )
    if doc.get("kind") == "tree":
        return _tree_from_dict(doc)
    if doc.get("kind") == "flat":
        return _state_from_dict(doc)
    raise SnapshotError(f"unknown snapshot kind {doc.get('kind')!r}")
