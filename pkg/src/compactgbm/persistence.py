"""JSON model files.

Floats are written with ``repr`` (shortest round-trip form), so a loaded model
predicts bit-identically to the one that was saved.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .boosting import Model
from .errors import ParseError, VersionError
from .tree import Tree

FORMAT_VERSION = 1


def _tree_to_nested(tree: Tree, node: int = 0) -> dict:
    if tree.feature[node] < 0:
        return {"value": float(tree.value[node])}
    return {
        "feature": int(tree.feature[node]),
        "threshold": float(tree.threshold[node]),
        "left": _tree_to_nested(tree, int(tree.left[node])),
        "right": _tree_to_nested(tree, int(tree.right[node])),
    }


def _tree_from_nested(doc: dict) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def visit(node: dict) -> int:
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if "value" in node:
            value[idx] = float(node["value"])
            return idx
        feature[idx] = int(node["feature"])
        threshold[idx] = float(node["threshold"])
        left[idx] = visit(node["left"])
        right[idx] = visit(node["right"])
        return idx

    visit(doc)
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=np.float64))


def model_to_dict(model: Model) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "objective": model.objective,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "feature_names": list(model.feature_names),
        "trees": [_tree_to_nested(t) for t in model.trees],
        "training": {
            **model.metadata,
            "bin_boundaries": model.bin_boundaries,
            "train_loss": model.train_loss,
            "valid_loss": model.valid_loss,
        },
    }


def model_from_dict(doc: dict) -> Model:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format_version {version!r}")
    try:
        meta = dict(doc.get("training", {}))
        boundaries = meta.pop("bin_boundaries", [])
        train_loss = meta.pop("train_loss", [])
        valid_loss = meta.pop("valid_loss", [])
        return Model(
            base_score=float(doc["base_score"]),
            trees=[_tree_from_nested(t) for t in doc["trees"]],
            learning_rate=float(doc["learning_rate"]),
            objective=str(doc["objective"]),
            feature_names=list(doc["feature_names"]),
            bin_boundaries=boundaries,
            train_loss=train_loss,
            valid_loss=valid_loss,
            metadata=meta,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from None


def dumps(model: Model) -> str:
    return json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"


def save_model(model: Model, path) -> None:
    """Write atomically: a temp file in the target directory, then rename."""
    text = dumps(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".model-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    return model_from_dict(doc)
