"""JSON model files for decision trees and generative trees.

Floats are written with Python's shortest round-trip repr, so a
serialize / deserialize / serialize cycle reproduces the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .data import Schema, SchemaError
from .trees import DecisionTree, GenerativeTree, Predicate, Tree, TreeError

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


Model = Union[DecisionTree, GenerativeTree]


def _predicate_doc(pred: Predicate) -> dict:
    if pred.is_nominal:
        return {"feature": pred.feature, "right_set": sorted(pred.right_set)}
    return {"feature": pred.feature, "threshold": float(pred.threshold)}


def to_document(model: Model) -> dict:
    tree = model.tree
    is_dt = isinstance(model, DecisionTree)
    nodes = []
    for i in range(len(tree)):
        node = {"id": i, "parent": tree.parent[i]}
        if not tree.is_leaf(i):
            node["children"] = [tree.left[i], tree.right[i]]
            node["predicate"] = _predicate_doc(tree.predicates[i])
            if not is_dt:
                node["p_right"] = float(model.p_right[i])
        if is_dt:
            node["p_real"] = float(model.p_real[i])
            node["p_fake"] = float(model.p_fake[i])
        nodes.append(node)
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "dt" if is_dt else "gt",
        "schema": tree.schema.to_dict(),
        "metadata": model.metadata,
        "nodes": nodes,
    }
    if is_dt:
        doc["prior"] = float(model.prior)
    return doc


def dumps(model: Model) -> bytes:
    return json.dumps(to_document(model), sort_keys=True, indent=1, allow_nan=False).encode("utf-8")


def _fail(msg):
    raise ModelFormatError(msg)


def from_document(doc: dict) -> Model:
    if not isinstance(doc, dict):
        _fail("model document must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        _fail(f"unsupported format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}")
    kind = doc.get("kind")
    if kind not in ("dt", "gt"):
        _fail(f"unknown model kind {kind!r}")
    try:
        schema = Schema.from_dict(doc["schema"])
        nodes = sorted(doc["nodes"], key=lambda n: n["id"])
    except (KeyError, TypeError, SchemaError) as exc:
        _fail(f"malformed model document: {exc}")
    ids = [n["id"] for n in nodes]
    if ids != list(range(len(nodes))) or not nodes:
        _fail("node ids must be 0..N-1 with node 0 the root")

    tree = Tree(schema)
    p_right = [float("nan")]
    # Children are always allocated as the next two ids, so replaying splits
    # in order of their first child id reproduces the arena exactly.
    internal = [n for n in nodes if n.get("children") is not None]
    try:
        internal.sort(key=lambda n: n["children"][0])
    except (TypeError, IndexError):
        _fail("malformed children lists")
    for node in internal:
        children = node["children"]
        i = node["id"]
        if i >= len(tree) or not tree.is_leaf(i):
            _fail(f"node {i} is unreachable or split twice")
        if len(children) != 2 or children != [len(tree), len(tree) + 1]:
            _fail(f"node {i}: dangling or out-of-order child ids {children}")
        if any(c >= len(nodes) for c in children):
            _fail(f"node {i}: dangling child id in {children}")
        pd = node.get("predicate")
        try:
            if "right_set" in pd:
                pred = Predicate(int(pd["feature"]), right_set=frozenset(pd["right_set"]))
            else:
                pred = Predicate(int(pd["feature"]), threshold=float(pd["threshold"]))
            tree.split(i, pred)
        except (TypeError, KeyError, TreeError) as exc:
            _fail(f"node {i}: invalid predicate: {exc}")
        if kind == "gt":
            p = node.get("p_right")
            if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
                _fail(f"node {i}: p_right must be a probability")
            p_right[i] = float(p)
            p_right.extend([float("nan")] * 2)
    if len(tree) != len(nodes):
        _fail("node count does not match the split structure")
    for node in nodes:
        if node["parent"] != tree.parent[node["id"]]:
            _fail(f"node {node['id']}: parent mismatch")

    metadata = doc.get("metadata", {})
    if kind == "gt":
        return GenerativeTree(tree, p_right, metadata)
    try:
        p_real = np.array([float(n["p_real"]) for n in nodes])
        p_fake = np.array([float(n["p_fake"]) for n in nodes])
        prior = float(doc["prior"])
    except (KeyError, TypeError, ValueError) as exc:
        _fail(f"malformed decision tree: {exc}")
    return DecisionTree(tree, prior, p_real, p_fake, metadata)


def loads(data: Union[bytes, str]) -> Model:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"not a JSON document: {exc}") from None
    return from_document(doc)


def save_model(model: Model, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(model))


def load_model(path) -> Model:
    return loads(Path(path).read_bytes())
