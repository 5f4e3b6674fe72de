"""Binary tree arena shared by discriminators and generators, plus the measure algebra.

Every node carries the axis-aligned support box of the points reaching it.
Numeric box intervals are half-open ``[lo, hi)`` with integer features stored
as ``[L, H + 1)``; real features keep their top value ``hi`` in the topmost
interval. Volumes are normalized per feature, so the root box has volume 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import INTEGER, NOMINAL, REAL, Dataset, Interval, IntRange, Schema

SUM_TOL = 1e-9


class TreeError(ValueError):
    pass


# ---------------------------------------------------------------- boxes


@dataclass
class SupportBox:
    lo: np.ndarray
    hi: np.ndarray
    mask: np.ndarray

    @classmethod
    def full(cls, schema: Schema) -> "SupportBox":
        d, K = len(schema), schema.max_modalities
        mask = np.zeros((d, K), dtype=bool)
        for j, n_mod in enumerate(schema.n_modalities):
            mask[j, :n_mod] = True
        return cls(schema.lower.copy(), schema.upper.copy(), mask)

    def copy(self) -> "SupportBox":
        return SupportBox(self.lo.copy(), self.hi.copy(), self.mask.copy())

    def constraint(self, j: int, schema: Schema):
        """The constraint on feature ``j`` in user-facing form."""
        spec = schema[j]
        if spec.kind == "nominal":
            return frozenset(spec.modalities[k] for k in np.flatnonzero(self.mask[j]))
        if spec.kind == "integer":
            return IntRange(int(self.lo[j]), int(self.hi[j]) - 1)
        return Interval(float(self.lo[j]), float(self.hi[j]))

    def contains(self, row: np.ndarray, schema: Schema) -> bool:
        """Whether every observed value of ``row`` lies in the box."""
        for j, v in enumerate(row):
            if math.isnan(v):
                continue
            if schema.kinds[j] == NOMINAL:
                if not self.mask[j, int(v)]:
                    return False
            elif not (self.lo[j] <= v < self.hi[j] or (v == self.hi[j] == schema.upper[j])):
                return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, SupportBox)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
            and np.array_equal(self.mask, other.mask)
        )


def feature_fraction(box: SupportBox, j: int, schema: Schema) -> float:
    """Normalized measure of the box's constraint on feature ``j``."""
    kind = schema.kinds[j]
    if kind == NOMINAL:
        return float(box.mask[j].sum()) / schema.n_modalities[j]
    length = schema.lengths[j]
    if length == 0:
        return 1.0 if box.lo[j] <= box.hi[j] else 0.0
    return max(0.0, box.hi[j] - box.lo[j]) / length


def box_volume(box: Optional[SupportBox], schema: Schema) -> float:
    if box is None:
        return 0.0
    vol = 1.0
    for j in range(len(schema)):
        vol *= feature_fraction(box, j, schema)
    return vol


def box_intersect(a: SupportBox, b: SupportBox, schema: Schema) -> Optional[SupportBox]:
    """Per-feature intersection, or ``None`` when it is empty."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    mask = a.mask & b.mask
    for j in range(len(schema)):
        kind = schema.kinds[j]
        if kind == NOMINAL:
            if not mask[j].any():
                return None
        elif schema.lengths[j] == 0:
            if hi[j] < lo[j]:
                return None
        elif hi[j] <= lo[j]:
            return None
    return SupportBox(lo, hi, mask)


def stack_boxes(boxes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([b.lo for b in boxes], dtype=np.float64),
        np.array([b.hi for b in boxes], dtype=np.float64),
        np.array([b.mask for b in boxes], dtype=bool),
    )


# ---------------------------------------------------------------- predicates


@dataclass(frozen=True)
class Predicate:
    """Axis-aligned test; true (the right arc) means ``x >= threshold`` or ``x in right_set``."""

    feature: int
    threshold: Optional[float] = None
    right_set: Optional[frozenset] = None

    def __post_init__(self):
        if (self.threshold is None) == (self.right_set is None):
            raise TreeError("a predicate needs exactly one of threshold / right_set")
        if self.right_set is not None:
            object.__setattr__(self, "right_set", frozenset(int(k) for k in self.right_set))

    @property
    def is_nominal(self) -> bool:
        return self.right_set is not None

    def __call__(self, value: float) -> bool:
        if self.is_nominal:
            return int(value) in self.right_set
        return value >= self.threshold

    def split_box(self, box: SupportBox) -> tuple[SupportBox, SupportBox]:
        left, right = box.copy(), box.copy()
        j = self.feature
        if self.is_nominal:
            sel = np.zeros(box.mask.shape[1], dtype=bool)
            sel[list(self.right_set)] = True
            right.mask[j] &= sel
            left.mask[j] &= ~sel
        else:
            left.hi[j] = self.threshold
            right.lo[j] = self.threshold
        return left, right

    def check_strict(self, box: SupportBox, schema: Schema) -> None:
        """Raise unless both sides of the split are nonempty within ``box``."""
        j = self.feature
        if not 0 <= j < len(schema):
            raise TreeError(f"feature index {j} out of range")
        kind = schema.kinds[j]
        if self.is_nominal:
            if kind != NOMINAL:
                raise TreeError("set predicate on a numeric feature")
            cur = set(np.flatnonzero(box.mask[j]).tolist())
            if not self.right_set or not self.right_set < cur:
                raise TreeError("right set must be a strict nonempty subset of the node's modalities")
        else:
            if kind == NOMINAL:
                raise TreeError("threshold predicate on a nominal feature")
            if kind == INTEGER and self.threshold != int(self.threshold):
                raise TreeError("integer thresholds must be integral")
            if not box.lo[j] < self.threshold < box.hi[j]:
                raise TreeError("threshold must fall strictly inside the node's interval")

    def describe(self, schema: Schema) -> str:
        spec = schema[self.feature]
        if self.is_nominal:
            mods = ",".join(spec.modalities[k] for k in sorted(self.right_set))
            return f"{spec.name} in {{{mods}}}"
        return f"{spec.name} >= {self.threshold!r}"


# ---------------------------------------------------------------- arena


class Tree:
    """Node arena; node 0 is the root and children always get larger ids than parents."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.predicates: list[Optional[Predicate]] = [None]
        self.left = [-1]
        self.right = [-1]
        self.parent = [-1]
        self.boxes = [SupportBox.full(schema)]
        self._arrays = None

    def __len__(self):
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def leaves(self) -> list[int]:
        return [i for i in range(len(self)) if self.left[i] < 0]

    def split(self, node: int, predicate: Predicate) -> tuple[int, int]:
        if not self.is_leaf(node):
            raise TreeError(f"node {node} is not a leaf")
        predicate.check_strict(self.boxes[node], self.schema)
        lbox, rbox = predicate.split_box(self.boxes[node])
        l, r = len(self), len(self) + 1
        self.predicates[node] = predicate
        self.left[node], self.right[node] = l, r
        for box in (lbox, rbox):
            self.predicates.append(None)
            self.left.append(-1)
            self.right.append(-1)
            self.parent.append(node)
            self.boxes.append(box)
        self._arrays = None
        return l, r

    def path(self, node: int) -> list[tuple[int, bool]]:
        """``(ancestor, went_right)`` pairs from the root down to ``node``."""
        steps = []
        while self.parent[node] >= 0:
            par = self.parent[node]
            steps.append((par, self.right[par] == node))
            node = par
        return steps[::-1]

    def depth(self, node: int) -> int:
        return len(self.path(node))

    def arrays(self):
        """Flat arrays consumed by :func:`kernels.route_rows`."""
        if self._arrays is None:
            n, K = len(self), self.schema.max_modalities
            feature = np.zeros(n, dtype=np.int64)
            threshold = np.full(n, np.nan)
            right_mask = np.zeros((n, K), dtype=bool)
            for i, pred in enumerate(self.predicates):
                if pred is None:
                    continue
                feature[i] = pred.feature
                if pred.is_nominal:
                    right_mask[i, list(pred.right_set)] = True
                else:
                    threshold[i] = pred.threshold
            self._arrays = (
                feature,
                threshold,
                right_mask,
                np.array(self.left, dtype=np.int64),
                np.array(self.right, dtype=np.int64),
            )
        return self._arrays

    def box_arrays(self, nodes=None):
        nodes = self.leaves() if nodes is None else nodes
        return stack_boxes([self.boxes[i] for i in nodes])

    def right_fraction(self, node: int) -> float:
        """Share of the node's constraint on its split feature that goes right."""
        pred = self.predicates[node]
        j = pred.feature
        par = feature_fraction(self.boxes[node], j, self.schema)
        return feature_fraction(self.boxes[self.right[node]], j, self.schema) / par


def leaf_of(tree: Tree, row) -> int:
    row = np.asarray(row, dtype=np.float64)
    node = 0
    while not tree.is_leaf(node):
        pred = tree.predicates[node]
        v = row[pred.feature]
        if math.isnan(v):
            raise TreeError(f"row is missing tested feature {tree.schema[pred.feature].name!r}; use route_weights")
        node = tree.right[node] if pred(v) else tree.left[node]
    return node


def route_weights(tree: Tree, row) -> dict[int, float]:
    """Distribute a row over leaves; a missing tested value splits flow by domain length."""
    row = np.asarray(row, dtype=np.float64)
    out: dict[int, float] = {}
    stack = [(0, 1.0)]
    while stack:
        node, w = stack.pop()
        if tree.is_leaf(node):
            out[node] = out.get(node, 0.0) + w
            continue
        pred = tree.predicates[node]
        v = row[pred.feature]
        if math.isnan(v):
            fr = tree.right_fraction(node)
            stack.append((tree.left[node], w * (1.0 - fr)))
            stack.append((tree.right[node], w * fr))
        else:
            stack.append((tree.right[node] if pred(v) else tree.left[node], w))
    return dict(sorted(out.items()))


def route_matrix(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Per-node routing weights of shape ``(len(tree), n_rows)``; leaf rows sum to 1 per column."""
    X = np.asarray(X, dtype=np.float64)
    W = np.zeros((len(tree), X.shape[0]))
    W[0] = 1.0
    missing_any = np.isnan(X).any(axis=1)
    if not missing_any.any():
        leaves = kernels.route_rows(*tree.arrays(), X)
        W[0] = 0.0
        W[leaves, np.arange(X.shape[0])] = 1.0
        for node in range(len(tree) - 1, -1, -1):
            if not tree.is_leaf(node):
                W[node] = W[tree.left[node]] + W[tree.right[node]]
        return W
    for node in range(len(tree)):
        if tree.is_leaf(node):
            continue
        w = W[node]
        pred = tree.predicates[node]
        v = X[:, pred.feature]
        miss = np.isnan(v)
        if pred.is_nominal:
            go = np.isin(np.where(miss, -1, v).astype(np.int64), list(pred.right_set))
        else:
            with np.errstate(invalid="ignore"):
                go = v >= pred.threshold
        fr = tree.right_fraction(node)
        right = np.where(miss, fr, go.astype(np.float64))
        W[tree.right[node]] = w * right
        W[tree.left[node]] = w * (1.0 - right)
    return W


def leaf_route_weights(tree: Tree, X: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Leaves and the ``(n_rows, n_leaves)`` routing matrix."""
    leaves = tree.leaves()
    return leaves, route_matrix(tree, X)[leaves].T


def support_box(tree: Tree, leaf: int) -> SupportBox:
    return tree.boxes[leaf]


# ---------------------------------------------------------------- models


@dataclass
class PartitionStats:
    """A finite binary task: per-cell real mass ``p`` and fake mass ``n`` with prior ``prior``."""

    prior: float
    p: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.n = np.asarray(self.n, dtype=np.float64)
        if not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")
        if self.p.shape != self.n.shape or self.p.ndim != 1:
            raise ValueError("p and n must be 1-d arrays of equal length")
        if (self.p < 0).any() or (self.n < 0).any():
            raise ValueError("cell masses must be nonnegative")
        if abs(self.p.sum() - 1.0) > SUM_TOL or abs(self.n.sum() - 1.0) > SUM_TOL:
            raise ValueError("p and n must each sum to 1")


@dataclass
class DecisionTree:
    tree: Tree
    prior: float = 0.5
    p_real: np.ndarray = field(default_factory=lambda: np.ones(1))
    p_fake: np.ndarray = field(default_factory=lambda: np.ones(1))
    metadata: dict = field(default_factory=dict)

    def leaf_posterior(self, leaf: int) -> float:
        a = self.prior * self.p_real[leaf]
        b = (1.0 - self.prior) * self.p_fake[leaf]
        return self.prior if a + b == 0 else a / (a + b)

    def stats(self) -> PartitionStats:
        leaves = self.tree.leaves()
        return PartitionStats(self.prior, self.p_real[leaves], self.p_fake[leaves])


class GenerativeTree:
    """Tree whose internal nodes carry the probability of taking the right (true) arc."""

    def __init__(self, tree: Tree, p_right=None, metadata=None):
        self.tree = tree
        self.p_right = list(p_right) if p_right is not None else [math.nan] * len(tree)
        self.metadata = dict(metadata or {})

    @classmethod
    def uniform(cls, schema: Schema) -> "GenerativeTree":
        return cls(Tree(schema))

    @property
    def schema(self) -> Schema:
        return self.tree.schema

    def split(self, leaf: int, predicate: Predicate, p: float) -> tuple[int, int]:
        if not 0.0 <= p <= 1.0:
            raise TreeError("Bernoulli probability must lie in [0, 1]")
        l, r = self.tree.split(leaf, predicate)
        self.p_right[leaf] = float(p)
        self.p_right.extend([math.nan, math.nan])
        return l, r

    def node_weights(self) -> np.ndarray:
        w = np.zeros(len(self.tree))
        w[0] = 1.0
        for node in range(len(self.tree)):
            if not self.tree.is_leaf(node):
                p = self.p_right[node]
                w[self.tree.left[node]] = w[node] * (1.0 - p)
                w[self.tree.right[node]] = w[node] * p
        return w

    def leaf_weights(self) -> tuple[list[int], np.ndarray]:
        leaves = self.tree.leaves()
        return leaves, self.node_weights()[leaves]


def leaf_weight(gt: GenerativeTree, leaf: int) -> float:
    w = 1.0
    for node, went_right in gt.tree.path(leaf):
        p = gt.p_right[node]
        w *= p if went_right else 1.0 - p
    return w


def generator_mass_in_boxes(gt: GenerativeTree, boxes) -> np.ndarray:
    """Generator mass of each box under locally uniform leaf densities."""
    schema = gt.schema
    leaves, w = gt.leaf_weights()
    frac = kernels.overlap_fractions(
        *gt.tree.box_arrays(leaves), *stack_boxes(boxes), schema.kinds, schema.lengths
    )
    return w @ frac


def generator_mass_in_box(gt: GenerativeTree, box: Optional[SupportBox]) -> float:
    if box is None:
        return 0.0
    return float(generator_mass_in_boxes(gt, [box])[0])


def dataset_leaf_weights(tree: Tree, dataset: Dataset) -> np.ndarray:
    """Per-node share of the dataset's rows (fractional for missing values)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return route_matrix(tree, dataset.values).sum(axis=1) / len(dataset)
