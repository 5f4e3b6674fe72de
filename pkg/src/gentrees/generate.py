"""Sampling from a generative tree and imputing missing values with it."""

from __future__ import annotations

import logging

import numpy as np

from . import kernels
from .data import INTEGER, NOMINAL, Dataset
from .trees import GenerativeTree, box_volume

logger = logging.getLogger(__name__)


def _fill_uniform(schema, lo, hi, mask, u):
    """Map uniforms ``u`` (rows, d) to uniform values inside per-row boxes ``lo/hi/mask``."""
    n, d = u.shape
    out = np.empty((n, d))
    for j in range(d):
        kind = schema.kinds[j]
        if kind == NOMINAL:
            m = mask[:, j, :]
            count = m.sum(axis=1)
            k = np.minimum(np.floor(u[:, j] * count), count - 1)
            # position of the k-th admissible modality in each row
            out[:, j] = np.argmax(np.cumsum(m, axis=1) > k[:, None], axis=1)
        elif kind == INTEGER:
            count = hi[:, j] - lo[:, j]
            out[:, j] = lo[:, j] + np.minimum(np.floor(u[:, j] * count), count - 1)
        else:
            out[:, j] = lo[:, j] + u[:, j] * (hi[:, j] - lo[:, j])
    return out


def sample(gt: GenerativeTree, n: int, seed, return_leaves: bool = False):
    """Draw ``n`` complete rows: a leaf by its path probability, then a uniform point in its box.

    Drawing the leaf directly from the path products has the same law as
    walking the arcs with their Bernoulli probabilities.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    schema = gt.schema
    rng = np.random.default_rng(seed)
    leaves, w = gt.leaf_weights()
    pick = rng.choice(len(leaves), size=n, p=w / w.sum())
    lo, hi, mask = gt.tree.box_arrays(leaves)
    u = rng.random((n, len(schema)))
    values = _fill_uniform(schema, lo[pick], hi[pick], mask[pick], u)
    ds = Dataset(schema, values)
    if return_leaves:
        return ds, np.asarray(leaves)[pick]
    return ds


def is_support_preserving(gt: GenerativeTree) -> bool:
    """True when no arc of the generator has probability 0 or 1."""
    tree = gt.tree
    return all(0.0 < gt.p_right[i] < 1.0 for i in range(len(tree)) if not tree.is_leaf(i))


class _LeafIndex:
    def __init__(self, gt: GenerativeTree):
        schema = gt.schema
        self.leaves, self.w = gt.leaf_weights()
        self.lo, self.hi, self.mask = gt.tree.box_arrays(self.leaves)
        self.vol = np.array([box_volume(gt.tree.boxes[lf], schema) for lf in self.leaves])
        self.schema = schema

    def select(self, X):
        s = self.schema
        return kernels.select_impute_leaves(X, self.lo, self.hi, self.mask, s.kinds, s.upper, self.w, self.vol)


def _impute_rows(index: _LeafIndex, X, rngs):
    k = index.select(X)
    if np.any(k < 0):
        bad = int(np.flatnonzero(k < 0)[0])
        raise ValueError(f"row {bad} is compatible with no leaf of the generator")
    d = X.shape[1]
    u = np.array([rng.random(d) for rng in rngs]).reshape(len(rngs), d)
    fill = _fill_uniform(index.schema, index.lo[k], index.hi[k], index.mask[k], u)
    out = np.where(np.isnan(X), fill, X)
    return out, np.asarray(index.leaves)[k]


def impute(gt: GenerativeTree, row, rng):
    """Complete one row inside the compatible leaf of maximal density; returns (row, leaf id)."""
    X = np.asarray(row, dtype=np.float64).reshape(1, -1)
    out, leaves = _impute_rows(_LeafIndex(gt), X, [rng])
    return out[0], int(leaves[0])


def impute_dataset(gt: GenerativeTree, dataset: Dataset, seed, return_leaves: bool = False):
    """Impute every incomplete row; row ``i`` uses its own stream seeded by ``(seed, i)``."""
    if dataset.schema != gt.schema:
        raise ValueError("dataset schema does not match the generator's schema")
    X = dataset.values
    todo = np.flatnonzero(np.isnan(X).any(axis=1))
    out = X.copy()
    leaves = np.full(len(dataset), -1)
    if todo.size:
        rngs = [np.random.default_rng([seed, int(i)]) for i in todo]
        out[todo], leaves[todo] = _impute_rows(_LeafIndex(gt), X[todo], rngs)
    ds = dataset.with_values(out)
    if return_leaves:
        return ds, leaves
    return ds
