"""Random models and independent oracles shared by the test modules."""

import itertools
import math
from pathlib import Path

import numpy as np

from gentrees import kernels
from gentrees.data import INTEGER, NOMINAL, REAL, FeatureSpec, Schema
from gentrees.trees import GenerativeTree, Predicate, SupportBox, Tree, TreeError

DATA_DIR = Path(__file__).parent / "data"
MIXED_CSV = DATA_DIR / "mixed.csv"


# ---------------------------------------------------------------- random models


def random_schema(rng, d=None, kinds=("real", "integer", "nominal")):
    d = int(rng.integers(1, 4)) if d is None else d
    feats = []
    for j in range(d):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "real":
            lo = float(rng.uniform(-3, 1))
            feats.append(FeatureSpec.real(f"r{j}", lo, lo + float(rng.uniform(0.5, 4))))
        elif kind == "integer":
            lo = int(rng.integers(-5, 5))
            feats.append(FeatureSpec.integer(f"i{j}", lo, lo + int(rng.integers(2, 9))))
        else:
            k = int(rng.integers(2, 6))
            feats.append(FeatureSpec.nominal(f"n{j}", [f"m{c}" for c in range(k)]))
    return Schema(tuple(feats))


def random_predicate(rng, box: SupportBox, schema: Schema, tries=20):
    """A predicate splitting ``box`` strictly, or None when the box is atomic."""
    for _ in range(tries):
        j = int(rng.integers(len(schema)))
        kind = schema.kinds[j]
        if kind == NOMINAL:
            present = np.flatnonzero(box.mask[j])
            if present.size < 2:
                continue
            k = int(rng.integers(1, present.size))
            return Predicate(j, right_set=frozenset(rng.choice(present, k, replace=False).tolist()))
        lo, hi = box.lo[j], box.hi[j]
        if kind == INTEGER:
            if hi - lo < 2:
                continue
            return Predicate(j, threshold=float(rng.integers(lo + 1, hi)))
        if hi - lo < 1e-3 * schema.lengths[j]:
            continue
        return Predicate(j, threshold=float(lo + (hi - lo) * rng.uniform(0.05, 0.95)))
    return None


def random_tree(rng, schema, splits):
    tree = Tree(schema)
    for _ in range(splits):
        leaves = tree.leaves()
        leaf = leaves[int(rng.integers(len(leaves)))]
        pred = random_predicate(rng, tree.boxes[leaf], schema)
        if pred is not None:
            tree.split(leaf, pred)
    return tree


def random_gt(rng, schema, splits, degenerate=0.0):
    """Random generator; with probability ``degenerate`` an arc gets p in {0, 1}."""
    gt = GenerativeTree.uniform(schema)
    for _ in range(splits):
        leaves, w = gt.leaf_weights()
        alive = [lf for lf, wi in zip(leaves, w) if wi > 0]
        leaf = alive[int(rng.integers(len(alive)))]
        pred = random_predicate(rng, gt.tree.boxes[leaf], schema)
        if pred is None:
            continue
        p = float(rng.integers(2)) if rng.random() < degenerate else float(rng.uniform(0.05, 0.95))
        gt.split(leaf, pred, p)
    return gt


def random_box(rng, schema):
    box = SupportBox.full(schema)
    for j in range(len(schema)):
        kind = schema.kinds[j]
        if kind == NOMINAL:
            k = schema.n_modalities[j]
            keep = rng.random(k) < 0.6
            keep[int(rng.integers(k))] = True
            box.mask[j, :k] = keep
        elif kind == INTEGER:
            a, b = sorted(rng.integers(schema.lower[j], schema.upper[j], 2))
            box.lo[j], box.hi[j] = a, b + 1
        else:
            a, b = sorted(rng.uniform(schema.lower[j], schema.upper[j], 2))
            box.lo[j], box.hi[j] = a, b
    return box


# ---------------------------------------------------------------- oracles


def leaf_density(gt):
    """Leaf id -> generated mass per unit of normalized volume."""
    schema = gt.schema
    leaves, w = gt.leaf_weights()
    out = {}
    for lf, wi in zip(leaves, w):
        vol = 1.0
        box = gt.tree.boxes[lf]
        for j in range(len(schema)):
            if schema.kinds[j] == NOMINAL:
                vol *= box.mask[j].sum() / schema.n_modalities[j]
            else:
                vol *= (box.hi[j] - box.lo[j]) / schema.lengths[j]
        out[lf] = wi / vol if vol > 0 else 0.0
    return out


def _leaf_of_point(tree, x):
    node = 0
    while tree.left[node] >= 0:
        pred = tree.predicates[node]
        node = tree.right[node] if pred(x[pred.feature]) else tree.left[node]
    return node


def grid_mass(gt, boxes):
    """Exact generated mass of each box by summing over elementary grid cells.

    Per feature the grid is cut at every leaf and query-box boundary (every
    integer / modality for discrete features); the density is constant on each
    cell and read off the leaf containing the cell's center.
    """
    schema = gt.schema
    density = leaf_density(gt)
    axes = []
    for j in range(len(schema)):
        kind = schema.kinds[j]
        if kind == NOMINAL:
            k = schema.n_modalities[j]
            axes.append([(float(c), float(c), 1.0 / k) for c in range(k)])
        elif kind == INTEGER:
            n = int(schema.upper[j] - schema.lower[j])
            axes.append([(float(v), float(v), 1.0 / n) for v in range(int(schema.lower[j]), int(schema.upper[j]))])
        else:
            cuts = {schema.lower[j], schema.upper[j]}
            for b in gt.tree.boxes:
                cuts.update((b.lo[j], b.hi[j]))
            for b in boxes:
                cuts.update((b.lo[j], b.hi[j]))
            cuts = sorted(c for c in cuts if schema.lower[j] <= c <= schema.upper[j])
            axes.append([(a, b, (b - a) / schema.lengths[j]) for a, b in zip(cuts, cuts[1:]) if b > a])
    out = np.zeros(len(boxes))
    for cell in itertools.product(*axes):
        center = np.array([(a + b) / 2 for a, b, _ in cell])
        vol = math.prod(v for _, _, v in cell)
        dens = density[_leaf_of_point(gt.tree, center)]
        if dens == 0:
            continue
        for k, box in enumerate(boxes):
            if all(_cell_in_box(box, j, cell[j], schema) for j in range(len(schema))):
                out[k] += dens * vol
    return out


def _cell_in_box(box, j, cell, schema):
    a, b, _ = cell
    if schema.kinds[j] == NOMINAL:
        return bool(box.mask[j, int(a)])
    if schema.kinds[j] == INTEGER:
        return box.lo[j] <= a < box.hi[j]
    return box.lo[j] <= a and b <= box.hi[j]


def uniform_points(rng, schema, n):
    X = np.empty((n, len(schema)))
    for j in range(len(schema)):
        kind = schema.kinds[j]
        if kind == REAL:
            X[:, j] = rng.uniform(schema.lower[j], schema.upper[j], n)
        else:
            X[:, j] = rng.integers(schema.lower[j], schema.upper[j], n)
    return X


def in_box(X, box, schema, features=None):
    ok = np.ones(len(X), dtype=bool)
    for j in range(len(schema)) if features is None else features:
        if schema.kinds[j] == NOMINAL:
            ok &= box.mask[j][X[:, j].astype(int)]
        else:
            ok &= (X[:, j] >= box.lo[j]) & (X[:, j] < box.hi[j])
    return ok


def monte_carlo_mass(gt, boxes, n, rng):
    """Importance estimate of each box mass from uniform points, with standard errors."""
    schema = gt.schema
    X = uniform_points(rng, schema, n)
    leaves = kernels.route_rows_numpy(*gt.tree.arrays(), X)
    density = leaf_density(gt)
    dens = np.array([density.get(node, 0.0) for node in range(len(gt.tree))])[leaves]
    est, se = [], []
    for box in boxes:
        v = dens * in_box(X, box, schema)
        est.append(v.mean())
        se.append(v.std(ddof=1) / math.sqrt(n))
    return np.array(est), np.array(se)


def split_quantities_oracle(gt, leaf, pred, dt_tree, mass_fn):
    """(n0, nl, nr, tau) per discriminator leaf, from box masses only."""
    from gentrees.trees import box_intersect

    schema = gt.schema
    box = gt.tree.boxes[leaf]
    lbox, rbox = pred.split_box(box)
    dt_boxes = [dt_tree.boxes[lf] for lf in dt_tree.leaves()]
    queries = list(dt_boxes)
    for part in (box, lbox, rbox):
        for b in dt_boxes:
            queries.append(box_intersect(b, part, schema) or empty_box(schema))
    m = mass_fn(queries)
    k = len(dt_boxes)
    total, inside, left, right = m[:k], m[k : 2 * k], m[2 * k : 3 * k], m[3 * k :]
    j = pred.feature
    if schema.kinds[j] == NOMINAL:
        tau = rbox.mask[j].sum() / box.mask[j].sum()
    else:
        tau = (rbox.hi[j] - rbox.lo[j]) / (box.hi[j] - box.lo[j])
    return total - inside, left, right, tau


def empty_box(schema):
    box = SupportBox.full(schema)
    box.mask[:] = False
    box.hi = box.lo.copy()
    # an all-false mask empties nominal features; for purely numeric schemas the
    # degenerate interval [lo, lo) holds no volume
    return box


__all__ = [
    "MIXED_CSV",
    "TreeError",
    "grid_mass",
    "monte_carlo_mass",
    "random_box",
    "random_gt",
    "random_predicate",
    "random_schema",
    "random_tree",
    "split_quantities_oracle",
]

