"""Greedy top-down induction of decision-tree discriminators.

The real sample is tracked row by row (with fractional weights for rows missing
a tested value). The fake side is any object exposing the small
``FakeMassProvider`` interface below: an analytic generator, the locally
uniform measure used by copycat training, or a fake sample.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import INTEGER, NOMINAL, Dataset
from .losses import get_loss, statistical_information
from .trees import (
    DecisionTree,
    GenerativeTree,
    PartitionStats,
    Predicate,
    SupportBox,
    Tree,
    feature_fraction,
    route_matrix,
)

logger = logging.getLogger(__name__)

MAX_NUMERIC_CANDIDATES = 64
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class SplitCandidate:
    leaf: int
    predicate: Predicate
    p_left: float
    p_right: float
    n_left: float
    n_right: float
    score: float


# ---------------------------------------------------------------- row bookkeeping


def _right_fractions(box: SupportBox, feature: int, tree: Tree, thresholds=None, right_sets=None):
    """Share of the box's constraint on ``feature`` that each candidate sends right."""
    schema = tree.schema
    if right_sets is not None:
        own = box.mask[feature].sum()
        return np.array([sum(box.mask[feature, k] for k in rs) / own for rs in right_sets])
    lo, hi = box.lo[feature], box.hi[feature]
    return (hi - np.asarray(thresholds)) / (hi - lo)


class RowMass:
    """Fractional assignment of a sample's rows to the leaves of a growing tree."""

    def __init__(self, dataset: Dataset, tree: Tree):
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        self.X = dataset.values
        self.m = len(dataset)
        self.tree = tree
        W = route_matrix(tree, self.X)
        self.rows = {}
        for leaf in tree.leaves():
            idx = np.flatnonzero(W[leaf] > 0)
            self.rows[leaf] = (idx, W[leaf, idx])

    def weight(self, leaf: int) -> float:
        """Row-equivalent weight at the leaf."""
        return float(self.rows[leaf][1].sum())

    def mass(self, leaf: int) -> float:
        return self.weight(leaf) / self.m

    def right_weights(self, leaf, feature, thresholds=None, right_sets=None) -> np.ndarray:
        idx, w = self.rows[leaf]
        v = self.X[idx, feature]
        miss = np.isnan(v)
        frac = _right_fractions(self.tree.boxes[leaf], feature, self.tree, thresholds, right_sets)
        w_miss = w[miss].sum()
        vo, wo = v[~miss], w[~miss]
        if right_sets is not None:
            codes = vo.astype(np.int64)
            obs = np.array([wo[np.isin(codes, list(rs))].sum() for rs in right_sets])
        else:
            order = np.argsort(vo, kind="stable")
            vs, cw = vo[order], np.concatenate([[0.0], np.cumsum(wo[order])])
            below = cw[np.searchsorted(vs, thresholds, side="left")]
            obs = cw[-1] - below
        return obs + w_miss * frac

    def observed_values(self, leaf, feature) -> np.ndarray:
        idx, w = self.rows[leaf]
        v = self.X[idx, feature]
        return v[~np.isnan(v) & (w > 0)]

    def split(self, leaf, left, right, predicate: Predicate, right_fraction: float) -> None:
        idx, w = self.rows.pop(leaf)
        v = self.X[idx, predicate.feature]
        miss = np.isnan(v)
        if predicate.is_nominal:
            go = np.isin(np.where(miss, -1, v).astype(np.int64), list(predicate.right_set))
        else:
            with np.errstate(invalid="ignore"):
                go = v >= predicate.threshold
        share = np.where(miss, right_fraction, go.astype(np.float64))
        for child, s in ((left, 1.0 - share), (right, share)):
            keep = s > 0
            self.rows[child] = (idx[keep], (w * s)[keep])


# ---------------------------------------------------------------- fake providers


class SampledFake:
    """Fake measure given by a sample of generated rows."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._rows = None

    def attach(self, tree: Tree):
        self._rows = RowMass(self.dataset, tree)

    def mass(self, leaf):
        return self._rows.mass(leaf)

    def right_masses(self, leaf, feature, thresholds=None, right_sets=None):
        return self._rows.right_weights(leaf, feature, thresholds, right_sets) / self._rows.m

    def split(self, leaf, left, right, predicate, right_fraction):
        self._rows.split(leaf, left, right, predicate, right_fraction)


class AnalyticFake:
    """Fake measure of a generative tree, computed exactly from box overlaps."""

    def __init__(self, gt: GenerativeTree):
        self.gt = gt
        leaves, w = gt.leaf_weights()
        self.w = w
        self.lo, self.hi, self.mask = gt.tree.box_arrays(leaves)
        self.tree = None

    def attach(self, tree: Tree):
        self.tree = tree

    def _feature_overlaps(self, box: SupportBox) -> np.ndarray:
        """``(G, d)`` per-feature fractions of every generator leaf lying inside ``box``."""
        schema = self.gt.schema
        d = len(schema)
        F = np.ones((len(self.w), d))
        for j in range(d):
            if schema.kinds[j] == NOMINAL:
                own = self.mask[:, j, :].sum(axis=1)
                both = (self.mask[:, j, :] & box.mask[j][None, :]).sum(axis=1)
                F[:, j] = both / own
            elif schema.lengths[j] > 0:
                width = self.hi[:, j] - self.lo[:, j]
                inter = np.minimum(self.hi[:, j], box.hi[j]) - np.maximum(self.lo[:, j], box.lo[j])
                F[:, j] = np.clip(inter, 0.0, None) / width
        return F

    def mass(self, leaf):
        F = self._feature_overlaps(self.tree.boxes[leaf])
        return float(self.w @ F.prod(axis=1))

    def right_masses(self, leaf, feature, thresholds=None, right_sets=None):
        box = self.tree.boxes[leaf]
        F = self._feature_overlaps(box)
        base = self.w * np.prod(np.delete(F, feature, axis=1), axis=1)
        j = feature
        if right_sets is not None:
            own = self.mask[:, j, :].sum(axis=1)
            out = []
            for rs in right_sets:
                sel = np.zeros(self.mask.shape[2], dtype=bool)
                sel[list(rs)] = True
                both = (self.mask[:, j, :] & (box.mask[j] & sel)[None, :]).sum(axis=1)
                out.append(base @ (both / own))
            return np.array(out)
        t = np.asarray(thresholds)[None, :]
        lo, hi = self.lo[:, j][:, None], self.hi[:, j][:, None]
        inter = np.minimum(hi, box.hi[j]) - np.maximum(lo, t)
        return base @ (np.clip(inter, 0.0, None) / (hi - lo))

    def split(self, leaf, left, right, predicate, right_fraction):
        pass


class LocalUniformFake:
    """Generator mass spread uniformly within each discriminator leaf.

    Used by copycat training, where the generator shares the discriminator's
    tree: a child's fake mass is the parent's mass times its volume share.
    """

    def __init__(self, gt: GenerativeTree):
        self.gt = gt
        self.tree = None

    def attach(self, tree: Tree):
        self.tree = tree

    def mass(self, leaf):
        return float(self.gt.node_weights()[leaf])

    def right_masses(self, leaf, feature, thresholds=None, right_sets=None):
        frac = _right_fractions(self.tree.boxes[leaf], feature, self.tree, thresholds, right_sets)
        return self.mass(leaf) * frac

    def split(self, leaf, left, right, predicate, right_fraction):
        pass


# ---------------------------------------------------------------- builder


def _risk_mass(loss, prior, p, n):
    """``m * L(eta)`` for mixture mass ``m`` and calibrated posterior ``eta``."""
    m = prior * p + (1.0 - prior) * n
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(m > 0, prior * p / np.where(m > 0, m, 1.0), prior)
    return m * loss.bayes_risk(np.clip(eta, 0.0, 1.0))


class DiscriminatorBuilder:
    """Grows a decision tree one split at a time, heaviest admissible leaf first."""

    def __init__(
        self,
        real: Dataset,
        fake,
        loss="matusita",
        prior: float = 0.5,
        tree: Optional[Tree] = None,
        min_child_weight: float = 1.0,
        max_candidates: int = MAX_NUMERIC_CANDIDATES,
    ):
        if len(real) == 0:
            raise ValueError("empty real dataset")
        if not 0.0 < prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")
        self.schema = real.schema
        self.tree = tree if tree is not None else Tree(real.schema)
        self.loss = get_loss(loss)
        self.prior = prior
        self.min_child_weight = min_child_weight
        self.max_candidates = max_candidates
        self.real = RowMass(real, self.tree)
        self.fake = fake
        fake.attach(self.tree)
        self._best: dict[int, Optional[SplitCandidate]] = {}
        self._fake_mass: dict[int, float] = {}

    def refresh(self):
        """Forget cached fake masses and candidates (the fake measure changed)."""
        self._best.clear()
        self._fake_mass.clear()

    def fake_mass(self, leaf) -> float:
        if leaf not in self._fake_mass:
            self._fake_mass[leaf] = self.fake.mass(leaf)
        return self._fake_mass[leaf]

    def mixture_mass(self, leaf) -> float:
        return self.prior * self.real.mass(leaf) + (1.0 - self.prior) * self.fake_mass(leaf)

    def _numeric_thresholds(self, leaf, j) -> np.ndarray:
        vals = np.unique(self.real.observed_values(leaf, j))
        if vals.size < 2:
            return np.empty(0)
        mids = 0.5 * (vals[:-1] + vals[1:])
        if mids.size > self.max_candidates:
            pick = np.unique(np.round(np.linspace(0, mids.size - 1, self.max_candidates)).astype(int))
            mids = mids[pick]
        if self.schema.kinds[j] == INTEGER:
            mids = np.unique(np.ceil(mids))
        box = self.tree.boxes[leaf]
        return mids[(mids > box.lo[j]) & (mids < box.hi[j])]

    def candidate_splits(self, leaf: int) -> list[SplitCandidate]:
        """Admissible candidates at ``leaf`` in deterministic (feature, threshold) order."""
        m = self.real.m
        p_par = self.real.mass(leaf)
        n_par = self.fake_mass(leaf)
        parent_risk = _risk_mass(self.loss, self.prior, p_par, n_par)
        box = self.tree.boxes[leaf]
        out = []
        for j in range(len(self.schema)):
            if self.schema.kinds[j] == NOMINAL:
                if box.mask[j].sum() < 2:
                    continue
                present = np.unique(self.real.observed_values(leaf, j)).astype(np.int64)
                present = [int(c) for c in present if box.mask[j, c]]
                if not present:
                    continue
                sets = [frozenset([c]) for c in present]
                w_r = self.real.right_weights(leaf, j, right_sets=sets)
                n_r = self.fake.right_masses(leaf, j, right_sets=sets)
                preds = [Predicate(j, right_set=s) for s in sets]
            else:
                ts = self._numeric_thresholds(leaf, j)
                if ts.size == 0:
                    continue
                w_r = self.real.right_weights(leaf, j, thresholds=ts)
                n_r = self.fake.right_masses(leaf, j, thresholds=ts)
                preds = [Predicate(j, threshold=float(t)) for t in ts]
            p_r = w_r / m
            p_l = p_par - p_r
            n_r = np.clip(n_r, 0.0, n_par)
            n_l = n_par - n_r
            gain = parent_risk - _risk_mass(self.loss, self.prior, p_l, n_l) - _risk_mass(
                self.loss, self.prior, p_r, n_r
            )
            w_l = p_par * m - w_r
            ok = (w_l >= self.min_child_weight - 1e-9) & (w_r >= self.min_child_weight - 1e-9)
            for k in np.flatnonzero(ok):
                out.append(
                    SplitCandidate(leaf, preds[k], float(p_l[k]), float(p_r[k]), float(n_l[k]), float(n_r[k]), float(gain[k]))
                )
        return out

    def best_split(self, leaf: int) -> Optional[SplitCandidate]:
        if leaf not in self._best:
            best = None
            for cand in self.candidate_splits(leaf):
                if cand.score <= MIN_GAIN:
                    continue
                if best is None or cand.score > best.score:
                    best = cand
            self._best[leaf] = best
        return self._best[leaf]

    def next_split(self) -> Optional[SplitCandidate]:
        """Best split of the heaviest leaf that admits one."""
        leaves = sorted(self.tree.leaves(), key=lambda lf: (-self.mixture_mass(lf), lf))
        for leaf in leaves:
            cand = self.best_split(leaf)
            if cand is not None:
                return cand
        return None

    def apply(self, cand: SplitCandidate) -> tuple[int, int]:
        leaf = cand.leaf
        left, right = self.tree.split(leaf, cand.predicate)
        fr = self.tree.right_fraction(leaf)
        self.real.split(leaf, left, right, cand.predicate, fr)
        self.fake.split(leaf, left, right, cand.predicate, fr)
        self._best.pop(leaf, None)
        self._fake_mass.pop(leaf, None)
        return left, right

    def step(self) -> Optional[SplitCandidate]:
        cand = self.next_split()
        if cand is not None:
            self.apply(cand)
        return cand

    def stats(self) -> PartitionStats:
        leaves = self.tree.leaves()
        p = np.array([self.real.mass(lf) for lf in leaves])
        n = np.array([self.fake_mass(lf) for lf in leaves])
        return PartitionStats(self.prior, p / p.sum(), n / n.sum())

    def information(self) -> float:
        return statistical_information(self.stats(), self.loss)

    def decision_tree(self, metadata=None) -> DecisionTree:
        tree = self.tree
        p = np.zeros(len(tree))
        n = np.zeros(len(tree))
        for lf in tree.leaves():
            p[lf] = self.real.mass(lf)
            n[lf] = self.fake_mass(lf)
        for node in range(len(tree) - 1, -1, -1):
            if not tree.is_leaf(node):
                p[node] = p[tree.left[node]] + p[tree.right[node]]
                n[node] = n[tree.left[node]] + n[tree.right[node]]
        meta = {
            "loss": self.loss.name,
            "numeric_candidates": f"midpoints of observed values, at most {self.max_candidates}",
            "nominal_candidates": "one modality versus the rest",
            "min_child_weight": self.min_child_weight,
        }
        meta.update(metadata or {})
        return DecisionTree(tree, self.prior, p, n, meta)


# ---------------------------------------------------------------- functional API


def induce(real: Dataset, fake, loss="matusita", prior: float = 0.5, max_splits: int = 0, seed=None, **kw) -> DecisionTree:
    """Induce a discriminator of at most ``max_splits`` splits against ``fake``.

    ``fake`` is a fake-mass provider, a :class:`GenerativeTree` (used analytically)
    or a :class:`Dataset` of generated rows. Induction is deterministic, so
    ``seed`` is only recorded.
    """
    if max_splits < 0:
        raise ValueError("max_splits must be nonnegative")
    if isinstance(fake, GenerativeTree):
        fake = AnalyticFake(fake)
    elif isinstance(fake, Dataset):
        fake = SampledFake(fake)
    builder = DiscriminatorBuilder(real, fake, loss, prior, **kw)
    info = [builder.information()]
    done = 0
    while done < max_splits:
        cand = builder.step()
        if cand is None:
            logger.info("no admissible split left after %d splits", done)
            break
        done += 1
        info.append(builder.information())
    return builder.decision_tree({"splits": done, "seed": seed, "information_trace": info})


def candidate_splits(builder: DiscriminatorBuilder, leaf: int) -> list[SplitCandidate]:
    return builder.candidate_splits(leaf)


def leaf_posterior(dt: DecisionTree, leaf: int) -> float:
    return dt.leaf_posterior(leaf)


def real_leaf_weights(dt: DecisionTree, real: Dataset) -> dict[int, float]:
    """Share of the dataset reaching each leaf, splitting rows with missing tested values."""
    W = route_matrix(dt.tree, real.values)
    leaves = dt.tree.leaves()
    weights = W[leaves].sum(axis=1) / len(real)
    return dict(zip(leaves, weights.tolist()))
