"""Copycat training: the generator copies every discriminator split.

The generator's Bernoulli on a copied split is the share of real mass going
right, so after each split the generator puts exactly the real mass on every
leaf and the discriminator's posterior collapses to the prior.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .discriminator import DiscriminatorBuilder, LocalUniformFake
from .losses import (
    chi_square,
    coarsen,
    get_loss,
    likelihood_ratio_risk,
    likelihood_ratio_risk_bregman,
    split_budget_log10,
    statistical_information,
)
from .trees import DecisionTree, GenerativeTree, PartitionStats, Predicate, Tree, box_volume

logger = logging.getLogger(__name__)

PARITY_TOL = 1e-9
MONOTONE_TOL = 1e-9

TRACE_FIELDS = ["split", "leaf", "feature", "predicate", "p", "information", "wha_margin", "parity_gap", "chi2"]


class ParityError(RuntimeError):
    pass


class TrainingResult(NamedTuple):
    dt: DecisionTree
    gt: GenerativeTree
    trace: list


def mirror_split(gt: GenerativeTree, leaf: int, predicate: Predicate, m_left: float, m_right: float):
    """Copy a discriminator split onto the generator leaf with the same path."""
    if m_left <= 0 or m_right <= 0:
        raise ValueError("both sides of a copied split need positive real mass")
    p = m_right / (m_left + m_right)
    return gt.split(leaf, predicate, p)


def wha_margin(real_left: float, real_right: float, uniform_right: float) -> float:
    """Edge of a split over a fair coin on the balanced real-versus-uniform mixture.

    Predicting "real" on the right branch errs with probability
    ``1/2 - (P_right - U_right) / 2``; the margin is the distance of that error to 1/2.
    """
    p_right = real_right / (real_left + real_right)
    return 0.5 * abs(p_right - uniform_right)


def _uniform_stats(prior, p, tree: Tree, leaves) -> PartitionStats:
    u = np.array([box_volume(tree.boxes[lf], tree.schema) for lf in leaves])
    return PartitionStats(prior, p / p.sum(), u / u.sum())


def copycat_train(real: Dataset, loss="matusita", prior: float = 0.5, max_splits: int = 0, seed=None, **kw) -> TrainingResult:
    """Grow a discriminator and its copycat generator for at most ``max_splits`` splits."""
    if max_splits < 0:
        raise ValueError("max_splits must be nonnegative")
    loss = get_loss(loss)
    gt = GenerativeTree.uniform(real.schema)
    builder = DiscriminatorBuilder(real, LocalUniformFake(gt), loss, prior, **kw)
    tree = builder.tree
    m = builder.real.m
    trace = []
    info_prev = 0.0
    margins = []
    for t in range(max_splits):
        cand = builder.next_split()
        if cand is None:
            logger.info("copycat stopped early after %d splits: no admissible split", t)
            break
        leaf = cand.leaf
        l, r = builder.apply(cand)
        u_right = tree.right_fraction(leaf)
        gl, gr = mirror_split(gt, leaf, cand.predicate, cand.p_left * m, cand.p_right * m)
        if (gl, gr) != (l, r):
            raise RuntimeError("generator and discriminator arenas diverged")
        margin = wha_margin(cand.p_left, cand.p_right, u_right)
        margins.append(margin)

        leaves = tree.leaves()
        p = np.array([builder.real.mass(lf) for lf in leaves])
        n = gt.node_weights()[leaves]
        gap = float(np.max(np.abs(p - n)))
        if gap > PARITY_TOL:
            raise ParityError(f"split {t}: real and generated leaf masses differ by {gap}")
        info = statistical_information(_uniform_stats(prior, p, tree, leaves), loss)
        if info < info_prev - MONOTONE_TOL:
            raise ArithmeticError(f"split {t}: information decreased from {info_prev} to {info}")
        info_prev = info
        trace.append(
            {
                "split": t,
                "leaf": leaf,
                "feature": real.schema[cand.predicate.feature].name,
                "predicate": cand.predicate.describe(real.schema),
                "p": gt.p_right[leaf],
                "information": info,
                "wha_margin": margin,
                "parity_gap": gap,
                "chi2": chi_square(p, n),
            }
        )
    builder.refresh()
    dt = builder.decision_tree({"splits": len(trace), "seed": seed, "training": "copycat"})
    gt.metadata.update({"splits": len(trace), "seed": seed, "training": "copycat", "loss": loss.name, "prior": prior})
    if margins:
        stats = _uniform_stats(prior, dt.p_real[tree.leaves()], tree, tree.leaves())
        gt.metadata["split_budget_log10"] = split_budget_log10(loss, stats, 0.1, max(min(margins), 1e-12))
    return TrainingResult(dt, gt, trace)


def write_trace(trace, path, fields=TRACE_FIELDS) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(trace)


def ancestors_at(tree: Tree, t: int) -> np.ndarray:
    """For each current leaf, the leaf it belonged to after the first ``t`` splits.

    The split number ``s`` created nodes ``2s + 1`` and ``2s + 2``, so the nodes
    alive after ``t`` splits are exactly the ids below ``2t + 1``.
    """
    out = []
    for lf in tree.leaves():
        node = lf
        while node >= 2 * t + 1:
            node = tree.parent[node]
        out.append(node)
    return np.array(out)


def likelihood_ratio_trace(result: TrainingResult, loss="matusita"):
    """Likelihood-ratio risk of the generator after every split, in both evaluation forms.

    The empirical real measure is taken piecewise uniform on the final partition,
    which refines every intermediate one.
    """
    tree = result.dt.tree
    leaves = tree.leaves()
    prior = result.dt.prior
    p = result.dt.p_real[leaves]
    p = p / p.sum()
    u = np.array([box_volume(tree.boxes[lf], tree.schema) for lf in leaves])
    div, breg = [], []
    for t in range(len(result.trace) + 1):
        q = coarsen(p, u, ancestors_at(tree, t))
        div.append(likelihood_ratio_risk(loss, prior, p, q, u))
        breg.append(likelihood_ratio_risk_bregman(loss, prior, p, q, u))
    return np.array(div), np.array(breg)
