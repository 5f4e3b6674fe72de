"""Adversarial generator training against a fixed decision-tree discriminator.

One generator step splits a leaf and picks the Bernoulli probability that
minimizes the chi-square of the generated measure against the real one on the
discriminator's partition. The chi-square after the split is a quadratic in
that probability, so the minimizer has a closed form.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .data import INTEGER, NOMINAL, Dataset
from .discriminator import AnalyticFake, DiscriminatorBuilder
from .losses import chi_square, get_loss
from .trees import DecisionTree, GenerativeTree, Predicate, Tree, stack_boxes

logger = logging.getLogger(__name__)

P_FLOOR = 1e-12
WGA_REJECT = 1e-15
BOUND_RTOL = 1e-9

TRACE_FIELDS = [
    "round", "step", "leaf", "feature", "tau", "p", "chi2_before", "chi2_after",
    "mu_LL", "mu_RR", "mu_LR", "wga_ratio", "regime", "epsilon", "delta", "bound", "bound_holds",
    "corrected_bound", "corrected_holds",
]


class NoAdmissibleSplit(RuntimeError):
    pass


@dataclass
class SplitQuantities:
    """Per-discriminator-leaf masses around a candidate generator split, and their moments."""

    p: np.ndarray
    n0: np.ndarray
    nl: np.ndarray
    nr: np.ndarray
    tau: float
    infinite: bool = False
    l: np.ndarray = field(init=False)
    r: np.ndarray = field(init=False)
    delta: np.ndarray = field(init=False)
    mu_LL: float = field(init=False)
    mu_RR: float = field(init=False)
    mu_LR: float = field(init=False)
    mu_DD: float = field(init=False)
    mu_LD: float = field(init=False)
    mu_RD: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("degenerate split: tau must lie strictly inside (0, 1)")
        self.p = np.asarray(self.p, dtype=np.float64)
        self.n0, self.nl, self.nr = (np.asarray(a, dtype=np.float64) for a in (self.n0, self.nl, self.nr))
        self.l = self.n0 + self.nl / (1.0 - self.tau)
        self.r = self.n0 + self.nr / self.tau
        self.delta = self.r - self.l
        short = self.p < P_FLOOR
        if np.any(short & ((self.l > 0) | (self.r > 0))):
            self.infinite = True
        pe = np.maximum(self.p, P_FLOOR)
        self.mu_LL = float(np.sum(self.l * self.l / pe))
        self.mu_RR = float(np.sum(self.r * self.r / pe))
        self.mu_LR = float(np.sum(self.l * self.r / pe))
        self.mu_DD = float(np.sum(self.delta * self.delta / pe))
        self.mu_LD = self.mu_LR - self.mu_LL
        self.mu_RD = self.mu_RR - self.mu_LR

    @property
    def leaf_weight(self) -> float:
        return float(np.sum(self.nl + self.nr))

    @property
    def wga_ratio(self) -> float:
        top = max(self.mu_LL, self.mu_RR)
        return self.mu_DD / top if top > 0 else 0.0

    def chi2_before(self) -> float:
        return chi2_after_split(self, self.tau)


def split_quantities(gt: GenerativeTree, leaf: int, predicate: Predicate, dt_tree: Tree, real_weights, _cache=None) -> SplitQuantities:
    """Exact masses for splitting generator ``leaf`` with ``predicate``.

    ``real_weights`` lists the real mass of every discriminator leaf in
    ``dt_tree.leaves()`` order.
    """
    schema = gt.schema
    dt_boxes = _cache["dt_boxes"] if _cache else dt_tree.box_arrays()
    if _cache:
        n_all, w_leaf, frac_leaf = _cache["n_all"], _cache["w"][leaf], _cache["frac"][leaf]
    else:
        leaves, w = gt.leaf_weights()
        frac = kernels.overlap_fractions(*gt.tree.box_arrays(leaves), *dt_boxes, schema.kinds, schema.lengths)
        n_all = w @ frac
        k = leaves.index(leaf)
        w_leaf, frac_leaf = w[k], frac[k]
    box = gt.tree.boxes[leaf]
    predicate.check_strict(box, schema)
    lbox, rbox = predicate.split_box(box)
    j = predicate.feature
    if schema.kinds[j] == NOMINAL:
        tau = rbox.mask[j].sum() / box.mask[j].sum()
    else:
        tau = (rbox.hi[j] - rbox.lo[j]) / (box.hi[j] - box.lo[j])
    side = kernels.overlap_fractions(*stack_boxes([lbox, rbox]), *dt_boxes, schema.kinds, schema.lengths)
    n0 = np.clip(n_all - w_leaf * frac_leaf, 0.0, None)
    nl = w_leaf * (1.0 - tau) * side[0]
    nr = w_leaf * tau * side[1]
    return SplitQuantities(np.asarray(real_weights, dtype=np.float64), n0, nl, nr, float(tau))


def bernoulli_p(q: SplitQuantities) -> float:
    """Clamped minimizer of the post-split chi-square; ``tau`` when the quadratic is flat."""
    if q.mu_DD <= 0.0:
        return q.tau
    return float(min(max((q.mu_LL - q.mu_LR) / q.mu_DD, 0.0), 1.0))


def chi2_after_split(q: SplitQuantities, p: float) -> float:
    return -1.0 + q.mu_LL + 2.0 * p * q.mu_LD + p * p * q.mu_DD


def rescaled_fake_masses(q: SplitQuantities, p: float) -> np.ndarray:
    """Generated mass per discriminator leaf after the split, by rescaling the two halves."""
    return q.n0 + q.nl * (1.0 - p) / (1.0 - q.tau) + q.nr * p / q.tau


def chi2_after_split_rescaled(q: SplitQuantities, p: float) -> float:
    return chi_square(np.maximum(q.p, P_FLOOR) if q.infinite else q.p, rescaled_fake_masses(q, p))


# ---------------------------------------------------------------- policy


class MidpointPolicy:
    """Heaviest generator leaf first; candidate splits at interval midpoints or single modalities."""

    def __init__(self, max_candidates: int = 8):
        self.max_candidates = max_candidates

    def leaf_order(self, gt: GenerativeTree) -> list[int]:
        leaves, w = gt.leaf_weights()
        order = sorted(range(len(leaves)), key=lambda k: (-w[k], leaves[k]))
        return [leaves[k] for k in order if w[k] > 0]

    def candidates(self, gt: GenerativeTree, leaf: int, dt_tree: Optional[Tree] = None) -> list[Predicate]:
        schema = gt.schema
        box = gt.tree.boxes[leaf]
        out = []
        for j in range(len(schema)):
            kind = schema.kinds[j]
            if kind == NOMINAL:
                present = np.flatnonzero(box.mask[j])
                if present.size >= 2:
                    out.extend(Predicate(j, right_set=frozenset([int(c)])) for c in present)
            elif kind == INTEGER:
                count = int(box.hi[j] - box.lo[j])
                if count >= 2:
                    out.append(Predicate(j, threshold=float(box.lo[j] + count // 2)))
            elif schema.lengths[j] > 0:
                t = 0.5 * (box.lo[j] + box.hi[j])
                if box.lo[j] < t < box.hi[j]:
                    out.append(Predicate(j, threshold=float(t)))
        return out[: self.max_candidates]


class BoundaryPolicy(MidpointPolicy):
    """Split numeric features on discriminator cell boundaries that cross the leaf.

    For each numeric feature the ``per_feature`` boundaries closest to the
    leaf midpoint are tried; a feature with no boundary inside the leaf falls
    back to its midpoint. Nominal features keep the single-modality candidates.
    Placing generator cuts where the discriminator draws its cells keeps the
    generator from fragmenting discriminator cells it cannot fit.
    """

    def __init__(self, max_candidates: int = 8, per_feature: int = 4):
        super().__init__(max_candidates)
        self.per_feature = per_feature

    def candidates(self, gt: GenerativeTree, leaf: int, dt_tree: Optional[Tree] = None) -> list[Predicate]:
        base = MidpointPolicy.candidates(self, gt, leaf)
        if dt_tree is None:
            return base
        schema = gt.schema
        box = gt.tree.boxes[leaf]
        lo, hi, _ = dt_tree.box_arrays()
        out = []
        for pred in base:
            j = pred.feature
            if pred.is_nominal:
                out.append(pred)
                continue
            cuts = np.unique(np.r_[lo[:, j], hi[:, j]])
            cuts = cuts[(cuts > box.lo[j]) & (cuts < box.hi[j])]
            if schema.kinds[j] == INTEGER:
                cuts = cuts[cuts == np.round(cuts)]
            if cuts.size == 0:
                out.append(pred)
                continue
            mid = 0.5 * (box.lo[j] + box.hi[j])
            near = cuts[np.argsort(np.abs(cuts - mid), kind="stable")][: self.per_feature]
            out.extend(Predicate(j, threshold=float(t)) for t in near)
        return out[: self.max_candidates]


POLICIES = {"midpoint": MidpointPolicy, "boundary": BoundaryPolicy}


# ---------------------------------------------------------------- step


@dataclass
class StepReport:
    leaf: int
    feature: int
    predicate: Predicate
    tau: float
    p: float
    p_optimal: float
    chi2_before: float
    chi2_after: float
    chi2_after_rescaled: float
    mu_LL: float
    mu_RR: float
    mu_LR: float
    mu_DD: float
    wga_ratio: float
    clamped: bool
    regime: Optional[str]
    epsilon: float
    delta: float
    bound: float
    bound_holds: Optional[bool]
    corrected_bound: float
    corrected_holds: Optional[bool]

    @property
    def gap(self) -> float:
        return abs(self.tau - self.p)


class DecayCheck(NamedTuple):
    regime: Optional[str]
    epsilon: float
    delta: float
    bound: float
    holds: Optional[bool]
    corrected_bound: float
    corrected_holds: Optional[bool]


_NO_CHECK = DecayCheck(None, float("nan"), float("nan"), float("nan"), None, float("nan"), None)


def check_decay(q: SplitQuantities, p: float, chi2_before: float, chi2_after: float) -> DecayCheck:
    """Which geometric-decay guarantee applies to this step, with realized constants.

    Interior ``p``: ``epsilon = |tau - p|`` and ``delta`` is the largest level that
    both chi-squares clear, ``min(before, after)``; the stated bound is
    ``before / (1 + delta * epsilon**2)``. The chi-square is the quadratic
    ``after + mu_DD * (v - p)**2`` in the Bernoulli ``v``, which gives the exact
    ``before / (1 + mu_DD * epsilon**2 / after)``; it is reported as
    ``corrected_bound`` and coincides with the stated one only when
    ``mu_DD >= after**2``.

    ``p`` in {0, 1}: ``delta`` is the realized weak-generating ratio
    ``mu_DD / max(mu_LL, mu_RR)`` and the bound is
    ``before / (1 + delta * (tau + (1 - 2 tau) p)**2)``.
    """
    tol = BOUND_RTOL * max(1.0, abs(chi2_before))
    if 0.0 < p < 1.0:
        eps = abs(q.tau - p)
        delta = min(chi2_before, chi2_after)
        if eps <= 0.0 or delta <= 0.0:
            return _NO_CHECK
        bound = chi2_before / (1.0 + delta * eps * eps)
        corrected = chi2_before / (1.0 + q.mu_DD * eps * eps / chi2_after)
        return DecayCheck(
            "interior", eps, delta, bound, bool(chi2_after <= bound + tol), corrected, bool(chi2_after <= corrected + tol)
        )
    delta = q.wga_ratio
    if delta <= 0.0:
        return _NO_CHECK
    bound = chi2_before / (1.0 + delta * (q.tau + (1.0 - 2.0 * q.tau) * p) ** 2)
    holds = bool(chi2_after <= bound + tol)
    return DecayCheck("degenerate", abs(q.tau - p), delta, bound, holds, bound, holds)


def _overlap_cache(gt: GenerativeTree, dt_tree: Tree):
    schema = gt.schema
    leaves, w = gt.leaf_weights()
    dt_boxes = dt_tree.box_arrays()
    frac = kernels.overlap_fractions(*gt.tree.box_arrays(leaves), *dt_boxes, schema.kinds, schema.lengths)
    return {
        "dt_boxes": dt_boxes,
        "n_all": w @ frac,
        "w": dict(zip(leaves, w)),
        "frac": dict(zip(leaves, frac)),
    }


def topdowngen_step(gt, dt, real_weights, policy=None, allow_degenerate: bool = True, p_min: float = 1e-3) -> StepReport:
    """Split one generator leaf against the fixed discriminator ``dt``."""
    policy = policy or BoundaryPolicy()
    dt_tree = dt.tree if isinstance(dt, DecisionTree) else dt
    real_weights = np.asarray(real_weights, dtype=np.float64)
    cache = _overlap_cache(gt, dt_tree)
    for leaf in policy.leaf_order(gt):
        best = None
        for pred in policy.candidates(gt, leaf, dt_tree):
            q = split_quantities(gt, leaf, pred, dt_tree, real_weights, _cache=cache)
            if q.mu_DD <= WGA_REJECT * max(q.mu_LL, q.mu_RR):
                continue
            p_opt = bernoulli_p(q)
            value = chi2_after_split(q, p_opt)
            if best is None or value < best[0]:
                best = (value, pred, q, p_opt)
        if best is None:
            continue
        _, pred, q, p_opt = best
        p = p_opt
        clamped = False
        if not allow_degenerate:
            p = min(max(p_opt, p_min), 1.0 - p_min)
            clamped = p != p_opt
        chi2_before = q.chi2_before()
        chi2_after = chi2_after_split(q, p)
        # re-clamped Bernoullis are not the minimizer, so no guarantee applies
        check = _NO_CHECK if clamped else check_decay(q, p, chi2_before, chi2_after)
        gt.split(leaf, pred, p)
        return StepReport(
            leaf, pred.feature, pred, q.tau, p, p_opt, chi2_before, chi2_after,
            chi2_after_split_rescaled(q, p), q.mu_LL, q.mu_RR, q.mu_LR, q.mu_DD, q.wga_ratio,
            clamped, *check,
        )
    raise NoAdmissibleSplit("no generator leaf admits a split that the discriminator can tell apart")


# ---------------------------------------------------------------- training loop


class AdversarialResult(NamedTuple):
    dt: DecisionTree
    gt: GenerativeTree
    trace: list
    chi2_initial: float
    chi2_final: float


def _dt_chi2(gt: GenerativeTree, dt_tree: Tree, real_weights) -> float:
    schema = gt.schema
    leaves, w = gt.leaf_weights()
    frac = kernels.overlap_fractions(*gt.tree.box_arrays(leaves), *dt_tree.box_arrays(), schema.kinds, schema.lengths)
    return chi_square(real_weights, w @ frac)


def adversarial_train(
    real: Dataset,
    loss="matusita",
    prior: float = 0.5,
    gen_splits: int = 1,
    disc_splits_per_round: int = 1,
    rounds: int = 0,
    seed=None,
    allow_degenerate: bool = True,
    p_min: float = 1e-3,
    policy=None,
    strict: bool = False,
) -> AdversarialResult:
    """Alternate discriminator growth and generator steps for ``rounds`` rounds.

    Every step records whether its decay guarantee held; with ``strict`` set,
    a violation raises immediately.
    """
    loss = get_loss(loss)
    gt = GenerativeTree.uniform(real.schema)
    dt_tree = Tree(real.schema)
    trace = []
    builder = None
    for rnd in range(rounds):
        builder = DiscriminatorBuilder(real, AnalyticFake(gt), loss, prior, tree=dt_tree)
        for _ in range(disc_splits_per_round):
            if builder.step() is None:
                break
        real_weights = np.array([builder.real.mass(lf) for lf in dt_tree.leaves()])
        for step in range(gen_splits):
            try:
                rep = topdowngen_step(gt, dt_tree, real_weights, policy, allow_degenerate, p_min)
            except NoAdmissibleSplit:
                logger.info("round %d: generator has no admissible split", rnd)
                break
            if strict and rep.bound_holds is False:
                raise ArithmeticError(f"round {rnd} step {step}: decay bound violated: {rep}")
            row = asdict(rep)
            row.update(round=rnd, step=step, feature=real.schema[rep.feature].name, predicate=rep.predicate.describe(real.schema))
            trace.append(row)
    builder = DiscriminatorBuilder(real, AnalyticFake(gt), loss, prior, tree=dt_tree)
    real_weights = np.array([builder.real.mass(lf) for lf in dt_tree.leaves()])
    chi2_initial = _dt_chi2(GenerativeTree.uniform(real.schema), dt_tree, real_weights)
    chi2_final = _dt_chi2(gt, dt_tree, real_weights)
    meta = {"training": "adversarial", "rounds": rounds, "seed": seed, "loss": loss.name, "prior": prior}
    gt.metadata.update(meta, generator_splits=len(trace))
    dt = builder.decision_tree(meta)
    return AdversarialResult(dt, gt, trace, chi2_initial, chi2_final)


def write_trace(trace, path, fields=TRACE_FIELDS) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(trace)
