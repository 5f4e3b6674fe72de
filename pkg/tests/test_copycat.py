import csv

import numpy as np
import pytest

from gentrees.copycat import (
    TRACE_FIELDS,
    ancestors_at,
    copycat_train,
    likelihood_ratio_trace,
    mirror_split,
    wha_margin,
    write_trace,
)
from gentrees.data import FeatureSpec, Schema
from gentrees.serialize import dumps
from gentrees.trees import GenerativeTree, Predicate


@pytest.fixture(scope="module")
def result(mixed):
    return copycat_train(mixed, "log", 0.5, max_splits=60, seed=4)


def test_generator_matches_real_leaf_masses(result):
    leaves = result.dt.tree.leaves()
    np.testing.assert_allclose(result.gt.node_weights()[leaves], result.dt.p_real[leaves], atol=1e-12)
    # the discriminator can no longer tell the two apart
    for lf in leaves:
        assert result.dt.leaf_posterior(lf) == pytest.approx(0.5)
    assert max(r["parity_gap"] for r in result.trace) <= 1e-9


def test_both_trees_share_the_partition(result):
    assert result.gt.tree.predicates == result.dt.tree.predicates
    assert result.gt.tree.parent == result.dt.tree.parent


def test_trace_and_metadata(result, tmp_path):
    info = [r["information"] for r in result.trace]
    assert np.all(np.diff(info) >= -1e-12)
    assert len(result.trace) == 60
    assert result.gt.metadata["splits"] == 60
    assert result.gt.metadata["training"] == "copycat"
    assert np.isfinite(result.gt.metadata["split_budget_log10"])
    path = tmp_path / "trace.csv"
    write_trace(result.trace, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == TRACE_FIELDS
    assert len(rows) == 60


def test_mirror_split_probability():
    schema = Schema((FeatureSpec.real("x", 0.0, 1.0),))
    gt = GenerativeTree.uniform(schema)
    mirror_split(gt, 0, Predicate(0, threshold=0.5), 30.0, 10.0)
    assert gt.p_right[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        mirror_split(gt, 1, Predicate(0, threshold=0.25), 0.0, 5.0)


def test_wha_margin():
    # 80% of the real mass goes right where only half the volume lies
    assert wha_margin(0.2, 0.8, 0.5) == pytest.approx(0.15)
    assert wha_margin(0.5, 0.5, 0.5) == 0.0


def test_ancestors_at(result):
    tree = result.dt.tree
    leaves = tree.leaves()
    assert np.all(ancestors_at(tree, 0) == 0)
    np.testing.assert_array_equal(ancestors_at(tree, len(result.trace)), leaves)
    for t in (1, 7, 30):
        anc = ancestors_at(tree, t)
        alive = {0} | {c for s in range(t) for c in (2 * s + 1, 2 * s + 2)}
        live_leaves = {n for n in alive if tree.is_leaf(n) or tree.left[n] >= 2 * t + 1}
        assert set(anc) == live_leaves
        for lf, a in zip(leaves, anc):
            node = lf
            while node != a:
                node = tree.parent[node]
                assert node >= 0


def test_likelihood_ratio_trace(result):
    div, breg = likelihood_ratio_trace(result, "log")
    assert len(div) == len(result.trace) + 1
    np.testing.assert_allclose(div, breg, atol=1e-9)
    assert div[-1] == pytest.approx(0.0, abs=1e-12)
    # refining the generator never increases the risk
    assert np.all(np.diff(div) <= 1e-12)


def test_zero_and_negative_budgets(mixed):
    res = copycat_train(mixed, max_splits=0)
    assert res.trace == [] and len(res.gt.tree) == 1
    with pytest.raises(ValueError):
        copycat_train(mixed, max_splits=-1)


def test_training_is_deterministic(mixed):
    a = copycat_train(mixed, max_splits=25, seed=1)
    b = copycat_train(mixed, max_splits=25, seed=1)
    assert dumps(a.gt) == dumps(b.gt)
    assert dumps(a.dt) == dumps(b.dt)
