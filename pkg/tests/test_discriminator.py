import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gentrees.data import Dataset
from gentrees.discriminator import (
    AnalyticFake,
    DiscriminatorBuilder,
    SampledFake,
    induce,
    leaf_posterior,
    real_leaf_weights,
)
from gentrees.generate import sample
from gentrees.losses import statistical_information
from gentrees.trees import GenerativeTree, PartitionStats, Tree, generator_mass_in_box, route_matrix
from helpers import random_gt, random_schema, uniform_points


def _real(rng, schema, n=300, missing=0.05):
    X = uniform_points(rng, schema, n)
    # skew the first feature so the real data differs from the uniform
    lo, hi = schema.lower[0], schema.upper[0]
    skewed = lo + (hi - lo) * rng.random(n) ** 3
    X[:, 0] = skewed if schema[0].kind == "real" else np.floor(skewed)
    X[rng.random(X.shape) < missing] = np.nan
    return Dataset(schema, X)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["log", "square", "matusita"]))
def test_candidate_scores_are_information_gains(seed, loss):
    rng = np.random.default_rng(seed)
    schema = random_schema(rng)
    real = _real(rng, schema)
    gt = random_gt(rng, schema, int(rng.integers(0, 6)))
    builder = DiscriminatorBuilder(real, AnalyticFake(gt), loss, 0.4, max_candidates=16)
    before = builder.information()
    cands = builder.candidate_splits(0)
    for cand in cands[:: max(1, len(cands) // 8)]:
        # independent route: split a fresh tree and route the rows through it
        tree = Tree(schema)
        left, right = tree.split(0, cand.predicate)
        W = route_matrix(tree, real.values)
        p = W[[left, right]].sum(axis=1) / len(real)
        n = np.array([generator_mass_in_box(gt, tree.boxes[c]) for c in (left, right)])
        np.testing.assert_allclose(p, [cand.p_left, cand.p_right], atol=1e-12)
        np.testing.assert_allclose(n, [cand.n_left, cand.n_right], atol=1e-12)
        after = statistical_information(PartitionStats(0.4, p, n), loss)
        assert cand.score == pytest.approx(after - before, abs=1e-12)
        assert min(cand.p_left, cand.p_right) * len(real) >= 1.0 - 1e-9


def test_min_child_weight_is_respected(mixed):
    gt = GenerativeTree.uniform(mixed.schema)
    builder = DiscriminatorBuilder(mixed, AnalyticFake(gt), min_child_weight=50.0)
    cands = builder.candidate_splits(0)
    assert cands
    for cand in cands:
        assert min(cand.p_left, cand.p_right) * len(mixed) >= 50.0 - 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_analytic_fake_mass_is_exact(seed):
    rng = np.random.default_rng(seed)
    schema = random_schema(rng)
    gt = random_gt(rng, schema, int(rng.integers(0, 10)), degenerate=0.2)
    dt = induce(_real(rng, schema), gt, max_splits=8)
    for lf in dt.tree.leaves():
        assert dt.p_fake[lf] == pytest.approx(generator_mass_in_box(gt, dt.tree.boxes[lf]), abs=1e-12)
    assert dt.p_fake[0] == pytest.approx(1.0)


def test_sampled_fake_agrees_with_analytic_fake():
    rng = np.random.default_rng(3)
    schema = random_schema(rng, d=3)
    gt = random_gt(rng, schema, 8)
    real = _real(rng, schema, 500)
    n = 200_000
    exact = induce(real, AnalyticFake(gt), max_splits=6)
    fake = sample(gt, n, 11)
    # the sampled route sees the same tree, so only its fake masses differ
    builder = DiscriminatorBuilder(real, SampledFake(fake), tree=exact.tree)
    for lf in exact.tree.leaves():
        m = builder.fake_mass(lf)
        sd = np.sqrt(max(m * (1 - m), 1e-12) / n)
        assert abs(m - exact.p_fake[lf]) <= 4 * sd + 1e-12


def test_induction_is_deterministic_and_information_grows(mixed):
    gt = GenerativeTree.uniform(mixed.schema)
    a = induce(mixed, gt, "log", 0.3, max_splits=30, seed=1)
    b = induce(mixed, gt, "log", 0.3, max_splits=30, seed=1)
    assert a.tree.predicates == b.tree.predicates
    info = a.metadata["information_trace"]
    assert len(info) == a.metadata["splits"] + 1
    assert np.all(np.diff(info) > 0)
    assert info[0] == pytest.approx(0.0, abs=1e-12)


def test_induction_stops_when_nothing_is_left():
    rng = np.random.default_rng(0)
    schema = random_schema(rng, d=2)
    real = Dataset(schema, uniform_points(rng, schema, 4))
    dt = induce(real, GenerativeTree.uniform(schema), max_splits=100)
    assert dt.metadata["splits"] < 100
    with pytest.raises(ValueError):
        induce(real, GenerativeTree.uniform(schema), max_splits=-1)


def test_real_weights_and_posteriors(mixed):
    dt = induce(mixed, GenerativeTree.uniform(mixed.schema), "matusita", 0.6, max_splits=20)
    weights = real_leaf_weights(dt, mixed)
    assert sorted(weights) == dt.tree.leaves()
    assert sum(weights.values()) == pytest.approx(1.0)
    for lf, w in weights.items():
        assert w == pytest.approx(dt.p_real[lf], abs=1e-12)
        a, b = 0.6 * dt.p_real[lf], 0.4 * dt.p_fake[lf]
        assert leaf_posterior(dt, lf) == pytest.approx(a / (a + b))


def test_builder_rejects_bad_inputs(mixed):
    gt = GenerativeTree.uniform(mixed.schema)
    with pytest.raises(ValueError):
        DiscriminatorBuilder(mixed, AnalyticFake(gt), prior=1.0)
    with pytest.raises(ValueError):
        DiscriminatorBuilder(Dataset(mixed.schema, mixed.values[:0]), AnalyticFake(gt))
