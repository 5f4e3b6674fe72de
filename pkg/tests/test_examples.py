"""Small worked examples, one per documented behavior, computed by hand."""

import json
import math

import numpy as np
import pytest
from scipy import stats

from gentrees.adversarial import (
    SplitQuantities,
    adversarial_train,
    bernoulli_p,
    chi2_after_split,
    split_quantities,
)
from gentrees.copycat import copycat_train, mirror_split, wha_margin
from gentrees.data import (
    Dataset,
    FeatureSpec,
    IntRange,
    Interval,
    Schema,
    SchemaError,
    feature_measure,
    infer_schema,
    load_dataset,
)
from gentrees.discriminator import AnalyticFake, DiscriminatorBuilder, induce, leaf_posterior, real_leaf_weights
from gentrees.evaluation import density_grid, empirical_chi2, impute_benchmark, simulate_domain, w2_squared
from gentrees.generate import impute, impute_dataset
from gentrees.losses import (
    bregman_partial_identity,
    chi_square,
    discriminator_risk,
    f_pi,
    get_loss,
    statistical_information,
)
from gentrees.serialize import ModelFormatError, dumps, loads, to_document
from gentrees.trees import (
    DecisionTree,
    GenerativeTree,
    PartitionStats,
    Predicate,
    SupportBox,
    Tree,
    box_intersect,
    box_volume,
    generator_mass_in_box,
    leaf_of,
    leaf_weight,
    route_weights,
)

# ---------------------------------------------------------------- data


def test_column_typing(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("r,c,k\n1.5,a,3\n2.0,b,7\n1.75,a,?\n")
    r, c, k = infer_schema(path)
    assert (r.kind, r.lo, r.hi) == ("real", 1.5, 2.0)
    assert (c.kind, c.modalities) == ("nominal", ("a", "b"))
    assert (k.kind, k.lo, k.hi) == ("integer", 3.0, 7.0)


def test_row_parsing(tmp_path):
    schema = Schema((FeatureSpec.real("len", 0.0, 10.0), FeatureSpec.nominal("kind", ["setosa", "versicolor"])))
    path = tmp_path / "d.csv"
    path.write_text("len,kind\n5.1,setosa\n?,setosa\n")
    ds = load_dataset(path, schema)
    assert ds.values[0].tolist() == [5.1, 0.0]
    assert math.isnan(ds.values[1, 0]) and ds.values[1, 1] == 0.0
    path.write_text("len,kind\n5.1,rosa\n")
    with pytest.raises(SchemaError):
        load_dataset(path, schema)


def test_feature_measures():
    assert feature_measure(FeatureSpec.real("x", 0, 10), Interval(2, 7)) == pytest.approx(0.5)
    assert feature_measure(FeatureSpec.nominal("c", "abcd"), {"a"}) == pytest.approx(0.25)
    assert feature_measure(FeatureSpec.integer("k", 0, 9), IntRange(3, 5)) == pytest.approx(0.3)


# ---------------------------------------------------------------- trees


@pytest.fixture
def unit():
    return Schema((FeatureSpec.real("x", 0.0, 1.0), FeatureSpec.nominal("y", "abcd")))


def test_leaf_routing(unit):
    tree = Tree(unit)
    assert leaf_of(tree, [0.3, 1]) == 0
    tree.split(0, Predicate(0, threshold=0.5))
    assert leaf_of(tree, [0.7, 1]) == 2
    # the threshold itself belongs to the right set
    assert leaf_of(tree, [0.5, 1]) == 2
    assert route_weights(tree, [0.7, 1]) == {2: 1.0}


def test_missing_nominal_routing(unit):
    tree = Tree(unit)
    tree.split(0, Predicate(1, right_set={3}))
    assert route_weights(tree, [0.2, math.nan]) == pytest.approx({1: 0.75, 2: 0.25})
    # a second split on the same missing feature multiplies the shares
    tree.split(1, Predicate(1, right_set={0}))
    w = route_weights(tree, [0.2, math.nan])
    assert w == pytest.approx({3: 0.5, 4: 0.25, 2: 0.25})
    assert sum(w.values()) == pytest.approx(1.0)


def test_support_boxes(unit):
    tree = Tree(unit)
    assert tree.boxes[0] == SupportBox.full(unit)
    tree.split(0, Predicate(0, threshold=0.3))
    _, right = tree.split(1, Predicate(1, right_set={0}))
    box = tree.boxes[right]
    assert (box.lo[0], box.hi[0]) == (0.0, 0.3)
    assert box.constraint(1, unit) == frozenset({"a"})
    left, right = tree.boxes[1], tree.boxes[2]
    assert box_intersect(left, right, unit) is None
    assert box_volume(left, unit) + box_volume(right, unit) == pytest.approx(1.0)


def test_box_volumes_and_intersections():
    schema = Schema((FeatureSpec.real("x", 0.0, 1.0), FeatureSpec.real("z", 0.0, 1.0), FeatureSpec.nominal("c", "abc")))
    full = SupportBox.full(schema)
    assert box_volume(full, schema) == 1.0
    half = SupportBox.full(schema)
    half.hi[0] = half.hi[1] = 0.5
    assert box_volume(half, schema) == pytest.approx(0.25)
    empty = SupportBox.full(schema)
    empty.mask[2] = False
    assert box_volume(empty, schema) == 0.0
    assert box_intersect(half, half, schema) == half
    a, b = SupportBox.full(schema), SupportBox.full(schema)
    a.hi[0], b.lo[0] = 0.5, 0.3
    ab = box_intersect(a, b, schema)
    assert (ab.lo[0], ab.hi[0]) == (0.3, 0.5)
    a.mask[2] = [True, True, False]
    b.mask[2] = [False, False, True]
    assert box_intersect(a, b, schema) is None


def test_leaf_weights(unit):
    gt = GenerativeTree.uniform(unit)
    assert leaf_weight(gt, 0) == 1.0
    gt.split(0, Predicate(0, threshold=0.5), 0.1)
    gt.split(2, Predicate(0, threshold=0.75), 0.5)
    assert leaf_weight(gt, 4) == pytest.approx(0.05)
    assert sum(leaf_weight(gt, lf) for lf in gt.tree.leaves()) == pytest.approx(1.0)


def test_generator_mass(unit):
    gt = GenerativeTree.uniform(unit)
    assert generator_mass_in_box(gt, SupportBox.full(unit)) == 1.0
    box = SupportBox.full(unit)
    box.hi[0] = 0.3
    assert generator_mass_in_box(gt, box) == pytest.approx(0.3)


def test_model_documents(unit):
    gt = GenerativeTree.uniform(unit)
    doc = to_document(gt)
    assert len(doc["nodes"]) == 1 and "children" not in doc["nodes"][0]
    assert dumps(loads(dumps(gt))) == dumps(gt)
    gt.split(0, Predicate(0, threshold=0.5), 0.4)
    doc = to_document(gt)
    doc["nodes"][0]["children"] = [1, 9]
    with pytest.raises(ModelFormatError):
        loads(json.dumps(doc))


# ---------------------------------------------------------------- losses


def test_bayes_risks():
    assert get_loss("matusita").bayes_risk(0.5) == pytest.approx(1.0)
    for name in ("log", "square", "matusita"):
        assert get_loss(name).bayes_risk(0.0) == 0.0
    log = get_loss("log")
    u = 0.25
    by_partials = u * -math.log2(u) + (1 - u) * -math.log2(1 - u)
    assert log.bayes_risk(u) == pytest.approx(by_partials)


def test_information_extremes():
    assert statistical_information(PartitionStats(0.5, [1.0], [1.0]), "log") == pytest.approx(0.0)
    separated = PartitionStats(0.5, [1.0, 0.0], [0.0, 1.0])
    for name in ("log", "square", "matusita"):
        assert statistical_information(separated, name) == pytest.approx(get_loss(name).bayes_risk(0.5))
    assert discriminator_risk(separated, "matusita") == pytest.approx(-1.0)


def test_f_pi_near_zero():
    assert f_pi("matusita", 0.5, 1.0) == pytest.approx(0.0)
    assert f_pi("matusita", 0.5, 1e-14) == pytest.approx(1.0, abs=1e-6)


def test_chi_square_by_hand():
    assert chi_square([0.75, 0.25], [0.25, 0.75]) == pytest.approx(4 / 3)
    rng = np.random.default_rng(0)
    p, n = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    assert chi_square(p, n) == pytest.approx(np.sum((n - p) ** 2 / p))


def test_partial_losses_as_bregman_divergences():
    assert bregman_partial_identity("matusita", 0.5) == pytest.approx((1.0, 1.0))
    neg, pos = bregman_partial_identity("square", 0.0)
    assert (neg, pos) == pytest.approx((0.0, get_loss("square").partial_pos(0.0)))


# ---------------------------------------------------------------- discriminator


def test_first_split_finds_the_support_edge():
    schema = Schema((FeatureSpec.real("x", 0.0, 2.0),))
    real = Dataset(schema, np.random.default_rng(0).uniform(0.0, 1.0, (400, 1)))
    dt = induce(real, GenerativeTree.uniform(schema), max_splits=1)
    assert 0.9 < dt.tree.predicates[0].threshold < 1.1
    root = induce(real, GenerativeTree.uniform(schema), "log", 0.3, max_splits=0)
    assert len(root.tree) == 1 and root.leaf_posterior(0) == pytest.approx(0.3)


def test_candidate_lists():
    schema = Schema((FeatureSpec.real("x", 1.0, 3.0), FeatureSpec.nominal("c", "abcd")))
    fake = lambda: AnalyticFake(GenerativeTree.uniform(schema))
    real = Dataset.from_rows(schema, [["1", "a"], ["2", "b"], ["3", "c"]])
    cands = DiscriminatorBuilder(real, fake()).candidate_splits(0)
    assert [c.predicate.threshold for c in cands if c.predicate.feature == 0] == [1.5, 2.5]
    assert [c.predicate.right_set for c in cands if c.predicate.feature == 1] == [{0}, {1}, {2}]
    single = Dataset.from_rows(schema, [["2", "b"], ["2", "b"]])
    assert DiscriminatorBuilder(single, fake()).candidate_splits(0) == []


def test_posteriors(unit):
    dt = DecisionTree(Tree(unit), 0.5, np.array([0.3]), np.array([0.3]))
    assert leaf_posterior(dt, 0) == 0.5
    dt = DecisionTree(Tree(unit), 0.5, np.array([0.3]), np.array([0.1]))
    assert leaf_posterior(dt, 0) == pytest.approx(0.75)
    dt = DecisionTree(Tree(unit), 0.2, np.array([0.0]), np.array([0.0]))
    assert leaf_posterior(dt, 0) == 0.2


def test_real_leaf_weights_by_hand(unit):
    tree = Tree(unit)
    tree.split(0, Predicate(0, threshold=0.5))
    tree.split(2, Predicate(1, right_set={0}))
    dt = DecisionTree(tree, 0.5, np.zeros(5), np.zeros(5))
    real = Dataset(unit, np.array([[0.2, 1.0], [0.9, 0.0], [math.nan, math.nan]]))
    w = real_leaf_weights(dt, real)
    # the all-missing row spreads 1/2, 1/2 * 3/4 and 1/2 * 1/4
    assert w == pytest.approx({1: (1 + 0.5) / 3, 3: 0.375 / 3, 4: (1 + 0.125) / 3})


# ---------------------------------------------------------------- copycat


def test_mirrored_probabilities(unit):
    gt = GenerativeTree.uniform(unit)
    mirror_split(gt, 0, Predicate(0, threshold=0.5), 10.0, 40.0)
    assert gt.p_right[0] == pytest.approx(0.8)
    for (ml, mr), p in (((5, 5), 0.5), ((1, 3), 0.75)):
        g = GenerativeTree.uniform(unit)
        mirror_split(g, 0, Predicate(0, threshold=0.5), ml, mr)
        assert g.p_right[0] == pytest.approx(p)
        w = g.leaf_weights()[1]
        assert w.sum() == pytest.approx(1.0)


def test_margins():
    assert wha_margin(0.5, 0.5, 0.5) == 0.0
    assert wha_margin(0.0, 1.0, 0.5) == pytest.approx(0.25)


def test_zero_split_copycat(mixed):
    res = copycat_train(mixed, max_splits=0)
    assert len(res.gt.tree) == 1


# ---------------------------------------------------------------- adversarial


def test_quantities_of_the_uniform_generator(unit):
    gt = GenerativeTree.uniform(unit)
    q = split_quantities(gt, 0, Predicate(0, threshold=0.75), Tree(unit), [1.0])
    assert q.tau == pytest.approx(0.25)
    np.testing.assert_allclose([q.n0[0], q.nl[0], q.nr[0]], [0.0, 0.75, 0.25])
    assert q.mu_DD == pytest.approx(0.0)


def test_bernoulli_cases():
    # mirror-image cells make mu_LL equal mu_RR
    sym = SplitQuantities([0.5, 0.5], [0.0, 0.0], [0.3, 0.2], [0.2, 0.3], 0.5)
    assert sym.mu_LL == pytest.approx(sym.mu_RR)
    assert bernoulli_p(sym) == pytest.approx(0.5)
    q = SplitQuantities([0.8, 0.2], [0.0, 0.0], [0.39, 0.11], [0.1, 0.4], 0.5)
    assert q.mu_LL < q.mu_LR
    assert bernoulli_p(q) == 0.0


def test_chi_square_along_the_bernoulli():
    q = SplitQuantities([0.6, 0.4], [0.1, 0.2], [0.3, 0.1], [0.1, 0.2], 0.4)
    assert chi2_after_split(q, q.tau) == pytest.approx(chi_square(q.p, q.n0 + q.nl + q.nr))
    assert chi2_after_split(q, 0.0) == pytest.approx(-1 + q.mu_LL)
    assert chi2_after_split(q, 1.0) == pytest.approx(-1 + q.mu_RR)
    assert q.mu_DD == pytest.approx(q.mu_LL + q.mu_RR - 2 * q.mu_LR, abs=1e-12)
    # the two endpoint chi-squares are those of the two collapsed generators
    collapsed_left = q.n0 + q.nl / (1 - q.tau)
    assert chi_square(q.p, collapsed_left) == pytest.approx(-1 + q.mu_LL)


def test_zero_round_training(mixed):
    res = adversarial_train(mixed, rounds=0)
    assert len(res.gt.tree) == 1 and res.trace == []


# ---------------------------------------------------------------- generation and imputation


def test_imputation_examples(unit):
    gt = GenerativeTree.uniform(unit)
    gt.split(0, Predicate(0, threshold=0.5), 0.1)
    row, leaf = impute(gt, [0.7, 2.0], np.random.default_rng(0))
    assert row.tolist() == [0.7, 2.0] and leaf == 2
    row, leaf = impute(gt, [math.nan, 2.0], np.random.default_rng(0))
    # densities 1.8 on the left half and 0.2 on the right
    assert leaf == 1 and 0.0 <= row[0] < 0.5
    single = GenerativeTree.uniform(unit)
    xs = [impute(single, [math.nan, 0.0], np.random.default_rng(s))[0][0] for s in range(200)]
    assert min(xs) >= 0.0 and max(xs) < 1.0
    complete = Dataset(unit, np.array([[0.1, 0.0], [0.9, 3.0]]))
    np.testing.assert_array_equal(impute_dataset(gt, complete, 5).values, complete.values)


# ---------------------------------------------------------------- evaluation


def test_domain_layouts():
    grid = simulate_domain("gridGauss", 0)
    assert np.bincount(grid.labels).tolist() == [100] * 25
    ring = simulate_domain("ringGauss", 0)
    angles = np.sort(np.mod(np.arctan2(ring.centers[:, 1], ring.centers[:, 0]), 2 * np.pi))
    np.testing.assert_allclose(np.diff(angles), 2 * np.pi / 8)
    np.testing.assert_allclose(np.linalg.norm(ring.centers, axis=1), np.linalg.norm(ring.centers[0]))
    a, b = simulate_domain("randGauss", 0), simulate_domain("randGauss", 1)
    assert not np.array_equal(np.bincount(a.labels), np.bincount(b.labels))


@pytest.mark.parametrize("domain", ["ringGauss", "gridGauss", "circGauss", "randGauss"])
def test_component_means(domain):
    sim = simulate_domain(domain, 7)
    z = []
    for k in np.unique(sim.labels):
        pts = sim.points[sim.labels == k]
        sd = pts.std(axis=0, ddof=1) / math.sqrt(len(pts))
        z.extend((pts.mean(axis=0) - sim.centers[k]) / sd)
    # one pooled test per domain at the two-sided 3 sigma level
    assert np.sum(np.square(z)) <= stats.chi2.isf(2 * stats.norm.sf(3.0), len(z))


def test_empirical_chi2_by_hand():
    schema = Schema((FeatureSpec.real("x", 0.0, 1.0),))
    tree = Tree(schema)
    tree.split(0, Predicate(0, threshold=0.5))
    dt = DecisionTree(tree, 0.5, np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.5, 0.5]))
    real = Dataset(schema, np.array([[0.1], [0.2], [0.3], [0.9]]))
    fake = Dataset(schema, np.array([[0.1], [0.6], [0.7], [0.8]]))
    eps = 1 / 8
    p = np.array([3 / 4 + eps, 1 / 4 + eps]) / (1 + 2 * eps)
    n = np.array([1 / 4 + eps, 3 / 4 + eps]) / (1 + 2 * eps)
    assert empirical_chi2(dt, real, fake) == pytest.approx(-1 + np.sum(n**2 / p))
    shuffled = Dataset(schema, fake.values[::-1])
    assert empirical_chi2(dt, real, shuffled) == empirical_chi2(dt, real, fake)


def test_w2_by_hand():
    schema = Schema((FeatureSpec.real("x", 0.0, 1.0),))
    a = Dataset(schema, np.array([[0.0], [1.0]]))
    b = Dataset(schema, np.array([[1.0], [0.0]]))
    assert w2_squared(a, b) == 0.0


def test_density_grid_examples(unit):
    schema = Schema((FeatureSpec.real("x", 0.0, 1.0), FeatureSpec.real("y", 0.0, 1.0)))
    gt = GenerativeTree.uniform(schema)
    grid, _, _ = density_grid(gt, 0, 1, 4)
    np.testing.assert_allclose(grid, 1 / 16)
    gt.split(0, Predicate(0, threshold=0.5), 0.8)
    grid, _, _ = density_grid(gt, 0, 1, (2, 1))
    np.testing.assert_allclose(grid, [[0.2, 0.8]])


def test_density_grid_agrees_with_box_mass():
    rng = np.random.default_rng(4)
    schema = Schema((FeatureSpec.real("x", 0.0, 2.0), FeatureSpec.real("y", -1.0, 1.0), FeatureSpec.nominal("c", "ab")))
    gt = GenerativeTree.uniform(schema)
    for _ in range(25):
        leaves = gt.tree.leaves()
        lf = leaves[int(rng.integers(len(leaves)))]
        box = gt.tree.boxes[lf]
        j = int(rng.integers(3))
        if j == 2:
            if box.mask[2].sum() < 2:
                continue
            gt.split(lf, Predicate(2, right_set={1}), float(rng.uniform()))
        else:
            t = float(rng.uniform(box.lo[j], box.hi[j]))
            gt.split(lf, Predicate(j, threshold=t), float(rng.uniform()))
    grid, xe, ye = density_grid(gt, 0, 1, 10)
    for r0, r1, c0, c1 in ((0, 3, 2, 7), (5, 10, 0, 10), (4, 5, 4, 5)):
        box = SupportBox.full(schema)
        box.lo[0], box.hi[0] = xe[c0], xe[c1]
        box.lo[1], box.hi[1] = ye[r0], ye[r1]
        assert grid[r0:r1, c0:c1].sum() == pytest.approx(generator_mass_in_box(gt, box), abs=1e-9)


def test_no_missingness_costs_nothing(mixed):
    complete = mixed.take(np.flatnonzero(~mixed.missing.any(axis=1))[:80])
    report = impute_benchmark(complete, (0.0,), folds=2, trainer_config={"splits": 10}, seed=0)
    assert [r["w2_mean"] for r in report] == [0.0, 0.0]
