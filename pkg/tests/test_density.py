from collections import Counter

import numpy as np
import pytest
from scipy.stats import chi2_contingency, chisquare

from sortgp.density import (
    DensityBudgetExceeded,
    LengthDistribution,
    estimate_conditional_density,
    estimate_density,
    sample_conditioned,
    sample_conditioned_batch,
    wilson_interval,
    working_length_distribution,
)
from sortgp.evolution import EvolutionConfig
from sortgp.fitness import make_eval_set, score_population
from sortgp.program import (
    CompareSwap,
    IfElse,
    ReverseCompareSwap,
    canonical_sorter,
    direction_sorter,
    random_population,
)


def coin(p, seed):
    gen = np.random.default_rng(seed)

    def predicate(_program):
        return gen.random() < p
    return predicate


class TestLengthDistribution:
    def test_from_counts_normalizes(self):
        d = LengthDistribution.from_counts(Counter([3, 3, 5, 9, 9, 9, 12]))
        assert abs(sum(d.weights) - 1.0) < 1e-12
        assert d.support == (3, 5, 9, 12)

    def test_point_mass(self):
        d = LengthDistribution.of_programs([canonical_sorter(2)] * 30)
        assert d == LengthDistribution.point_mass(3)

    def test_blend(self):
        d = LengthDistribution.point_mass(3).blend(LengthDistribution.point_mass(5))
        assert d.to_dict() == {"3": 0.5, "5": 0.5}

    @pytest.mark.parametrize("support, weights", [
        ((), ()), ((0,), (1.0,)), ((64,), (1.0,)), ((3, 4), (0.7, 0.7)), ((3,), (-1.0,)),
    ])
    def test_rejects(self, support, weights):
        with pytest.raises(ValueError):
            LengthDistribution(support, weights)


class TestConditionedSampling:
    def test_point_mass_one_is_leaf(self, rng):
        # a childless If is a one-node tree too
        roots = Counter()
        for p in sample_conditioned_batch(LengthDistribution.point_mass(1), 2, 2000, rng):
            assert p.node_count == 1 and p.depth == 1
            roots[type(p.root)] += 1
        assert roots[CompareSwap] > 0 and roots[ReverseCompareSwap] > 0
        assert set(roots) <= {CompareSwap, ReverseCompareSwap, IfElse}

    def test_length_histogram_matches(self, rng):
        d = LengthDistribution((1, 3, 7, 15), (0.1, 0.4, 0.3, 0.2))
        lengths = [p.node_count for p in sample_conditioned_batch(d, 3, 100_000, rng)]
        counts = Counter(lengths)
        assert set(counts) == set(d.support)
        observed = [counts[k] for k in d.support]
        assert chisquare(observed, np.array(d.weights) * 100_000).pvalue > 1e-3

    def test_deterministic(self):
        d = LengthDistribution((3, 6), (0.5, 0.5))
        a = sample_conditioned_batch(d, 2, 50, np.random.default_rng(8))
        b = sample_conditioned_batch(d, 2, 50, np.random.default_rng(8))
        assert a == b
        assert sample_conditioned(d, 2, np.random.default_rng(8)) == a[0]

    def test_unreachable_length_is_redrawn(self, rng):
        # 63 nodes needs a full binary tree of If nodes; it essentially never occurs
        d = LengthDistribution((2, 63), (0.5, 0.5))
        lengths = {p.node_count for p in sample_conditioned_batch(d, 2, 200, rng)}
        assert lengths == {2}

    def test_shapes_match_restricted_generator(self, rng):
        # among programs of 3 nodes, op sequences follow the unconditioned law
        d = LengthDistribution.point_mass(3)
        cond = Counter(tuple(p.code[:, 0]) for p in sample_conditioned_batch(d, 2, 40_000, rng))
        pop = random_population(400_000, 2, rng)
        free = Counter(tuple(p.code[:, 0]) for p in pop if p.node_count == 3)
        shapes = sorted(set(cond) | set(free))
        table = np.array([[cond[s] for s in shapes], [free[s] for s in shapes]])
        assert chi2_contingency(table).pvalue > 1e-3


class TestEstimators:
    def test_accept_all(self, rng):
        d = LengthDistribution.point_mass(3)
        est = estimate_density(lambda p: True, d, 2, min_hits=50, rng=rng, batch_size=50)
        assert (est.hits, est.samples, est.density) == (50, 50, 1.0)

    def test_bernoulli_oracle(self, rng):
        d = LengthDistribution.point_mass(2)
        est = estimate_density(coin(0.01, 1), d, 2, min_hits=100, rng=rng, batch_size=1000)
        lo, hi = est.confidence_interval
        assert lo <= 0.01 <= hi
        assert est.hits >= 100

    def test_wilson_matches_closed_form(self):
        k, n, z = 30, 1000, 1.959963984540054
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        lo, hi = wilson_interval(k, n)
        assert abs(lo - (centre - half)) < 1e-9 and abs(hi - (centre + half)) < 1e-9

    def test_nested_bernoulli(self, rng):
        # inner coin only consulted when the outer one fires
        outer, inner = coin(0.5, 2), coin(0.5, 3)
        firsts = seconds = 0
        d = LengthDistribution.point_mass(2)
        for p in sample_conditioned_batch(d, 2, 4000, rng):
            if outer(p):
                firsts += 1
                seconds += inner(p)
        lo, hi = wilson_interval(seconds, firsts)
        assert lo <= 0.5 <= hi

    def test_budget_abort_carries_counts(self, rng):
        d = LengthDistribution.point_mass(3)
        with pytest.raises(DensityBudgetExceeded) as info:
            estimate_density(lambda p: False, d, 2, min_hits=1, rng=rng, batch_size=100,
                             max_samples=300)
        assert info.value.estimate.samples == 300
        assert info.value.estimate.hits == 0

    def test_budget_abort_compiled(self, rng):
        d = LengthDistribution.point_mass(1)
        with pytest.raises(DensityBudgetExceeded):
            estimate_density("f1", d, 2, rng=rng, batch_size=1000, max_samples=1000)

    def test_argument_checks(self, rng):
        d = LengthDistribution.point_mass(3)
        with pytest.raises(ValueError):
            estimate_density("f1", d, 2, min_hits=0, rng=rng)
        with pytest.raises(ValueError):
            estimate_density("f9", d, 2, rng=rng)
        with pytest.raises(ValueError):
            estimate_conditional_density(d, 2, min_hits=0, rng=rng)

    def test_compiled_f1_density_is_deterministic(self):
        d = LengthDistribution.point_mass(3)
        a = estimate_density("f1", d, 2, min_hits=3, rng=np.random.default_rng(4))
        b = estimate_density("f1", d, 2, min_hits=3, rng=np.random.default_rng(4))
        assert a == b and a.hits >= 3
        assert a.ci_low < a.density < a.ci_high

    def test_compiled_hits_are_working(self, rng):
        # the f1 kernel agrees with scoring the same program directly
        d = LengthDistribution.point_mass(3)
        pop = sample_conditioned_batch(d, 2, 200_000, rng)
        es = make_eval_set(rng)
        f1 = score_population(pop, es, 2, "f1")
        f2 = score_population(pop, es, 2, "f2")
        assert np.all(f1[f2 == 1.0] == 1.0)
        assert (f1 == 1.0).sum() > 0

    def test_containment_on_known_programs(self, rng):
        es = make_eval_set(rng)
        progs = [direction_sorter(2), canonical_sorter(2), canonical_sorter(2, reverse=True)]
        f1 = score_population(progs, es, 2, "f1")
        f2 = score_population(progs, es, 2, "f2")
        assert list(f1) == [1.0, 1.0, -1.0]
        assert list(f2 == 1.0) == [True, False, False]


def test_working_length_distribution_small(rng):
    cfg = EvolutionConfig(v=2, population_size=500, max_generations=5000, seed=2)
    d = working_length_distribution(cfg, 30, rng, batch_size=20_000, max_samples=10**7)
    assert abs(sum(d.weights) - 1.0) < 1e-12
    # well below the 63-node ceiling of a depth-6 tree
    assert d.mean() < 63 / 4
    assert min(d.support) >= 3


def test_working_length_distribution_needs_thirty():
    with pytest.raises(ValueError):
        working_length_distribution(EvolutionConfig(v=2), 10)


def test_kernel_direction_check():
    # the per-sample test used inside the density loop
    from sortgp import _kernels as K
    perm = np.random.default_rng(0).permutation(np.arange(1, 31)).astype(np.int64)
    buf, variables = np.zeros(30, np.int64), np.zeros(5, np.int64)
    both, asc = direction_sorter(2).code, canonical_sorter(2).code
    assert K._sorted_as(both, 0, perm, buf, variables, 2, 0)
    assert K._sorted_as(both, 0, perm, buf, variables, 2, 1)
    assert K._sorted_as(asc, 0, perm, buf, variables, 2, 0)
    assert not K._sorted_as(asc, 0, perm, buf, variables, 2, 1)
