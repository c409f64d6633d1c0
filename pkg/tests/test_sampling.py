import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensembleflow.core import (
    ContinuousDomain,
    DiscreteDomain,
    ModelSpec,
    ParameterSpec,
    ScopeDescriptor,
    VariableSpec,
)
from ensembleflow.errors import EmptySample
from ensembleflow.sampling import (
    GroupKey,
    ParameterVector,
    SamplingPolicy,
    sample_instances,
)


def make_model(params):
    return ModelSpec(
        id="m",
        function_ref="f",
        params=tuple(params),
        outputs=(VariableSpec("y"),),
        output_scope=ScopeDescriptor(1),
    )


DISCRETE_AB = make_model([ParameterSpec("mode", DiscreteDomain(("a", "b")))])
UNIT = make_model([ParameterSpec("u", ContinuousDomain(0.0, 1.0))])
GROUPS = [GroupKey(digest=f"g{i}") for i in range(5)]


class TestPolicyInvariants:
    def test_budget_positive(self):
        with pytest.raises(ValueError):
            SamplingPolicy(budget=0)

    def test_quantile_range(self):
        with pytest.raises(ValueError):
            SamplingPolicy(drop_quantile=1.0)
        SamplingPolicy(drop_quantile=0.99)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            SamplingPolicy(strategy="sobol")


class TestParameterVector:
    def test_validate_against_model(self):
        v = ParameterVector.from_dict({"mode": "a"})
        v.validate(DISCRETE_AB)
        with pytest.raises(ValueError):
            ParameterVector.from_dict({"mode": "z"}).validate(DISCRETE_AB)
        with pytest.raises(ValueError):
            ParameterVector.from_dict({"other": 1}).validate(DISCRETE_AB)


class TestSampleInstances:
    def test_grid_enumerates_discrete_domain(self):
        policy = SamplingPolicy(strategy="grid", budget=2, branch_limit=2, seed=1)
        got = sample_instances(DISCRETE_AB, 0, GROUPS[:1], policy)
        assert [(v.as_dict()["mode"], g) for v, g in got] == [("a", 0), ("b", 0)]

    def test_budget_dominates_groups(self):
        policy = SamplingPolicy(strategy="grid", budget=1, branch_limit=1, seed=1)
        got = sample_instances(DISCRETE_AB, 0, GROUPS, policy)
        assert len(got) == 1
        assert got[0][1] == 0

    def test_uniform_random_deterministic(self):
        policy = SamplingPolicy(strategy="uniform-random", budget=4, branch_limit=4, seed=99)
        a = sample_instances(UNIT, 3, GROUPS[:1], policy)
        b = sample_instances(UNIT, 3, GROUPS[:1], policy)
        assert a == b
        other_step = sample_instances(UNIT, 4, GROUPS[:1], policy)
        assert a != other_step

    def test_draws_independent_of_group_order(self):
        policy = SamplingPolicy(strategy="uniform-random", budget=4, branch_limit=2, seed=5)
        fwd = sample_instances(UNIT, 0, GROUPS[:2], policy)
        rev = sample_instances(UNIT, 0, list(reversed(GROUPS[:2])), policy)
        by_digest_fwd = {GROUPS[g].digest: v for v, g in fwd}
        by_digest_rev = {list(reversed(GROUPS[:2]))[g].digest: v for v, g in rev}
        assert by_digest_fwd == by_digest_rev

    def test_values_stay_in_domain(self):
        policy = SamplingPolicy(strategy="latin-hypercube", budget=8, branch_limit=8, seed=2)
        for v, _ in sample_instances(UNIT, 0, GROUPS[:1], policy):
            v.validate(UNIT)

    def test_latin_hypercube_stratifies(self):
        n = 10
        policy = SamplingPolicy(strategy="latin-hypercube", budget=n, branch_limit=n, seed=7)
        got = sample_instances(UNIT, 0, GROUPS[:1], policy)
        strata = sorted(int(v.as_dict()["u"] * n) for v, _ in got)
        assert strata == list(range(n))

    def test_branch_limit_per_group(self):
        policy = SamplingPolicy(strategy="uniform-random", budget=10, branch_limit=2, seed=3)
        got = sample_instances(UNIT, 0, GROUPS[:3], policy)
        per_group = {g: 0 for g in range(3)}
        for _, g in got:
            per_group[g] += 1
        assert all(n <= 2 for n in per_group.values())
        assert len(got) <= 10

    def test_no_groups_raises_empty_sample(self):
        policy = SamplingPolicy(budget=1)
        with pytest.raises(EmptySample):
            sample_instances(UNIT, 0, [], policy)

    def test_drop_rule_removes_bottom_quantile(self):
        policy = SamplingPolicy(
            strategy="grid", budget=4, branch_limit=1, drop_quantile=0.5, seed=1
        )
        groups = [GroupKey(digest=f"g{i}", drop_score=float(i)) for i in range(4)]
        got = sample_instances(DISCRETE_AB, 0, groups, policy)
        used = {g for _, g in got}
        assert used == {2, 3}  # bottom half (scores 0 and 1) dropped

    def test_drop_rule_never_removes_all_groups(self):
        policy = SamplingPolicy(
            strategy="grid", budget=1, branch_limit=1, drop_quantile=0.9, seed=1
        )
        got = sample_instances(DISCRETE_AB, 0, GROUPS[:1], policy)
        assert len(got) == 1

    def test_duplicate_vectors_deduped_within_group(self):
        no_params = make_model([])
        policy = SamplingPolicy(strategy="uniform-random", budget=3, branch_limit=3, seed=1)
        got = sample_instances(no_params, 0, GROUPS[:1], policy)
        assert len(got) == 1

    @settings(max_examples=60, deadline=None)
    @given(
        budget=st.integers(1, 8),
        branch_limit=st.integers(1, 4),
        n_groups=st.integers(1, 5),
        seed=st.integers(0, 2**32 - 1),
        strategy=st.sampled_from(SamplingPolicy.STRATEGIES),
    )
    def test_budget_invariant(self, budget, branch_limit, n_groups, seed, strategy):
        policy = SamplingPolicy(
            strategy=strategy, budget=budget, branch_limit=branch_limit, seed=seed
        )
        got = sample_instances(UNIT, 1, GROUPS[:n_groups], policy)
        assert 1 <= len(got) <= budget
        per_group = {}
        for v, g in got:
            v.validate(UNIT)
            per_group[g] = per_group.get(g, 0) + 1
        assert all(n <= branch_limit for n in per_group.values())
