"""The sampling manager: chooses which parameter vectors to branch per
(model, step) under a computation budget, and which upstream scenario
groups to drop.

All draws are deterministic functions of (policy seed, model id, step,
group digest): results do not depend on group order or pool scheduling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .core import ContinuousDomain, DiscreteDomain, ModelSpec
from .errors import EmptySample
from .util import derive_seed


@dataclass(frozen=True)
class SamplingPolicy:
    """Sampling strategy and budget for one model.

    ``budget`` caps instances per (model, step); ``branch_limit`` caps
    children per upstream group; ``drop_quantile`` q drops the bottom
    q-quantile of groups by upstream score before branching (0 disables).
    """

    strategy: str = "uniform-random"
    budget: int = 1
    branch_limit: int = 1
    drop_quantile: float = 0.0
    seed: int = 0

    STRATEGIES = ("grid", "uniform-random", "latin-hypercube")

    def __post_init__(self):
        if self.strategy not in self.STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.branch_limit < 1:
            raise ValueError("branch_limit must be >= 1")
        if not (0.0 <= self.drop_quantile < 1.0):
            raise ValueError("drop_quantile must be in [0, 1)")


@dataclass(frozen=True)
class ParameterVector:
    """One point of a model's parameter space: exactly one value per
    declared parameter, each inside its domain."""

    assignments: tuple[tuple[str, object], ...]

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        return cls(tuple(sorted(d.items())))

    def as_dict(self) -> dict:
        return dict(self.assignments)

    def validate(self, model: ModelSpec) -> None:
        got = self.as_dict()
        if set(got) != {p.name for p in model.params}:
            raise ValueError(
                f"parameter vector {sorted(got)} does not match the "
                f"parameter space of model {model.id}"
            )
        for p in model.params:
            if not p.domain.contains(got[p.name]):
                raise ValueError(
                    f"value {got[p.name]!r} outside domain of {model.id}.{p.name}"
                )


class UpstreamGroup(Protocol):
    """What the sampler needs to know about one aligned input group."""

    digest: str
    drop_score: Optional[float]


@dataclass(frozen=True)
class GroupKey:
    digest: str
    drop_score: Optional[float] = None


def _rng(policy: SamplingPolicy, model_id: str, step: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(policy.seed, model_id, step, *labels))


def _grid_vectors(model: ModelSpec, count: int) -> list[ParameterVector]:
    """First ``count`` points of a deterministic grid over the parameter
    space: discrete domains enumerate their values, continuous domains use
    evenly spaced points (midpoint when a single point suffices)."""
    if not model.params:
        return [ParameterVector(())]
    params = sorted(model.params, key=lambda p: p.name)
    disc_total = 1
    n_cont = 0
    for p in params:
        if isinstance(p.domain, DiscreteDomain):
            disc_total *= len(p.domain.values)
        else:
            n_cont += 1
    if n_cont:
        per_axis = 1
        while disc_total * per_axis**n_cont < count:
            per_axis += 1
    else:
        per_axis = 1
    axes = []
    for p in params:
        if isinstance(p.domain, DiscreteDomain):
            axes.append(list(p.domain.values))
        elif per_axis == 1:
            axes.append([(p.domain.low + p.domain.high) / 2.0])
        else:
            axes.append(list(np.linspace(p.domain.low, p.domain.high, per_axis)))
    names = [p.name for p in params]
    out = []
    for combo in itertools.product(*axes):
        out.append(ParameterVector(tuple(zip(names, combo))))
        if len(out) >= count:
            break
    return out


def _uniform_vectors(model: ModelSpec, count: int, rng: np.random.Generator) -> list[ParameterVector]:
    out = []
    params = sorted(model.params, key=lambda p: p.name)
    for _ in range(count):
        vals = []
        for p in params:
            if isinstance(p.domain, ContinuousDomain):
                vals.append((p.name, float(rng.uniform(p.domain.low, p.domain.high))))
            else:
                vals.append((p.name, p.domain.values[int(rng.integers(len(p.domain.values)))]))
        out.append(ParameterVector(tuple(vals)))
    return out


def _lhs_vectors(model: ModelSpec, count: int, rng: np.random.Generator) -> list[ParameterVector]:
    """Latin-hypercube over continuous parameters: one sample per stratum of
    each axis, strata order permuted, uniform within the stratum.  Discrete
    parameters fall back to uniform draws."""
    params = sorted(model.params, key=lambda p: p.name)
    cont = [p for p in params if isinstance(p.domain, ContinuousDomain)]
    columns: dict[str, np.ndarray] = {}
    for p in cont:
        strata = rng.permutation(count)
        u = rng.uniform(size=count)
        unit = (strata + u) / count
        columns[p.name] = p.domain.low + (p.domain.high - p.domain.low) * unit
    out = []
    for i in range(count):
        vals = []
        for p in params:
            if p.name in columns:
                vals.append((p.name, float(columns[p.name][i])))
            else:
                vals.append((p.name, p.domain.values[int(rng.integers(len(p.domain.values)))]))
        out.append(ParameterVector(tuple(vals)))
    return out


def _apply_drop_rule(
    groups: Sequence[UpstreamGroup], policy: SamplingPolicy, model_id: str, step: int
) -> list[int]:
    """Indices of groups surviving the drop rule, in original order.

    Groups are scored by their declared drop score when present, else by a
    deterministic pseudo-random score; the bottom floor(q*n) are dropped.
    Since q < 1 at least one group always survives.
    """
    n = len(groups)
    n_drop = math.floor(policy.drop_quantile * n)
    if n_drop == 0:
        return list(range(n))
    scored = []
    for i, g in enumerate(groups):
        score = g.drop_score
        if score is None:
            score = float(_rng(policy, model_id, step, "drop", g.digest).uniform())
        scored.append((score, i))
    dropped = {i for _, i in sorted(scored)[:n_drop]}
    return [i for i in range(n) if i not in dropped]


def sample_instances(
    model: ModelSpec,
    step: int,
    upstream_groups: Sequence[UpstreamGroup],
    policy: SamplingPolicy,
) -> list[tuple[ParameterVector, int]]:
    """Choose the parameter vectors to execute for one (model, step).

    Returns (vector, group index) pairs: at most ``branch_limit`` per
    surviving group and at most ``budget`` in total, allotted round-robin
    over groups in order.  Raises EmptySample when there is no group to
    branch from (the run halts with a diagnostic).
    """
    if not upstream_groups:
        raise EmptySample(
            f"no upstream input groups for {model.id} at step {step}; "
            "all parents failed or were dropped"
        )
    kept = _apply_drop_rule(upstream_groups, policy, model.id, step)
    counts = {i: 0 for i in kept}
    total = 0
    while total < policy.budget:
        progressed = False
        for i in kept:
            if counts[i] < policy.branch_limit:
                counts[i] += 1
                total += 1
                progressed = True
                if total >= policy.budget:
                    break
        if not progressed:
            break
    results: list[tuple[ParameterVector, int]] = []
    for i in kept:
        n = counts[i]
        if n == 0:
            continue
        g = upstream_groups[i]
        if policy.strategy == "grid":
            vecs = _grid_vectors(model, n)
        elif policy.strategy == "uniform-random":
            vecs = _uniform_vectors(model, n, _rng(policy, model.id, step, "draw", g.digest))
        else:
            vecs = _lhs_vectors(model, n, _rng(policy, model.id, step, "draw", g.digest))
        seen: set = set()
        for v in vecs[:n]:
            if v.assignments in seen:  # identical (p, group) would duplicate an instance
                continue
            seen.add(v.assignments)
            results.append((v, i))
    if not results:
        raise EmptySample(
            f"sampling for {model.id} at step {step} produced no instances"
        )
    return results
