from __future__ import annotations

import numpy as np
import pytest

from conftest import make_entity_set, make_experiment
from feedlab.assignment import (
    AssignmentCounts,
    assign_condition,
    assign_world,
    make_assignment,
)
from feedlab.errors import ExperimentClosed
from feedlab.rng import derive_rng


@pytest.fixture
def sets():
    return {"s": make_entity_set("s", 10)}


def _experiment(n_conditions, sets, strategy="balanced", worlds=1, seed=42, status="live"):
    return make_experiment(
        [
            {"draws": [{"set_id": "s", "count": 2}], "world_count": worlds}
            for _ in range(n_conditions)
        ],
        sets,
        seed=seed,
        assignment_strategy=strategy,
        status=status,
    )


def test_single_condition_always_zero(sets):
    exp = _experiment(1, sets)
    counts = AssignmentCounts.empty(exp)
    rng = derive_rng(1, "t")
    assert all(assign_condition(exp, counts, rng) == 0 for _ in range(20))


def test_balanced_unique_minimum(sets):
    exp = _experiment(3, sets)
    counts = AssignmentCounts.empty(exp)
    counts.per_condition = [5, 3, 5]
    rng = derive_rng(1, "t")
    assert all(assign_condition(exp, counts, rng) == 1 for _ in range(20))


def test_closed_experiment_rejects(sets):
    exp = _experiment(2, sets, status="closed")
    with pytest.raises(ExperimentClosed):
        assign_condition(exp, AssignmentCounts.empty(exp), derive_rng(1, "t"))


def test_uniform_frequencies_law_of_large_numbers(sets):
    # 100,000 draws over 4 conditions; each frequency within [0.245, 0.255]
    exp = _experiment(4, sets, strategy="uniform_random", seed=2024)
    counts = AssignmentCounts.empty(exp)
    rng = derive_rng(exp.seed, "freq-check")
    tally = np.zeros(4, dtype=int)
    for _ in range(100_000):
        tally[assign_condition(exp, counts, rng)] += 1
    freqs = tally / 100_000
    assert all(0.245 <= f <= 0.255 for f in freqs), freqs


def test_world_count_one_returns_zero(sets):
    exp = _experiment(1, sets, worlds=1)
    assert assign_world(exp.conditions[0], [0], derive_rng(1, "t")) == 0


def test_world_balanced_unique_minimum(sets):
    exp = _experiment(1, sets, worlds=10)
    world_counts = [2, 2, 1, 2, 2, 2, 2, 2, 2, 2]
    rng = derive_rng(1, "t")
    assert assign_world(exp.conditions[0], world_counts, rng) == 2


def test_world_uniform_frequencies(sets):
    # 10,000 draws over 10 worlds; each frequency within [0.085, 0.115]
    exp = _experiment(1, sets, strategy="uniform_random", worlds=10, seed=7)
    cond = exp.conditions[0]
    rng = derive_rng(exp.seed, "world-freq")
    tally = np.zeros(10, dtype=int)
    for _ in range(10_000):
        tally[assign_world(cond, [0] * 10, rng, strategy=exp.assignment_strategy)] += 1
    freqs = tally / 10_000
    assert all(0.085 <= f <= 0.115 for f in freqs), freqs


def test_balanced_thousand_participants_exact_quarters(sets):
    exp = _experiment(4, sets, strategy="balanced", seed=99)
    counts = AssignmentCounts.empty(exp)
    for i in range(1000):
        a = make_assignment(exp, f"p{i}", counts)
        counts.record(a.condition_index, a.world_index)
    assert counts.per_condition == [250, 250, 250, 250]


def test_balanced_bound_holds_at_every_step(sets):
    exp = _experiment(5, sets, strategy="balanced", seed=5)
    counts = AssignmentCounts.empty(exp)
    for i in range(333):
        a = make_assignment(exp, f"p{i}", counts)
        counts.record(a.condition_index, a.world_index)
        assert max(counts.per_condition) - min(counts.per_condition) <= 1


def test_assignment_depends_only_on_seed_and_participant(sets):
    exp = _experiment(4, sets, strategy="uniform_random", seed=31337)
    counts = AssignmentCounts.empty(exp)
    a1 = make_assignment(exp, "alice", counts)
    a2 = make_assignment(exp, "alice", counts)
    assert (a1.condition_index, a1.world_index) == (a2.condition_index, a2.world_index)


def test_arrival_order_determinism(sets):
    # same seed + same arrival order => identical assignment sequence
    def run(order):
        exp = _experiment(3, sets, strategy="balanced", seed=11, worlds=4)
        counts = AssignmentCounts.empty(exp)
        out = []
        for pid in order:
            a = make_assignment(exp, pid, counts)
            counts.record(a.condition_index, a.world_index)
            out.append((pid, a.condition_index, a.world_index))
        return out

    order = [f"p{i}" for i in range(60)]
    assert run(order) == run(order)
