"""Condition and world assignment.

Each arriving participant is assigned to a condition and, within it, a
world. Strategies: ``uniform_random`` draws i.i.d.; ``balanced`` picks
uniformly among the options with the minimum current count, which bounds
max-min occupancy by 1 at every point in time.

The random stream is derived from (experiment.seed, "assign",
participant_id), so an assignment depends only on the participant and the
counts it observed, never on request interleaving.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import ExperimentClosed
from .model import AssignmentStrategy, Condition, Experiment, ExperimentStatus
from .rng import derive_rng


@dataclass(frozen=True)
class Assignment:
    participant_id: str
    condition_index: int
    world_index: int
    assigned_at: datetime

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "condition_index": self.condition_index,
            "world_index": self.world_index,
            "assigned_at": self.assigned_at.isoformat(),
        }


@dataclass
class AssignmentCounts:
    """Current occupancy: one count per condition, and per world within each."""

    per_condition: list[int]
    per_world: dict[int, list[int]]

    @classmethod
    def empty(cls, experiment: Experiment) -> "AssignmentCounts":
        return cls(
            per_condition=[0] * len(experiment.conditions),
            per_world={
                c.condition_index: [0] * c.world_count for c in experiment.conditions
            },
        )

    def record(self, condition_index: int, world_index: int) -> None:
        self.per_condition[condition_index] += 1
        self.per_world[condition_index][world_index] += 1


def _pick(strategy: AssignmentStrategy, counts: list[int], rng: np.random.Generator) -> int:
    if len(counts) == 1:
        return 0
    if strategy is AssignmentStrategy.UNIFORM_RANDOM:
        return int(rng.integers(0, len(counts)))
    low = min(counts)
    candidates = [i for i, c in enumerate(counts) if c == low]
    return candidates[int(rng.integers(0, len(candidates)))]


def assign_condition(
    experiment: Experiment, counts: AssignmentCounts, rng: np.random.Generator
) -> int:
    if experiment.status is not ExperimentStatus.LIVE:
        raise ExperimentClosed(f"experiment {experiment.experiment_id} is not live")
    return _pick(experiment.assignment_strategy, counts.per_condition, rng)


def assign_world(
    condition: Condition,
    world_counts: list[int],
    rng: np.random.Generator,
    strategy: AssignmentStrategy = AssignmentStrategy.BALANCED,
) -> int:
    if len(world_counts) != condition.world_count:
        raise ValueError("world_counts length does not match condition.world_count")
    return _pick(strategy, world_counts, rng)


def make_assignment(
    experiment: Experiment,
    participant_id: str,
    counts: AssignmentCounts,
    now: datetime | None = None,
) -> Assignment:
    """Assign a new participant; caller is responsible for persistence and
    for atomicity of the read-counts/write-assignment cycle (see store)."""
    if not participant_id:
        raise ValueError("participant_id must be non-empty")
    rng = derive_rng(experiment.seed, "assign", participant_id)
    condition_index = assign_condition(experiment, counts, rng)
    condition = experiment.conditions[condition_index]
    world_index = assign_world(
        condition,
        counts.per_world[condition_index],
        rng,
        strategy=experiment.assignment_strategy,
    )
    return Assignment(
        participant_id=participant_id,
        condition_index=condition_index,
        world_index=world_index,
        assigned_at=now or datetime.now(timezone.utc),
    )
