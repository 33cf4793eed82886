"""Per-world engagement aggregates and ecosystem diversity metrics.

Worlds evolve independently: a world's aggregates are a pure fold of the
finalized sessions assigned to it, so deleting every other world's sessions
from history cannot change it. Aggregates update only at session
finalization (never per-event), which keeps mid-session reneging invisible
to other participants.

Diversity is measured over final share counts with the Gini coefficient and
Shannon entropy; cross-world unpredictability is the mean pairwise Spearman
distance (1 - rho) between the worlds' share rankings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, WorldMismatch
from .telemetry import EngagementOutcome


@dataclass
class EntityAggregate:
    shares: int = 0
    likes: int = 0
    dwell_total_ms: int = 0
    dwell_sessions: int = 0

    def to_dict(self) -> dict:
        return {
            "shares": self.shares,
            "likes": self.likes,
            "dwell_total_ms": self.dwell_total_ms,
            "dwell_sessions": self.dwell_sessions,
        }


@dataclass
class WorldAggregates:
    experiment_id: str = ""
    condition_index: int = 0
    world_index: int = 0
    per_entity: dict[str, EntityAggregate] = field(default_factory=dict)
    session_count: int = 0
    version: int = 0

    def _get(self, entity_id: str) -> EntityAggregate | None:
        return self.per_entity.get(entity_id)

    def shares(self, entity_id: str) -> int:
        agg = self._get(entity_id)
        return agg.shares if agg else 0

    def likes(self, entity_id: str) -> int:
        agg = self._get(entity_id)
        return agg.likes if agg else 0

    def mean_dwell_ms(self, entity_id: str) -> float:
        agg = self._get(entity_id)
        if agg is None or agg.dwell_sessions == 0:
            return 0.0  # never displayed: cold-start mean of 0
        return agg.dwell_total_ms / agg.dwell_sessions

    def snapshot(self) -> "WorldAggregates":
        """Immutable-by-copy view; later applications leave it unchanged."""
        return WorldAggregates(
            experiment_id=self.experiment_id,
            condition_index=self.condition_index,
            world_index=self.world_index,
            per_entity={k: EntityAggregate(**v.to_dict()) for k, v in self.per_entity.items()},
            session_count=self.session_count,
            version=self.version,
        )

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "condition_index": self.condition_index,
            "world_index": self.world_index,
            "session_count": self.session_count,
            "version": self.version,
            "per_entity": {k: v.to_dict() for k, v in sorted(self.per_entity.items())},
        }


def apply_session_summary(
    world: WorldAggregates,
    outcomes: list[EngagementOutcome],
    condition_index: int | None = None,
    world_index: int | None = None,
) -> WorldAggregates:
    """Fold one finalized session into the world's aggregates.

    Final toggle states count (a shared-then-unshared post contributes no
    share); every displayed entity contributes a dwell observation, so mean
    dwell averages over sessions that displayed the entity.
    """
    if condition_index is not None and condition_index != world.condition_index:
        raise WorldMismatch(
            f"session condition {condition_index} != world condition {world.condition_index}"
        )
    if world_index is not None and world_index != world.world_index:
        raise WorldMismatch(
            f"session world {world_index} != world {world.world_index}"
        )
    for outcome in outcomes:
        agg = world.per_entity.setdefault(outcome.entity_id, EntityAggregate())
        if outcome.shared:
            agg.shares += 1
        if outcome.liked:
            agg.likes += 1
        agg.dwell_total_ms += outcome.dwell_ms
        agg.dwell_sessions += 1
    world.session_count += 1
    world.version += 1
    return world


def gini(values) -> float:
    """Gini coefficient of a nonnegative distribution, in [0, 1).

    Sorted-rank formula: G = sum_i (2i - n - 1) x_(i) / (n sum x), with
    x_(i) ascending and i = 1..n. Equals the mean absolute difference over
    twice the mean. All-zero input is defined as 0.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("gini of an empty distribution")
    if np.any(arr < 0):
        raise ValueError("gini requires nonnegative values")
    total = float(arr.sum())
    if total == 0.0:
        return 0.0
    xs = np.sort(arr)
    n = arr.size
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.dot(ranks, xs) / (n * total))


def shannon_entropy(values) -> float:
    """Shannon entropy in bits of the normalized distribution; 0 log 0 = 0."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("entropy of an empty distribution")
    if np.any(arr < 0):
        raise ValueError("entropy requires nonnegative values")
    total = float(arr.sum())
    if total == 0.0:
        return 0.0
    p = arr[arr > 0] / total
    return float(-np.sum(p * np.log2(p))) + 0.0  # + 0.0 normalizes IEEE -0.0


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks for ties.

    Identical vectors give 1.0; if exactly one side is constant there is no
    rank information and the correlation is defined as 0.0.
    """
    xa = np.asarray(list(x), dtype=np.float64)
    ya = np.asarray(list(y), dtype=np.float64)
    if xa.size != ya.size:
        raise ValueError("spearman_rho requires equal-length vectors")
    if xa.size == 0:
        raise EmptyInput("spearman_rho of empty vectors")
    if np.array_equal(xa, ya):
        return 1.0
    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    denom = math.sqrt(float(np.dot(sx, sx)) * float(np.dot(sy, sy)))
    if denom == 0.0:
        return 0.0
    return float(np.dot(sx, sy) / denom)


@dataclass(frozen=True)
class WorldDiversity:
    world_index: int
    gini: float
    entropy_bits: float
    top_entity: str | None

    def to_dict(self) -> dict:
        return {
            "world_index": self.world_index,
            "gini": self.gini,
            "entropy_bits": self.entropy_bits,
            "top_entity": self.top_entity,
        }


@dataclass(frozen=True)
class DiversityReport:
    condition_index: int
    per_world: tuple[WorldDiversity, ...]
    cross_world_unpredictability: float

    def to_dict(self) -> dict:
        return {
            "condition_index": self.condition_index,
            "per_world": [w.to_dict() for w in self.per_world],
            "cross_world_unpredictability": self.cross_world_unpredictability,
        }


def diversity_report(
    worlds: list[WorldAggregates],
    entity_ids: list[str],
    condition_index: int = 0,
) -> DiversityReport:
    """Per-world Gini/entropy over final share counts plus the mean pairwise
    Spearman distance between worlds' share rankings.

    ``entity_ids`` fixes the shared universe so share vectors align across
    worlds (entities nobody shared count as zeros).
    """
    universe = sorted(entity_ids)
    vectors = []
    per_world = []
    for world in sorted(worlds, key=lambda w: w.world_index):
        shares = [world.shares(eid) for eid in universe]
        vectors.append(np.asarray(shares, dtype=np.float64))
        top = None
        if universe:
            top = sorted(universe, key=lambda eid: (-world.shares(eid), eid))[0]
        per_world.append(
            WorldDiversity(
                world_index=world.world_index,
                gini=gini(shares) if universe else 0.0,
                entropy_bits=shannon_entropy(shares) if universe else 0.0,
                top_entity=top,
            )
        )
    distances = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            distances.append(1.0 - spearman_rho(vectors[i], vectors[j]))
    unpredictability = float(np.mean(distances)) if distances else 0.0
    return DiversityReport(
        condition_index=condition_index,
        per_world=tuple(per_world),
        cross_world_unpredictability=unpredictability,
    )
