"""Feed construction: inventory sampling, ranking, engagement display.

The pipeline for one participant is pure given (experiment, condition,
entity sets, world snapshot): sampling, shuffling and random engagement
counts all draw from streams derived from (experiment.seed, label,
participant_id), so rebuilding a feed from the same inputs is bit-identical.

Every ranker output is checked to be a permutation of the inventory. The
external-ranker path never raises into a session: protocol violations,
timeouts and transport errors degrade to the default random order with
``fallback_applied=True``.

Built-in tie-breaks (documented total orders):
  engagement_sort: shares desc, then likes desc, then entity_id asc
  dwell_sort:      world mean dwell desc (never-displayed = 0), entity_id asc
  chronological:   created_at desc (missing = epoch), entity_id asc
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Mapping

import numpy as np

from .entities import Entity, EntitySet, format_rfc3339
from .errors import DrawTooLarge, PositionOutOfRange
from .model import (
    Condition,
    EngagementMode,
    EngagementPolicy,
    Experiment,
    Intervention,
    POSITION_RANDOM,
    RankerKind,
    RankerSpec,
)
from .rng import derive_int, derive_rng

if TYPE_CHECKING:
    from .worlds import WorldAggregates


@dataclass(frozen=True)
class InventoryItem:
    entity: Entity
    set_id: str


@dataclass(frozen=True)
class Inventory:
    items: tuple[InventoryItem, ...]
    participant_id: str
    condition_index: int
    world_index: int

    def entity_ids(self) -> list[str]:
        return [it.entity.entity_id for it in self.items]

    def entity(self, entity_id: str) -> Entity:
        for it in self.items:
            if it.entity.entity_id == entity_id:
                return it.entity
        raise KeyError(entity_id)

    def set_id_of(self, entity_id: str) -> str:
        for it in self.items:
            if it.entity.entity_id == entity_id:
                return it.set_id
        raise KeyError(entity_id)


@dataclass(frozen=True)
class OrderedFeed:
    positions: tuple[str, ...]  # entity_id per position, 0 = top
    ranker_used: RankerKind
    fallback_applied: bool = False


@dataclass(frozen=True)
class FeedEntry:
    entity_id: str
    position: int
    shown_likes: int | None = None
    shown_shares: int | None = None
    intervention_before: Intervention | None = None

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "position": self.position,
            "shown_likes": self.shown_likes,
            "shown_shares": self.shown_shares,
            "intervention_before": (
                self.intervention_before.to_dict() if self.intervention_before else None
            ),
        }


@dataclass(frozen=True)
class DisplayFeed:
    entries: tuple[FeedEntry, ...]
    ranker_used: RankerKind = RankerKind.RANDOM
    fallback_applied: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    def entity_ids(self) -> list[str]:
        return [e.entity_id for e in self.entries]

    def entry_for(self, entity_id: str) -> FeedEntry:
        for e in self.entries:
            if e.entity_id == entity_id:
                return e
        raise KeyError(entity_id)

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "ranker_used": self.ranker_used.value,
            "fallback_applied": self.fallback_applied,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DisplayFeed":
        entries = []
        for e in d["entries"]:
            iv = e.get("intervention_before")
            entries.append(
                FeedEntry(
                    entity_id=e["entity_id"],
                    position=e["position"],
                    shown_likes=e.get("shown_likes"),
                    shown_shares=e.get("shown_shares"),
                    intervention_before=Intervention(**iv) if iv else None,
                )
            )
        return cls(
            entries=tuple(entries),
            ranker_used=RankerKind(d.get("ranker_used", "random")),
            fallback_applied=bool(d.get("fallback_applied", False)),
        )


def build_inventory(
    condition: Condition,
    entity_sets: Mapping[str, EntitySet],
    rng: np.random.Generator,
    participant_id: str = "",
    world_index: int = 0,
) -> Inventory:
    """Sample each draw uniformly without replacement and concatenate."""
    items: list[InventoryItem] = []
    for draw in condition.draws:
        es = entity_sets[draw.set_id]
        if draw.count > len(es):
            raise DrawTooLarge(
                f"draw of {draw.count} from {draw.set_id!r} exceeds set size {len(es)}"
            )
        chosen = rng.choice(len(es), size=draw.count, replace=False)
        items.extend(InventoryItem(es.entities[int(i)], draw.set_id) for i in chosen)
    return Inventory(
        items=tuple(items),
        participant_id=participant_id,
        condition_index=condition.condition_index,
        world_index=world_index,
    )


def _check_permutation(inventory: Inventory, positions: tuple[str, ...]) -> None:
    if sorted(positions) != sorted(inventory.entity_ids()):
        raise AssertionError("ranker output is not a permutation of the inventory")


def rank_random(inventory: Inventory, rng: np.random.Generator) -> OrderedFeed:
    ids = inventory.entity_ids()
    perm = rng.permutation(len(ids))
    positions = tuple(ids[int(i)] for i in perm)
    _check_permutation(inventory, positions)
    return OrderedFeed(positions=positions, ranker_used=RankerKind.RANDOM)


def rank_by_engagement(inventory: Inventory, world: "WorldAggregates") -> OrderedFeed:
    positions = tuple(
        sorted(
            inventory.entity_ids(),
            key=lambda eid: (-world.shares(eid), -world.likes(eid), eid),
        )
    )
    _check_permutation(inventory, positions)
    return OrderedFeed(positions=positions, ranker_used=RankerKind.ENGAGEMENT_SORT)


def rank_by_dwell(inventory: Inventory, world: "WorldAggregates") -> OrderedFeed:
    positions = tuple(
        sorted(
            inventory.entity_ids(),
            key=lambda eid: (-world.mean_dwell_ms(eid), eid),
        )
    )
    _check_permutation(inventory, positions)
    return OrderedFeed(positions=positions, ranker_used=RankerKind.DWELL_SORT)


def rank_chronological(inventory: Inventory) -> OrderedFeed:
    def created_ts(eid: str) -> float:
        dt = inventory.entity(eid).created_at
        return dt.timestamp() if dt is not None else 0.0

    positions = tuple(
        sorted(inventory.entity_ids(), key=lambda eid: (-created_ts(eid), eid))
    )
    _check_permutation(inventory, positions)
    return OrderedFeed(positions=positions, ranker_used=RankerKind.CHRONOLOGICAL)


class RankerFailure(Exception):
    """Internal marker for a failed external-ranker exchange; never escapes."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


# reasons recorded when an external ranker degrades to random
RANKER_TIMEOUT = "ranker_timeout"
RANKER_UNREACHABLE = "ranker_unreachable"
RANKER_INVALID_PERMUTATION = "ranker_invalid_permutation"


def ranker_protocol_request(
    inventory: Inventory,
    world: "WorldAggregates",
    experiment_id: str,
    request_seed: int,
) -> dict:
    """The JSON body POSTed to an external ranker endpoint."""
    return {
        "experiment_id": experiment_id,
        "condition_index": inventory.condition_index,
        "world_index": inventory.world_index,
        "seed": request_seed,
        "items": [
            {
                "entity_id": it.entity.entity_id,
                "headline": it.entity.headline,
                "source_label": it.entity.source_label,
                "tags": list(it.entity.tags),
                "created_at": format_rfc3339(it.entity.created_at),
                "world_shares": world.shares(it.entity.entity_id),
                "world_likes": world.likes(it.entity.entity_id),
                "world_mean_dwell_ms": world.mean_dwell_ms(it.entity.entity_id),
            }
            for it in inventory.items
        ],
    }


def _default_transport(endpoint: str, payload: dict, timeout_s: float) -> dict:
    import httpx

    try:
        resp = httpx.post(endpoint, json=payload, timeout=timeout_s)
    except httpx.TimeoutException as exc:
        raise RankerFailure(RANKER_TIMEOUT, str(exc)) from exc
    except httpx.HTTPError as exc:
        raise RankerFailure(RANKER_UNREACHABLE, str(exc)) from exc
    if resp.status_code < 200 or resp.status_code >= 300:
        raise RankerFailure(RANKER_UNREACHABLE, f"status {resp.status_code}")
    try:
        return resp.json()
    except (ValueError, json.JSONDecodeError) as exc:
        raise RankerFailure(RANKER_INVALID_PERMUTATION, "non-JSON reply") from exc


def rank_external(
    inventory: Inventory,
    world: "WorldAggregates",
    spec: RankerSpec,
    fallback_rng: np.random.Generator,
    experiment_id: str = "",
    request_seed: int = 0,
    transport: Callable[[str, dict, float], dict] | None = None,
    on_failure: Callable[[str, str], None] | None = None,
) -> OrderedFeed:
    """POST the Ranker Protocol request; fall back to random on any failure.

    ``transport(endpoint, payload, timeout_s) -> reply dict`` may raise
    RankerFailure; the default uses httpx. ``on_failure(reason, detail)``
    receives the internal failure record.
    """
    payload = ranker_protocol_request(inventory, world, experiment_id, request_seed)
    transport = transport or _default_transport
    try:
        reply = transport(spec.external_endpoint or "", payload, spec.timeout_ms / 1000.0)
        order = reply.get("order") if isinstance(reply, dict) else None
        if not isinstance(order, list) or sorted(map(str, order)) != sorted(
            inventory.entity_ids()
        ):
            raise RankerFailure(RANKER_INVALID_PERMUTATION, "reply is not a permutation")
        positions = tuple(str(x) for x in order)
    except RankerFailure as failure:
        if on_failure is not None:
            on_failure(failure.reason, failure.detail)
        fallback = rank_random(inventory, fallback_rng)
        return replace(fallback, ranker_used=RankerKind.EXTERNAL, fallback_applied=True)
    return OrderedFeed(positions=positions, ranker_used=RankerKind.EXTERNAL)


def populate_engagement(
    feed: OrderedFeed,
    policy: EngagementPolicy,
    world: "WorldAggregates",
    rng: np.random.Generator,
) -> DisplayFeed:
    """Attach displayed like/share counts per the condition's policy.

    random_sampled draws each count i.i.d. uniform in [sample_low,
    sample_high] per post per participant; live_world snapshots the world
    aggregates passed in (one snapshot per session, not live-updated).
    """
    entries = []
    for pos, eid in enumerate(feed.positions):
        if policy.mode is EngagementMode.OMITTED:
            likes = shares = None
        elif policy.mode is EngagementMode.RANDOM_SAMPLED:
            likes = int(rng.integers(policy.sample_low, policy.sample_high + 1))
            shares = int(rng.integers(policy.sample_low, policy.sample_high + 1))
        else:
            likes = world.likes(eid)
            shares = world.shares(eid)
        entries.append(
            FeedEntry(entity_id=eid, position=pos, shown_likes=likes, shown_shares=shares)
        )
    return DisplayFeed(
        entries=tuple(entries),
        ranker_used=feed.ranker_used,
        fallback_applied=feed.fallback_applied,
    )


def place_interventions(
    feed: DisplayFeed,
    interventions: tuple[Intervention, ...],
    rng: np.random.Generator,
) -> DisplayFeed:
    """Attach each intervention before exactly one feed position.

    fixed(i) goes before position i; random draws uniformly over positions.
    A position holds at most one intervention, so random placements re-draw
    uniformly among the still-free positions on collision.
    """
    if not interventions:
        return feed
    n = len(feed.entries)
    if n < 1:
        raise PositionOutOfRange("cannot place interventions in an empty feed")
    placed: dict[int, Intervention] = {}
    for iv in interventions:
        if isinstance(iv.position, int):
            if iv.position >= n:
                raise PositionOutOfRange(
                    f"fixed intervention at {iv.position} exceeds feed length {n}"
                )
            pos = iv.position
            if pos in placed:
                raise PositionOutOfRange(f"two interventions fixed at position {pos}")
        else:
            assert iv.position == POSITION_RANDOM
            free = [p for p in range(n) if p not in placed]
            if not free:
                raise PositionOutOfRange("more interventions than feed positions")
            pos = free[int(rng.integers(0, len(free)))]
        placed[pos] = iv
    entries = tuple(
        replace(e, intervention_before=placed.get(e.position)) for e in feed.entries
    )
    return DisplayFeed(
        entries=entries, ranker_used=feed.ranker_used, fallback_applied=feed.fallback_applied
    )


def build_session_feed(
    experiment: Experiment,
    condition: Condition,
    entity_sets: Mapping[str, EntitySet],
    participant_id: str,
    world_index: int,
    world: "WorldAggregates",
    transport: Callable[[str, dict, float], dict] | None = None,
    on_ranker_failure: Callable[[str, str], None] | None = None,
) -> tuple[Inventory, DisplayFeed]:
    """Full feed pipeline for one participant against one world snapshot."""
    seed = experiment.seed
    inventory = build_inventory(
        condition,
        entity_sets,
        derive_rng(seed, "inventory", participant_id),
        participant_id=participant_id,
        world_index=world_index,
    )
    kind = condition.ranker.kind
    if kind is RankerKind.RANDOM:
        ordered = rank_random(inventory, derive_rng(seed, "rank", participant_id))
    elif kind is RankerKind.CHRONOLOGICAL:
        ordered = rank_chronological(inventory)
    elif kind is RankerKind.ENGAGEMENT_SORT:
        ordered = rank_by_engagement(inventory, world)
    elif kind is RankerKind.DWELL_SORT:
        ordered = rank_by_dwell(inventory, world)
    else:
        ordered = rank_external(
            inventory,
            world,
            condition.ranker,
            fallback_rng=derive_rng(seed, "rank", participant_id),
            experiment_id=experiment.experiment_id,
            request_seed=derive_int(seed, "rank", participant_id),
            transport=transport,
            on_failure=on_ranker_failure,
        )
    display = populate_engagement(
        ordered, condition.engagement, world, derive_rng(seed, "engagement", participant_id)
    )
    display = place_interventions(
        display, condition.interventions, derive_rng(seed, "intervention", participant_id)
    )
    return inventory, display
