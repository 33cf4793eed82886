"""Experiment configuration: the researcher-authored study definition.

An experiment is a list of conditions, each bundling entity-set draws, a
ranker, an engagement-display policy, a world count, interventions and a
survey. ``validate_experiment`` normalizes a raw config document (parsed
JSON) into an immutable, fully-checked Experiment. All functions here are
pure; persistence lives in feedlab.store.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass
from typing import Mapping

from . import rng as rngmod
from .entities import EntitySet
from .errors import (
    ConfigError,
    DrawTooLarge,
    DuplicateEntityId,
    DuplicateSlug,
    EmptyConditions,
    MissingEntitySet,
    PositionOutOfRange,
)


class RankerKind(str, enum.Enum):
    RANDOM = "random"
    CHRONOLOGICAL = "chronological"
    ENGAGEMENT_SORT = "engagement_sort"
    DWELL_SORT = "dwell_sort"
    EXTERNAL = "external"


class EngagementMode(str, enum.Enum):
    OMITTED = "omitted"
    RANDOM_SAMPLED = "random_sampled"
    LIVE_WORLD = "live_world"


class Skin(str, enum.Enum):
    PLAIN = "plain"
    FACEBOOK_LIKE = "facebook_like"
    INSTAGRAM_LIKE = "instagram_like"


class AssignmentStrategy(str, enum.Enum):
    UNIFORM_RANDOM = "uniform_random"
    BALANCED = "balanced"


class ExperimentStatus(str, enum.Enum):
    DRAFT = "draft"
    LIVE = "live"
    CLOSED = "closed"


class ResponseType(str, enum.Enum):
    LIKERT7 = "likert7"
    FREE_TEXT = "free_text"
    NUMERIC = "numeric"


@dataclass(frozen=True)
class EntitySetDraw:
    set_id: str
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"draw from {self.set_id!r} must have count >= 1")

    def to_dict(self) -> dict:
        return {"set_id": self.set_id, "count": self.count}


@dataclass(frozen=True)
class RankerSpec:
    kind: RankerKind = RankerKind.RANDOM
    external_endpoint: str | None = None
    timeout_ms: int = 2000

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigError("ranker timeout_ms must be positive")
        if self.kind is RankerKind.EXTERNAL and not self.external_endpoint:
            raise ConfigError("external ranker requires external_endpoint")
        if self.kind is not RankerKind.EXTERNAL and self.external_endpoint:
            raise ConfigError("external_endpoint only valid for kind=external")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value, "timeout_ms": self.timeout_ms}
        if self.external_endpoint:
            d["external_endpoint"] = self.external_endpoint
        return d


@dataclass(frozen=True)
class EngagementPolicy:
    mode: EngagementMode = EngagementMode.OMITTED
    sample_low: int = 0
    sample_high: int = 0

    def __post_init__(self):
        if self.sample_low < 0 or self.sample_high < 0:
            raise ConfigError("engagement sample bounds must be nonnegative")
        if self.sample_low > self.sample_high:
            raise ConfigError("engagement sample_low must be <= sample_high")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "sample_low": self.sample_low,
            "sample_high": self.sample_high,
        }


POSITION_RANDOM = "random"


@dataclass(frozen=True)
class Intervention:
    kind: str = "interstitial_modal"
    position: int | str = POSITION_RANDOM  # fixed index or "random"
    content: str = ""

    def __post_init__(self):
        if self.kind != "interstitial_modal":
            raise ConfigError(f"unknown intervention kind {self.kind!r}")
        if isinstance(self.position, str) and self.position != POSITION_RANDOM:
            raise ConfigError("intervention position must be an index or 'random'")
        if isinstance(self.position, int) and self.position < 0:
            raise PositionOutOfRange("fixed intervention position must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "position": self.position, "content": self.content}


@dataclass(frozen=True)
class SurveyQuestion:
    question_id: str
    prompt: str
    response_type: ResponseType = ResponseType.FREE_TEXT

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "prompt": self.prompt,
            "response_type": self.response_type.value,
        }


@dataclass(frozen=True)
class Condition:
    condition_index: int
    draws: tuple[EntitySetDraw, ...]
    ranker: RankerSpec = RankerSpec()
    engagement: EngagementPolicy = EngagementPolicy()
    world_count: int = 1
    skin: Skin = Skin.PLAIN
    interventions: tuple[Intervention, ...] = ()
    survey: tuple[SurveyQuestion, ...] = ()

    def __post_init__(self):
        if not self.draws:
            raise ConfigError(f"condition {self.condition_index} has no draws")
        if self.world_count < 1:
            raise ConfigError("world_count must be >= 1")
        seen = set()
        for q in self.survey:
            if q.question_id in seen:
                raise ConfigError(f"duplicate question_id {q.question_id!r}")
            seen.add(q.question_id)

    @property
    def feed_length(self) -> int:
        return sum(d.count for d in self.draws)

    def to_dict(self) -> dict:
        return {
            "condition_index": self.condition_index,
            "draws": [d.to_dict() for d in self.draws],
            "ranker": self.ranker.to_dict(),
            "engagement": self.engagement.to_dict(),
            "world_count": self.world_count,
            "skin": self.skin.value,
            "interventions": [i.to_dict() for i in self.interventions],
            "survey": [q.to_dict() for q in self.survey],
        }


@dataclass(frozen=True)
class DwellConfig:
    visibility_threshold: float = 0.5
    per_entity_cap_ms: int = 120_000
    idle_gap_ms: int = 60_000

    def __post_init__(self):
        if not (0.0 < self.visibility_threshold <= 1.0):
            raise ConfigError("visibility_threshold must be in (0, 1]")
        if self.per_entity_cap_ms <= 0 or self.idle_gap_ms <= 0:
            raise ConfigError("dwell caps and gaps must be positive")

    def to_dict(self) -> dict:
        return {
            "visibility_threshold": self.visibility_threshold,
            "per_entity_cap_ms": self.per_entity_cap_ms,
            "idle_gap_ms": self.idle_gap_ms,
        }


@dataclass(frozen=True)
class Experiment:
    experiment_id: str
    slug: str
    conditions: tuple[Condition, ...]
    assignment_strategy: AssignmentStrategy = AssignmentStrategy.BALANCED
    seed: int = 0
    status: ExperimentStatus = ExperimentStatus.LIVE
    dwell_config: DwellConfig = DwellConfig()

    def __post_init__(self):
        if not self.conditions:
            raise EmptyConditions("experiment has no conditions")

    def condition(self, index: int) -> Condition:
        return self.conditions[index]

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "slug": self.slug,
            "seed": self.seed,
            "assignment_strategy": self.assignment_strategy.value,
            "status": self.status.value,
            "dwell": self.dwell_config.to_dict(),
            "conditions": [c.to_dict() for c in self.conditions],
        }


def _parse_intervention(d: dict) -> Intervention:
    pos = d.get("position", POSITION_RANDOM)
    if isinstance(pos, dict):  # accept {"fixed": 3} as well as a bare integer
        pos = pos.get("fixed")
    if isinstance(pos, bool) or not isinstance(pos, (int, str)):
        raise ConfigError(f"bad intervention position {pos!r}")
    return Intervention(
        kind=d.get("kind", "interstitial_modal"),
        position=pos,
        content=d.get("content", ""),
    )


def _parse_condition(index: int, d: dict) -> Condition:
    try:
        draws = tuple(
            EntitySetDraw(set_id=x["set_id"], count=int(x["count"]))
            for x in d.get("draws", ())
        )
        ranker_d = d.get("ranker", {})
        ranker = RankerSpec(
            kind=RankerKind(ranker_d.get("kind", "random")),
            external_endpoint=ranker_d.get("external_endpoint"),
            timeout_ms=int(ranker_d.get("timeout_ms", 2000)),
        )
        eng_d = d.get("engagement", {})
        engagement = EngagementPolicy(
            mode=EngagementMode(eng_d.get("mode", "omitted")),
            sample_low=int(eng_d.get("sample_low", 0)),
            sample_high=int(eng_d.get("sample_high", 0)),
        )
        return Condition(
            condition_index=index,
            draws=draws,
            ranker=ranker,
            engagement=engagement,
            world_count=int(d.get("world_count", 1)),
            skin=Skin(d.get("skin", "plain")),
            interventions=tuple(_parse_intervention(i) for i in d.get("interventions", ())),
            survey=tuple(
                SurveyQuestion(
                    question_id=q["question_id"],
                    prompt=q.get("prompt", ""),
                    response_type=ResponseType(q.get("response_type", "free_text")),
                )
                for q in d.get("survey", ())
            ),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"condition {index}: {exc}") from exc


def experiment_from_dict(payload: dict) -> Experiment:
    """Reconstruct an already-normalized Experiment (no cross-checks).

    Use validate_experiment for untrusted drafts; this is for payloads the
    platform previously normalized and persisted.
    """
    dwell_d = payload.get("dwell", {})
    return Experiment(
        experiment_id=payload["experiment_id"],
        slug=payload["slug"],
        conditions=tuple(
            _parse_condition(i, c) for i, c in enumerate(payload["conditions"])
        ),
        assignment_strategy=AssignmentStrategy(payload.get("assignment_strategy", "balanced")),
        seed=int(payload["seed"]),
        status=ExperimentStatus(payload.get("status", "live")),
        dwell_config=DwellConfig(
            visibility_threshold=float(dwell_d.get("visibility_threshold", 0.5)),
            per_entity_cap_ms=int(dwell_d.get("per_entity_cap_ms", 120_000)),
            idle_gap_ms=int(dwell_d.get("idle_gap_ms", 60_000)),
        ),
    )


def validate_experiment(
    draft: dict | Experiment,
    entity_sets: Mapping[str, EntitySet],
    existing_slugs: set[str] | frozenset[str] = frozenset(),
) -> Experiment:
    """Normalize and validate an experiment configuration document.

    Assigns experiment_id and slug when absent (slug is a 10-char base62
    string derived from the seed). Idempotent: validating an already-valid
    Experiment returns an equal value.
    """
    if isinstance(draft, Experiment):
        draft = draft.to_dict()

    raw_conditions = draft.get("conditions") or []
    if not raw_conditions:
        raise EmptyConditions("experiment has no conditions")
    # condition_index is always assigned from list position
    conditions = tuple(_parse_condition(i, c) for i, c in enumerate(raw_conditions))

    seed = int(draft["seed"]) if "seed" in draft else secrets.randbits(63)
    slug = draft.get("slug") or rngmod.base62(seed, "slug")
    if slug in existing_slugs:
        raise DuplicateSlug(f"slug {slug!r} is already in use")
    # id derived from (seed, slug) so distinct slugs never collide on id
    experiment_id = (
        draft.get("experiment_id")
        or f"exp-{rngmod.base62(seed, 'experiment_id', slug, length=12)}"
    )

    for cond in conditions:
        claimed: dict[str, str] = {}
        for draw in cond.draws:
            es = entity_sets.get(draw.set_id)
            if es is None:
                raise MissingEntitySet(f"draw references unknown set_id {draw.set_id!r}")
            if draw.count > len(es):
                raise DrawTooLarge(
                    f"draw of {draw.count} from {draw.set_id!r} exceeds set size {len(es)}"
                )
            # entity ids must stay unique across a condition's inventory
            for eid in es.entity_ids():
                other = claimed.get(eid)
                if other is not None and other != draw.set_id:
                    raise DuplicateEntityId(
                        f"entity_id {eid!r} appears in both {other!r} and {draw.set_id!r}"
                    )
                claimed[eid] = draw.set_id
        for iv in cond.interventions:
            if isinstance(iv.position, int) and iv.position >= cond.feed_length:
                raise PositionOutOfRange(
                    f"fixed intervention at {iv.position} exceeds feed length {cond.feed_length}"
                )

    dwell_d = draft.get("dwell", {})
    dwell_config = DwellConfig(
        visibility_threshold=float(dwell_d.get("visibility_threshold", 0.5)),
        per_entity_cap_ms=int(dwell_d.get("per_entity_cap_ms", 120_000)),
        idle_gap_ms=int(dwell_d.get("idle_gap_ms", 60_000)),
    )

    try:
        strategy = AssignmentStrategy(draft.get("assignment_strategy", "balanced"))
        status = ExperimentStatus(draft.get("status", "live"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return Experiment(
        experiment_id=experiment_id,
        slug=slug,
        conditions=conditions,
        assignment_strategy=strategy,
        seed=seed,
        status=status,
        dwell_config=dwell_config,
    )
