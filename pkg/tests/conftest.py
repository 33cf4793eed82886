from __future__ import annotations

from datetime import datetime, timezone

import pytest

from feedlab.entities import Entity, EntitySet
from feedlab.model import validate_experiment


def make_entity_set(set_id: str, n: int, prefix: str = "e", with_dates: bool = False) -> EntitySet:
    entities = []
    for i in range(n):
        created = (
            datetime(2022, 6, 1 + (i % 27), tzinfo=timezone.utc) if with_dates else None
        )
        entities.append(
            Entity(
                entity_id=f"{prefix}{i:03d}",
                headline=f"Headline {prefix}{i}",
                source_label="outlet",
                created_at=created,
            )
        )
    return EntitySet(set_id=set_id, name=set_id, entities=tuple(entities))


def make_experiment(conditions: list[dict], sets: dict, seed: int = 42, **kw):
    draft = {"seed": seed, "conditions": conditions, **kw}
    return validate_experiment(draft, sets)


@pytest.fixture
def ten_set() -> EntitySet:
    return make_entity_set("s10", 10)


@pytest.fixture
def simple_experiment(ten_set):
    sets = {"s10": ten_set}
    exp = make_experiment(
        [{"draws": [{"set_id": "s10", "count": 10}]}],
        sets,
    )
    return exp, sets
