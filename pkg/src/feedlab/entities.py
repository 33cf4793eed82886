"""Content entities and the CSV upload format.

CSV columns (header names exact, order-insensitive):
``entity_id,headline,body,image_ref,source_label,tags,created_at``.
``tags`` are ';'-separated; ``created_at`` is RFC3339 or empty. Only
``entity_id`` and ``headline`` are required columns.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import DuplicateEntityId, EmptyFile, MissingColumn

CSV_COLUMNS = (
    "entity_id",
    "headline",
    "body",
    "image_ref",
    "source_label",
    "tags",
    "created_at",
)


def parse_rfc3339(value: str) -> datetime | None:
    """Parse an RFC3339 timestamp; empty string yields None."""
    value = value.strip()
    if not value:
        return None
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime | None) -> str:
    if dt is None:
        return ""
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class Entity:
    entity_id: str
    headline: str
    body: str = ""
    image_ref: str = ""
    source_label: str = ""
    tags: tuple[str, ...] = ()
    created_at: datetime | None = None

    def __post_init__(self):
        if not self.entity_id:
            raise MissingColumn("row is missing its entity_id")
        if not self.headline:
            raise MissingColumn(f"entity {self.entity_id!r} has an empty headline")

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "headline": self.headline,
            "body": self.body,
            "image_ref": self.image_ref,
            "source_label": self.source_label,
            "tags": list(self.tags),
            "created_at": format_rfc3339(self.created_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Entity":
        created = d.get("created_at") or ""
        return cls(
            entity_id=d["entity_id"],
            headline=d["headline"],
            body=d.get("body", "") or "",
            image_ref=d.get("image_ref", "") or "",
            source_label=d.get("source_label", "") or "",
            tags=tuple(d.get("tags", ()) or ()),
            created_at=created if isinstance(created, datetime) else parse_rfc3339(created),
        )


@dataclass(frozen=True)
class EntitySet:
    set_id: str
    name: str
    entities: tuple[Entity, ...] = ()

    def __post_init__(self):
        if not self.entities:
            raise EmptyFile(f"entity set {self.set_id!r} has no entities")
        seen: set[str] = set()
        for e in self.entities:
            if e.entity_id in seen:
                raise DuplicateEntityId(
                    f"duplicate entity_id {e.entity_id!r} in set {self.set_id!r}"
                )
            seen.add(e.entity_id)

    def __len__(self) -> int:
        return len(self.entities)

    def entity_ids(self) -> set[str]:
        return {e.entity_id for e in self.entities}

    def to_dict(self) -> dict:
        return {
            "set_id": self.set_id,
            "name": self.name,
            "entities": [e.to_dict() for e in self.entities],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntitySet":
        return cls(
            set_id=d["set_id"],
            name=d.get("name", d["set_id"]),
            entities=tuple(Entity.from_dict(e) for e in d["entities"]),
        )


def parse_entity_set_csv(raw: bytes, set_id: str, name: str | None = None) -> EntitySet:
    """Parse an uploaded UTF-8 CSV into an EntitySet.

    One Entity per data row. Missing optional columns yield empty fields.
    Raises MissingColumn if entity_id or headline is absent from the header,
    DuplicateEntityId on a repeated id, EmptyFile when no data rows exist.
    """
    text = raw.decode("utf-8-sig")
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames is None:
        raise EmptyFile("CSV has no header row")
    fields = set(reader.fieldnames)
    for required in ("entity_id", "headline"):
        if required not in fields:
            raise MissingColumn(f"CSV is missing required column {required!r}")

    entities: list[Entity] = []
    seen: set[str] = set()
    for row in reader:
        entity_id = (row.get("entity_id") or "").strip()
        if entity_id in seen:
            raise DuplicateEntityId(f"duplicate entity_id {entity_id!r}")
        seen.add(entity_id)
        tags_raw = (row.get("tags") or "").strip()
        entities.append(
            Entity(
                entity_id=entity_id,
                headline=(row.get("headline") or "").strip(),
                body=row.get("body") or "",
                image_ref=(row.get("image_ref") or "").strip(),
                source_label=(row.get("source_label") or "").strip(),
                tags=tuple(t for t in tags_raw.split(";") if t) if tags_raw else (),
                created_at=parse_rfc3339(row.get("created_at") or ""),
            )
        )
    if not entities:
        raise EmptyFile("CSV has a header but no data rows")
    return EntitySet(set_id=set_id, name=name or set_id, entities=tuple(entities))


def serialize_entity_set_csv(entity_set: EntitySet) -> bytes:
    """Inverse of parse_entity_set_csv; parse(serialize(s)) == s."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in entity_set.entities:
        writer.writerow(
            [
                e.entity_id,
                e.headline,
                e.body,
                e.image_ref,
                e.source_label,
                ";".join(e.tags),
                format_rfc3339(e.created_at),
            ]
        )
    return buf.getvalue().encode("utf-8")
