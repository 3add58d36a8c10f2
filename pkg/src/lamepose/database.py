"""LED parameter database and its ``led-db.json`` document format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .exceptions import DatabaseError, GeometryError, SchemaError, UnknownLedError
from .geometry import LameCurve

SCHEMA_VERSION = 1

_NUMBER = {"type": "number"}
DATABASE_SCHEMA = {
    "type": "object",
    "required": ["version", "z0", "leds"],
    "properties": {
        "version": {"type": "integer"},
        "z0": _NUMBER,
        "leds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "cx", "cy", "a", "b", "gamma", "phi"],
                "properties": {
                    "id": {"type": "integer"},
                    "cx": _NUMBER, "cy": _NUMBER, "a": _NUMBER, "b": _NUMBER,
                    "gamma": _NUMBER, "phi": _NUMBER,
                },
            },
        },
        "ref_points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["x", "y", "u", "v"],
                "properties": {"x": _NUMBER, "y": _NUMBER, "u": _NUMBER, "v": _NUMBER},
            },
        },
    },
}


@dataclass(frozen=True)
class LedRecord:
    id: int
    curve: LameCurve


@dataclass(frozen=True)
class RefPoint:
    """A surveyed ceiling point and its observed pixel."""

    world: tuple[float, float, float]
    pixel: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "world", tuple(float(v) for v in self.world))
        object.__setattr__(self, "pixel", tuple(float(v) for v in self.pixel))


@dataclass(frozen=True)
class Database:
    """Validated, id-indexed LED records sharing one ceiling height."""

    z0: float
    records: tuple[LedRecord, ...]
    ref_points: tuple[RefPoint, ...] = ()
    _index: Mapping[int, LedRecord] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {r.id: r for r in self.records})

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, led_id):
        return led_id in self._index

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.records]

    def lookup(self, led_id: int) -> LedRecord:
        try:
            return self._index[led_id]
        except KeyError:
            raise UnknownLedError(f"LED id {led_id} not in database") from None


def build_database(records: Iterable[LedRecord], ref_points: Sequence[RefPoint] = ()) -> Database:
    records = tuple(records)
    if not records:
        raise DatabaseError("database needs at least one LED")
    seen = set()
    for r in records:
        if not isinstance(r.id, (int, np.integer)) or isinstance(r.id, bool):
            raise DatabaseError(f"LED id must be an integer, got {r.id!r}")
        if r.id in seen:
            raise DatabaseError(f"duplicate LED id {r.id}")
        seen.add(r.id)
    z0 = records[0].curve.z0
    if any(r.curve.z0 != z0 for r in records):
        raise DatabaseError("all LEDs must share one ceiling height z0")
    for rp in ref_points:
        if rp.world[2] != z0:
            raise DatabaseError(f"reference point {rp.world} is not on the ceiling z={z0}")
    return Database(z0=z0, records=records, ref_points=tuple(ref_points))


def lookup(db: Database, led_id: int) -> LedRecord:
    return db.lookup(led_id)


def to_document(db: Database) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "z0": db.z0,
        "leds": [
            {"id": int(r.id), "cx": r.curve.center_x, "cy": r.curve.center_y,
             "a": r.curve.a, "b": r.curve.b, "gamma": r.curve.gamma, "phi": r.curve.phi}
            for r in db.records
        ],
        "ref_points": [
            {"x": rp.world[0], "y": rp.world[1], "u": rp.pixel[0], "v": rp.pixel[1]}
            for rp in db.ref_points
        ],
    }


def from_document(doc: dict) -> Database:
    try:
        jsonschema.validate(doc, DATABASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"malformed LED database: {exc.message}") from None
    if doc["version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {doc['version']} (expected {SCHEMA_VERSION})")
    z0 = doc["z0"]
    records = []
    for led in doc["leds"]:
        try:
            curve = LameCurve(led["cx"], led["cy"], z0, led["a"], led["b"], led["gamma"], led["phi"])
        except GeometryError as exc:
            raise DatabaseError(f"LED {led['id']}: {exc}") from None
        records.append(LedRecord(led["id"], curve))
    ref_points = [RefPoint((rp["x"], rp["y"], z0), (rp["u"], rp["v"]))
                  for rp in doc.get("ref_points", [])]
    return build_database(records, ref_points)


def save(db: Database, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(to_document(db), indent=2) + "\n")


def load(path) -> Database:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return from_document(doc)


def table_one_database(shapes: Sequence[Mapping] | None = None, z0: float = 3.0) -> Database:
    """Four LEDs at the standard simulation positions.

    ``shapes`` gives per-LED ``a``, ``b``, ``gamma`` (and optionally ``phi``);
    the default is four 0.15 m circles.
    """
    centers = [(2.0, 2.0), (2.0, 6.0), (4.0, 2.0), (4.0, 6.0)]
    if shapes is None:
        shapes = [{"a": 0.15, "b": 0.15, "gamma": 2.0}] * 4
    records = [
        LedRecord(i + 1, LameCurve(cx, cy, z0, s["a"], s["b"], s["gamma"], s.get("phi", 0.0)))
        for i, ((cx, cy), s) in enumerate(zip(centers, shapes))
    ]
    return build_database(records)

