"""Observations, localization scenes and the ``obs.json`` document."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .camera import CameraIntrinsics
from .database import Database, LedRecord, RefPoint
from .exceptions import GeometryError, InsufficientObservationsError, SchemaError

MIN_CONTOUR_POINTS = 8

OBSERVATION_SCHEMA = {
    "type": "object",
    "required": ["intrinsics", "observations"],
    "properties": {
        "intrinsics": {
            "type": "object",
            "required": ["fx", "fy", "u0", "v0", "width", "height"],
        },
        "observations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "contour"],
                "properties": {
                    "id": {"type": "integer"},
                    "contour": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "number"},
                                  "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "ref_points": {
            "type": "array",
            "items": {"type": "object", "required": ["x", "y", "u", "v"]},
        },
    },
}


@dataclass(frozen=True)
class Observation:
    """One identified LED and its contour pixels in boundary order."""

    led_id: int
    contour: np.ndarray

    def __post_init__(self):
        contour = np.array(self.contour, dtype=float)
        if contour.ndim != 2 or contour.shape[1] != 2:
            raise GeometryError(f"contour must have shape (n, 2), got {contour.shape}")
        if len(contour) < MIN_CONTOUR_POINTS:
            raise GeometryError(
                f"LED {self.led_id}: contour has {len(contour)} points, need {MIN_CONTOUR_POINTS}")
        if not np.all(np.isfinite(contour)):
            raise GeometryError(f"LED {self.led_id}: non-finite contour point")
        contour.flags.writeable = False
        object.__setattr__(self, "contour", contour)


@dataclass(frozen=True)
class Scene:
    """Everything needed to localize one image."""

    intrinsics: CameraIntrinsics
    records: tuple[LedRecord, ...]
    observations: tuple[Observation, ...]
    ref_points: tuple[RefPoint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "ref_points", tuple(self.ref_points))
        if len(self.records) != len(self.observations):
            raise ValueError("records and observations must pair up one to one")
        for rec, obs in zip(self.records, self.observations):
            if rec.id != obs.led_id:
                raise ValueError(f"record {rec.id} paired with observation of LED {obs.led_id}")

    @property
    def z0(self) -> float:
        return self.records[0].curve.z0

    @classmethod
    def from_database(cls, db: Database, intrinsics: CameraIntrinsics,
                      observations: Sequence[Observation],
                      ref_points: Sequence[RefPoint] | None = None) -> "Scene":
        """Pair observations with database records; unknown ids raise UnknownLedError."""
        records = [db.lookup(obs.led_id) for obs in observations]
        if ref_points is None:
            ref_points = db.ref_points
        return cls(intrinsics, records, observations, ref_points)


def require_leds(scene: Scene, minimum: int = 2) -> None:
    if len(scene.observations) < minimum:
        raise InsufficientObservationsError(
            f"need at least {minimum} observed LEDs, got {len(scene.observations)}")


def intrinsics_to_dict(K: CameraIntrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "u0": K.u0, "v0": K.v0, "width": K.width, "height": K.height}


def observations_to_document(K: CameraIntrinsics, observations: Sequence[Observation],
                             ref_points: Sequence[RefPoint] = ()) -> dict:
    doc = {
        "intrinsics": intrinsics_to_dict(K),
        "observations": [{"id": int(o.led_id), "contour": o.contour.tolist()} for o in observations],
    }
    if ref_points:
        doc["ref_points"] = [{"x": rp.world[0], "y": rp.world[1], "u": rp.pixel[0], "v": rp.pixel[1]}
                             for rp in ref_points]
    return doc


def observations_from_document(doc: dict, z0: float | None = None):
    """Parse an observation document into ``(intrinsics, observations, ref_points)``.

    Reference points take their height from ``z0``; they are dropped if it is None.
    """
    try:
        jsonschema.validate(doc, OBSERVATION_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"malformed observation document: {exc.message}") from None
    K = CameraIntrinsics(**doc["intrinsics"])
    observations = [Observation(o["id"], o["contour"]) for o in doc["observations"]]
    ref_points = []
    if z0 is not None:
        ref_points = [RefPoint((rp["x"], rp["y"], z0), (rp["u"], rp["v"]))
                      for rp in doc.get("ref_points", [])]
    return K, observations, ref_points


def save_observations(path, K, observations, ref_points=()) -> None:
    Path(path).write_text(json.dumps(observations_to_document(K, observations, ref_points)) + "\n")


def load_observations(path, z0: float | None = None):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return observations_from_document(doc, z0)
