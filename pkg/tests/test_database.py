import json
import math

import numpy as np
import pytest

from lamepose.camera import CameraIntrinsics
from lamepose.database import (
    SCHEMA_VERSION,
    Database,
    LedRecord,
    RefPoint,
    build_database,
    from_document,
    load,
    lookup,
    save,
    table_one_database,
    to_document,
)
from lamepose.exceptions import DatabaseError, GeometryError, SchemaError, UnknownLedError
from lamepose.geometry import LameCurve
from lamepose.scene import (
    Observation,
    Scene,
    load_observations,
    observations_from_document,
    observations_to_document,
    save_observations,
)


def rec(i, cx=0.0, cy=0.0, z0=3.0, **kw):
    args = dict(a=0.15, b=0.15, gamma=2.0, phi=0.0)
    args.update(kw)
    return LedRecord(i, LameCurve(cx, cy, z0, **args))


def square_contour(n=16, center=(100, 100), r=20):
    t = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])


class TestBuild:
    def test_table_one_layout(self):
        db = table_one_database()
        assert len(db) == 4
        centres = sorted((r.curve.center_x, r.curve.center_y) for r in db)
        assert centres == [(2, 2), (2, 6), (4, 2), (4, 6)]
        assert all(r.curve.z0 == 3.0 and r.curve.a == r.curve.b == 0.15 for r in db)

    def test_duplicate_id(self):
        with pytest.raises(DatabaseError, match="duplicate"):
            build_database([rec(7), rec(7, cx=1)])

    def test_empty(self):
        with pytest.raises(DatabaseError):
            build_database([])

    def test_mixed_ceiling(self):
        with pytest.raises(DatabaseError):
            build_database([rec(1), rec(2, z0=2.5)])

    def test_ref_point_off_ceiling(self):
        with pytest.raises(DatabaseError):
            build_database([rec(1)], [RefPoint((0, 0, 2.0), (1, 1))])


class TestLookup:
    def test_found(self):
        db = table_one_database()
        r = lookup(db, 1)
        assert (r.curve.center_x, r.curve.center_y) == (2, 2)
        assert 1 in db and 99 not in db

    def test_unknown(self):
        with pytest.raises(UnknownLedError):
            lookup(table_one_database(), 99)

    def test_unknown_is_a_key_error(self):
        with pytest.raises(KeyError):
            table_one_database().lookup(0)


class TestPersistence:
    def make(self):
        return build_database(
            [rec(3, 1.1, 2.2, a=0.2, b=0.1, gamma=100.0, phi=0.1 + 1e-13),
             rec(5, 0.1 / 3, 2 / 7, gamma=1.0)],
            [RefPoint((0.5, 0.25, 3.0), (100.5, 200.25))])

    def test_round_trip_is_exact(self, tmp_path):
        db = self.make()
        save(db, tmp_path / "led-db.json")
        back = load(tmp_path / "led-db.json")
        assert back == db
        assert lookup(back, 3) == lookup(db, 3)

    def test_document_fields(self):
        doc = to_document(self.make())
        assert doc["version"] == SCHEMA_VERSION
        assert set(doc["leds"][0]) == {"id", "cx", "cy", "a", "b", "gamma", "phi"}
        assert set(doc["ref_points"][0]) == {"x", "y", "u", "v"}

    def test_missing_gamma(self):
        doc = to_document(self.make())
        del doc["leds"][0]["gamma"]
        with pytest.raises(SchemaError):
            from_document(doc)

    def test_gamma_below_one(self):
        doc = to_document(self.make())
        doc["leds"][0]["gamma"] = 0.5
        with pytest.raises(DatabaseError):
            from_document(doc)

    def test_version_mismatch(self):
        doc = to_document(self.make())
        doc["version"] = SCHEMA_VERSION + 1
        with pytest.raises(SchemaError, match="version"):
            from_document(doc)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(SchemaError):
            load(p)

    def test_file_is_plain_json(self, tmp_path):
        save(table_one_database(), tmp_path / "db.json")
        assert json.loads((tmp_path / "db.json").read_text())["z0"] == 3.0


class TestObservation:
    def test_read_only_copy(self):
        c = square_contour()
        obs = Observation(1, c)
        c[0, 0] = -1
        assert obs.contour[0, 0] != -1
        with pytest.raises(ValueError):
            obs.contour[0, 0] = 5

    @pytest.mark.parametrize("contour", [np.zeros((7, 2)), np.zeros((10, 3)),
                                         np.full((10, 2), np.nan)])
    def test_invalid(self, contour):
        with pytest.raises(GeometryError):
            Observation(1, contour)


class TestScene:
    def test_from_database_pairs_records(self):
        db = table_one_database()
        K = CameraIntrinsics.table_one()
        scene = Scene.from_database(db, K, [Observation(4, square_contour()), Observation(2, square_contour())])
        assert [r.id for r in scene.records] == [4, 2]
        assert scene.z0 == 3.0

    def test_unknown_id(self):
        with pytest.raises(UnknownLedError):
            Scene.from_database(table_one_database(), CameraIntrinsics.table_one(),
                                [Observation(42, square_contour())])

    def test_mismatched_pairs(self):
        db = table_one_database()
        with pytest.raises(ValueError):
            Scene(CameraIntrinsics.table_one(), [db.lookup(1)], [Observation(2, square_contour())])


class TestObservationDocument:
    def test_round_trip(self, tmp_path):
        K = CameraIntrinsics.table_one()
        obs = [Observation(1, square_contour()), Observation(3, square_contour(center=(300, 200)))]
        rps = [RefPoint((1.0, 2.0, 3.0), (10.0, 20.0))]
        save_observations(tmp_path / "obs.json", K, obs, rps)
        K2, obs2, rps2 = load_observations(tmp_path / "obs.json", z0=3.0)
        assert K2 == K
        assert [o.led_id for o in obs2] == [1, 3]
        np.testing.assert_array_equal(obs2[1].contour, obs[1].contour)
        assert rps2 == rps

    def test_schema_violation(self):
        doc = observations_to_document(CameraIntrinsics.table_one(), [Observation(1, square_contour())])
        doc["observations"][0]["contour"][0] = [1, 2, 3]
        with pytest.raises(SchemaError):
            observations_from_document(doc)

    def test_ref_points_need_ceiling_height(self):
        doc = observations_to_document(CameraIntrinsics.table_one(), [Observation(1, square_contour())],
                                       [RefPoint((1.0, 2.0, 3.0), (10.0, 20.0))])
        assert observations_from_document(doc)[2] == []


def test_database_is_iterable_and_sized():
    db = table_one_database()
    assert isinstance(db, Database)
    assert db.ids == [1, 2, 3, 4]
    assert [r.id for r in db] == [1, 2, 3, 4]
