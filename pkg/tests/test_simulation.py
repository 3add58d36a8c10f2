import csv
import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import level_pose
from lamepose.camera import CameraIntrinsics, back_project_to_plane, camera_center, project, rodrigues_to_matrix
from lamepose.exceptions import GeometryError, InfeasibleScenarioError, NotVisibleError, SimulationAbortedError
from lamepose.geometry import algebraic_distance, polyline
from lamepose.simulation import (
    PoseSampler,
    ScenarioConfig,
    TRIALS_HEADER,
    empirical_cdf,
    position_error,
    rotation_error,
    run_monte_carlo,
    run_trial,
    sample_pose,
    scenario_preset,
    summary_document,
    summary_json,
    synthesize_contour,
    trial_rng,
    trials_csv,
    visible_records,
)


class TestPresets:
    def test_a(self):
        cfg = scenario_preset("A")
        assert [(r.curve.center_x, r.curve.center_y) for r in cfg.database] == [(2, 2), (2, 6), (4, 2), (4, 6)]
        assert all(r.curve.a == r.curve.b == 0.15 and r.curve.gamma == 2 for r in cfg.database)
        assert cfg.room == (6.0, 8.0, 3.0) and cfg.noise_std == 2.0

    def test_b(self):
        assert all((r.curve.a, r.curve.b, r.curve.gamma) == (0.15, 0.12, 100.0)
                   for r in scenario_preset("B").database)

    def test_c_variants(self):
        assert {r.curve.gamma for r in scenario_preset("C").database} == {1.0}
        assert {r.curve.gamma for r in scenario_preset("C-ellipse").database} == {2.0}
        sq = scenario_preset("C-square").database.lookup(1).curve
        assert (sq.a, sq.b, sq.gamma) == (0.15, 0.15, 1.0)

    def test_d(self):
        gammas = [r.curve.gamma for r in scenario_preset("D").database]
        assert gammas == [1.0, 2.0, 2.0, 100.0]
        shapes = {(r.curve.a, r.curve.b, r.curve.gamma) for r in scenario_preset("D").database}
        assert len(shapes) == 4

    def test_unknown(self):
        with pytest.raises(GeometryError):
            scenario_preset("Z")

    @pytest.mark.parametrize("kw", [dict(noise_std=-1), dict(trials=0), dict(min_visible_leds=1),
                                    dict(led_scale=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(GeometryError):
            replace(scenario_preset("A"), **kw)

    def test_dict_round_trip(self):
        cfg = replace(scenario_preset("D"), trials=17, seed=5, pose_sampler=PoseSampler(height_range=(1.0, 1.2)))
        back = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_partial_dict_uses_preset(self):
        cfg = ScenarioConfig.from_dict({"scenario": "B", "trials": 3})
        assert cfg.trials == 3 and cfg.database == scenario_preset("B").database

    def test_unknown_field(self):
        with pytest.raises(GeometryError):
            ScenarioConfig.from_dict({"scenario": "A", "colour": "red"})

    def test_led_scale(self):
        db = replace(scenario_preset("B"), led_scale=0.5).effective_database()
        assert all((r.curve.a, r.curve.b) == (0.075, 0.06) for r in db)


class TestPoseSampling:
    def test_room_centre_sees_all_leds(self):
        cfg = scenario_preset("A")
        assert len(visible_records(cfg.database, level_pose(3.0, 4.0, 1.5), cfg.camera)) == 4

    def test_zero_tilt_looks_straight_up(self):
        cfg = replace(scenario_preset("A"), pose_sampler=PoseSampler(max_tilt_deg=0.0))
        for k in range(20):
            R = sample_pose(cfg, trial_rng(1, k)).rotation
            np.testing.assert_allclose(R[2], [0, 0, 1], atol=1e-15)

    def test_envelope(self):
        cfg = scenario_preset("A")
        for k in range(50):
            pose = sample_pose(cfg, trial_rng(2, k))
            c = camera_center(pose)
            assert 0.5 <= c[0] <= 5.5 and 0.5 <= c[1] <= 7.5 and 0.8 <= c[2] <= 1.8
            tilt = math.degrees(math.acos(np.clip(pose.rotation[2, 2], -1, 1)))
            assert tilt <= 30 + 1e-9
            assert len(visible_records(cfg.database, pose, cfg.camera)) >= 2

    def test_replay(self):
        cfg = scenario_preset("D")
        a = [sample_pose(cfg, trial_rng(9, k)) for k in range(5)]
        b = [sample_pose(cfg, trial_rng(9, k)) for k in range(5)]
        assert a == b

    def test_small_frame_is_infeasible(self):
        cfg = replace(scenario_preset("A"), camera=CameraIntrinsics.table_one())
        with pytest.raises(InfeasibleScenarioError):
            sample_pose(cfg, trial_rng(0, 0))


class TestContours:
    def setup_method(self):
        self.cfg = scenario_preset("D")
        self.pose = level_pose(3.0, 4.0, 1.5)
        self.K = self.cfg.camera

    def test_noise_free_points_are_on_the_curve(self):
        for rec in self.cfg.database:
            obs = synthesize_contour(rec, self.pose, self.K, 0.0, 1.0, np.random.default_rng(0))
            pts = np.array([back_project_to_plane(self.K, self.pose, u, 3.0) for u in obs.contour])
            assert np.max(np.abs(algebraic_distance(rec.curve, pts))) < 1e-9

    def test_noise_rms(self):
        rec = self.cfg.database.lookup(3)
        clean = synthesize_contour(rec, self.pose, self.K, 0.0, 200.0, np.random.default_rng(4))
        noisy = synthesize_contour(rec, self.pose, self.K, 2.0, 200.0, np.random.default_rng(4))
        assert len(noisy.contour) >= 1e5
        rms = math.sqrt(np.mean(np.sum((noisy.contour - clean.contour) ** 2, axis=1)))
        assert rms == pytest.approx(2 * math.sqrt(2), rel=0.05)

    def test_density_matches_projected_perimeter(self):
        rec = self.cfg.database.lookup(3)
        dense = project(self.K, self.pose, polyline(rec.curve, 20000))
        length = np.sum(np.linalg.norm(np.diff(np.vstack([dense, dense[:1]]), axis=0), axis=1))
        obs = synthesize_contour(rec, self.pose, self.K, 0.0, 1.0, np.random.default_rng(1))
        assert len(obs.contour) == pytest.approx(length, rel=0.01)

    def test_floor_on_point_count(self):
        rec = self.cfg.database.lookup(1)
        obs = synthesize_contour(rec, self.pose, self.K, 0.0, 0.01, np.random.default_rng(1))
        assert len(obs.contour) == 90

    def test_boundary_order(self):
        rec = self.cfg.database.lookup(2)
        c = synthesize_contour(rec, self.pose, self.K, 0.0, 1.0, np.random.default_rng(2)).contour
        steps = np.linalg.norm(np.diff(c, axis=0), axis=1)
        assert steps.max() < 3 * np.median(steps)

    def test_out_of_frame(self):
        far = level_pose(0.5, 7.5, 1.8)
        with pytest.raises(NotVisibleError):
            synthesize_contour(self.cfg.database.lookup(4), far, self.K, 0.0, 1.0, np.random.default_rng(0))


class TestMetrics:
    def test_position(self):
        assert position_error([0, 0, 0], [0, 0, 0]) == 0
        assert position_error([0, 0, 0], [3, 4, 0]) == 5

    def test_rotation(self):
        assert rotation_error(np.eye(3), np.eye(3)) == 0
        assert rotation_error(np.eye(3), rodrigues_to_matrix([0, 0, math.pi / 2])) == pytest.approx(90)
        assert rotation_error(np.eye(3), rodrigues_to_matrix([math.pi, 0, 0])) == pytest.approx(180)

    def test_cdf(self):
        assert empirical_cdf([0.04, 0.01, 0.03, 0.02]) == [(0.01, 0.25), (0.02, 0.5), (0.03, 0.75), (0.04, 1.0)]


class TestMonteCarlo:
    def test_noise_free(self):
        res = run_monte_carlo(replace(scenario_preset("A"), trials=20, noise_std=0.0))
        assert res.summary.mpe < 1e-4 and res.summary.mre < 0.01

    def test_statistics_consistency(self):
        res = run_monte_carlo(replace(scenario_preset("D"), trials=40, seed=3))
        s = res.summary
        assert s.succeeded + s.failed == s.trials == 40
        assert s.mpe >= 0 and s.std >= 0 and s.p50 <= s.p90 and s.r50 <= s.r90
        assert s.p50 <= s.mpe + 3 * s.std
        fr = [f for _, f in s.position_cdf]
        assert np.all(np.diff(fr) >= 0) and fr[-1] == 1.0
        assert s.mpe_ci95 == pytest.approx(1.96 * s.std / math.sqrt(s.succeeded))

    def test_worker_count_does_not_matter(self):
        cfg = replace(scenario_preset("B"), trials=12, seed=11)
        a = run_monte_carlo(cfg, workers=1)
        b = run_monte_carlo(cfg, workers=3)
        assert trials_csv(a.trials) == trials_csv(b.trials)
        assert summary_json(a) == summary_json(b)

    def test_single_trial_is_reproducible(self):
        cfg = scenario_preset("C-square")
        a, b = run_trial(cfg, 5), run_trial(cfg, 5)
        assert a.position_error == b.position_error and a.diagnostics == b.diagnostics

    def test_failures_abort(self):
        cfg = replace(scenario_preset("A"), trials=5, samples_per_led=5000)
        with pytest.raises(SimulationAbortedError):
            run_monte_carlo(cfg)
        res = run_monte_carlo(cfg, strict=False)
        assert res.summary.failed == 5 and res.summary.failure_codes == {"GeometryError": 5}
        assert math.isnan(res.summary.mpe)

    def test_result_files(self):
        res = run_monte_carlo(replace(scenario_preset("A"), trials=6, seed=4))
        rows = list(csv.reader(io.StringIO(trials_csv(res.trials))))
        assert rows[0] == TRIALS_HEADER
        assert [int(r[0]) for r in rows[1:]] == list(range(6))
        assert all(float(r[1]) == t.position_error for r, t in zip(rows[1:], res.trials))
        doc = json.loads(summary_json(res))
        assert doc["seed"] == 4 and doc["config"]["trials"] == 6
        assert {"mpe", "p50", "p90", "std", "mre", "r50", "r90", "failed", "succeeded"} <= set(doc)
        assert summary_document(res)["config"]["name"] == "A"
