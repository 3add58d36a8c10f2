import math
from dataclasses import replace

import numpy as np
import pytest

from lamepose.camera import CameraIntrinsics, Pose
from lamepose.database import table_one_database
from lamepose.simulation import (
    pose_from_orientation,
    sample_pose,
    scenario_preset,
    synthesize_scene,
    trial_rng,
)


def make_scene(scenario="A", seed=0, index=0, noise_std=0.0, **overrides):
    """A random feasible scene and its true pose."""
    cfg = replace(scenario_preset(scenario), noise_std=noise_std, **overrides)
    rng = trial_rng(seed, index)
    pose = sample_pose(cfg, rng)
    return synthesize_scene(cfg, pose, rng), pose


def level_pose(x=3.0, y=4.0, height=1.5, roll=0.0):
    return pose_from_orientation([x, y, height], 0.0, 0.0, roll)


@pytest.fixture
def scene_factory():
    return make_scene


@pytest.fixture
def table_db():
    return table_one_database()


@pytest.fixture
def sim_camera():
    return CameraIntrinsics.simulation()
