"""Shared fixtures: default camera, detector params, cached renders."""

import math

import numpy as np
import pytest

from fidmark.geometry import CameraIntrinsics
from fidmark.marker import MarkerSpec
from fidmark.render import Scene, Trajectory, render_sequence


@pytest.fixture(scope="session")
def cam():
    return CameraIntrinsics.from_fov(640, 480, 77.0)


@pytest.fixture(scope="session")
def frontal_sequence(cam):
    """Noise-free frontal marker (id 53) at 2 m, 5 frames."""
    scene = Scene.single(MarkerSpec(id=53, diameter=0.3))
    traj = Trajectory(kind="static", duration=0.5, rate=10.0, distance=2.0)
    return render_sequence(scene, traj, cam, seed=1)


@pytest.fixture(scope="session")
def oblique_sequence(cam):
    """Noise-free 30 degree view of marker id 53 at 1.5 m, 5 frames."""
    scene = Scene.single(MarkerSpec(id=53, diameter=0.3))
    traj = Trajectory(kind="static", duration=0.5, rate=10.0, distance=1.5,
                      deflection=math.radians(30))
    return render_sequence(scene, traj, cam, seed=1)


@pytest.fixture(scope="session")
def bundle_sequence(cam):
    """Noise-free 3-marker bundle at 20 degrees, 1 m, 3 frames."""
    scene = Scene.bundle(ids=(1, 3, 5))
    traj = Trajectory(kind="static", duration=0.3, rate=10.0, distance=1.0,
                      deflection=math.radians(20))
    return render_sequence(scene, traj, cam, seed=3)
