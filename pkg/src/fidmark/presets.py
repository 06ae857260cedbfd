"""Named synthetic test-case presets.

Two suites mirror the shape of the evaluation corpus: a 33-case
discontinuity suite (moving camera) and a 14-case detection-rate suite
(static viewpoints at several distances and deflections). Camera and
trajectory values are representative, not measured from any specific
hardware. The FIDMARK_SEED environment variable overrides preset seeds.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .geometry import CameraIntrinsics
from .marker import MarkerSpec
from .render import Scene, Trajectory, render_sequence

DEFAULT_NOISE_SIGMA = 8.0
DEFAULT_BLUR_RADIUS = 0.6
DEFAULT_CAMERA = CameraIntrinsics.from_fov(640, 480, 77.0)

_MARKER_IDS = (3, 53, 91)    # canonical 8-bit ids cycled across cases
_DIAMETER = 0.3


@dataclass(frozen=True)
class Preset:
    """One renderable test case: scene, camera path, and noise model."""

    name: str
    scene: Scene
    trajectory: Trajectory
    seed: int
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    blur_radius: float = DEFAULT_BLUR_RADIUS


def _scene(index: int) -> Scene:
    spec = MarkerSpec(id=_MARKER_IDS[index % len(_MARKER_IDS)],
                      diameter=_DIAMETER)
    return Scene.single(spec)


def _discontinuity_suite() -> tuple:
    """33 moving-camera cases: 4 kinds x 3 distances x 2 deflections,
    plus 9 deflected statics (calibration-z series)."""
    presets = []
    idx = 0
    for kind, short in (("orbit-east-west", "east-west"),
                        ("orbit-north-south", "north-south"),
                        ("in-out", "in-out"),
                        ("pan-tilt", "pan-tilt")):
        for dist in (1.0, 1.5, 2.0):
            for tag, defl in (("a", 0.15), ("b", 0.35)):
                kwargs = dict(kind=kind, duration=1.6, rate=10.0,
                              distance=dist, deflection=defl)
                if kind == "in-out":
                    kwargs["distance_end"] = dist + 1.0
                presets.append(Preset(
                    name=f"{short}-{dist:g}{tag}",
                    scene=_scene(idx),
                    trajectory=Trajectory(**kwargs),
                    seed=1000 + idx))
                idx += 1
    for k in range(9):
        dist = 1.0 + 0.25 * k
        presets.append(Preset(
            name=f"calibration-z{dist:.2f}",
            scene=_scene(idx),
            trajectory=Trajectory(kind="static", duration=1.2, rate=10.0,
                                  distance=dist, deflection=0.25),
            seed=1000 + idx))
        idx += 1
    assert len(presets) == 33
    return tuple(presets)


def _rate_suite() -> tuple:
    """14 static cases across distances and deflections."""
    presets = []
    idx = 0
    for dist in (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0):
        for tag, defl in (("a", 0.0), ("b", 0.3)):
            presets.append(Preset(
                name=f"rate-{dist:g}{tag}",
                scene=_scene(idx),
                trajectory=Trajectory(kind="static", duration=1.0,
                                      rate=10.0, distance=dist,
                                      deflection=defl),
                seed=2000 + idx))
            idx += 1
    assert len(presets) == 14
    return tuple(presets)


DISCONTINUITY_SUITE = _discontinuity_suite()
RATE_SUITE = _rate_suite()

# Convenience aliases for quick manual runs.
_ALIASES = (
    Preset(name="east-west",
           scene=Scene.single(MarkerSpec(id=3, diameter=_DIAMETER)),
           trajectory=Trajectory(kind="orbit-east-west", duration=3.0,
                                 rate=10.0, distance=1.5),
           seed=7, noise_sigma=0.0, blur_radius=0.0),
    Preset(name="static-2m",
           scene=Scene.single(MarkerSpec(id=3, diameter=_DIAMETER)),
           trajectory=Trajectory(kind="static", duration=2.0, rate=10.0,
                                 distance=2.0),
           seed=7, noise_sigma=0.0, blur_radius=0.0),
)

PRESETS = {p.name: p for p in (*DISCONTINUITY_SUITE, *RATE_SUITE, *_ALIASES)}


def get_preset(name: str) -> Preset:
    if name not in PRESETS:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]


def preset_seed(preset: Preset, override: int | None = None) -> int:
    """Effective seed: explicit override > FIDMARK_SEED env > preset value."""
    if override is not None:
        return int(override)
    env = os.environ.get("FIDMARK_SEED")
    if env is not None:
        return int(env)
    return preset.seed


def render_preset(preset: Preset, seed: int | None = None,
                  cam: CameraIntrinsics | None = None):
    """Render one preset; returns (frames, ground-truth records, camera)."""
    cam = cam or DEFAULT_CAMERA
    frames, records = render_sequence(
        preset.scene, preset.trajectory, cam,
        noise_sigma=preset.noise_sigma, blur_radius=preset.blur_radius,
        seed=preset_seed(preset, seed))
    return frames, records, cam
