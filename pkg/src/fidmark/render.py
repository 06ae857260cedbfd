"""Synthetic image sequences of markers under known camera trajectories.

Replaces recorded test videos: every frame comes with exact ground truth,
so detector and classifier claims are checkable without a physical rig.
Rendering is inverse-mapping: each (supersampled) output pixel is
undistorted to a ray, intersected with the marker plane, and looked up in
the marker artwork. Deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .geometry import (CameraIntrinsics, GeometryError, Pose, Quaternion,
                       project_points, undistort_pixels)
from .marker import MarkerSpec, encode_id, marker_colors
from .trace import PoseTrace, TraceRecord


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerPlacement:
    """A marker on the scene plane (z=0, facing +z), meters and radians."""

    spec: MarkerSpec
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0


@dataclass(frozen=True)
class Scene:
    markers: tuple
    ambient: float = 1.0

    def __post_init__(self):
        ms = tuple(self.markers)
        object.__setattr__(self, "markers", ms)
        for i, a in enumerate(ms):
            for b in ms[i + 1:]:
                if math.hypot(a.x - b.x, a.y - b.y) \
                        < a.spec.radius + b.spec.radius:
                    raise RenderError("markers overlap in the scene plane")
        if not 0.0 < self.ambient <= 1.0:
            raise RenderError("ambient must be in (0, 1]")

    @classmethod
    def single(cls, spec: MarkerSpec, yaw: float = 0.0) -> "Scene":
        return cls(markers=(MarkerPlacement(spec=spec, yaw=yaw),))

    @classmethod
    def bundle(cls, ids=(1, 3, 5), diameter: float = 0.123,
               spacing: float = 0.25) -> "Scene":
        """Triangular coplanar arrangement for the plane-regression variant."""
        placements = []
        for k, id_ in enumerate(ids):
            ang = math.pi / 2 + 2 * math.pi * k / len(ids)
            placements.append(MarkerPlacement(
                spec=MarkerSpec(id=id_, diameter=diameter),
                x=spacing * math.cos(ang), y=spacing * math.sin(ang)))
        return cls(markers=tuple(placements))


TRAJECTORY_KINDS = ("static", "orbit-east-west", "orbit-north-south",
                    "in-out", "pan-tilt")


@dataclass(frozen=True)
class Trajectory:
    """Camera path aimed at the scene, parameterized per kind.

    distance/distance_end in meters; sweep is the maximum angular swing of
    orbit kinds (radians); deflection tilts the viewpoint off the plane
    normal; aim_sweep moves the look-at point for pan-tilt (meters).
    """

    kind: str
    duration: float = 3.0
    rate: float = 10.0
    distance: float = 2.0
    distance_end: float | None = None
    sweep: float = math.radians(25)
    deflection: float = 0.0
    aim_sweep: float = 0.15

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise RenderError(f"unknown trajectory kind {self.kind!r}; "
                              f"choose from {TRAJECTORY_KINDS}")
        if self.duration <= 0 or self.rate <= 0:
            raise RenderError("duration and rate must be positive")

    @property
    def n_frames(self) -> int:
        return max(2, int(round(self.duration * self.rate)))

    def camera_at(self, t: float):
        """(camera position, look-at point) in world coordinates at time t."""
        T = self.duration
        d = self.distance
        aim = np.zeros(3)
        defl = self.deflection
        if self.kind == "static":
            pos = _on_sphere(d, defl, 0.0)
        elif self.kind == "orbit-east-west":
            phi = -self.sweep * math.sin(math.pi * t / T)
            pos = _on_sphere(d, phi, 0.0, base_deflection=defl)
        elif self.kind == "orbit-north-south":
            phi = -self.sweep * math.sin(math.pi * t / T)
            pos = _on_sphere(d, defl, phi)
        elif self.kind == "in-out":
            d1 = self.distance_end if self.distance_end is not None else d + 1.0
            dd = d + (d1 - d) * (t / T)
            pos = _on_sphere(dd, defl, 0.0)
        else:  # pan-tilt
            pos = _on_sphere(d, defl, 0.0)
            aim = np.array([self.aim_sweep * math.sin(2 * math.pi * t / T),
                            self.aim_sweep * math.cos(2 * math.pi * t / T),
                            0.0])
        return pos, aim

    def to_dict(self) -> dict:
        return asdict(self)


def _on_sphere(distance: float, east: float, north: float,
               base_deflection: float = 0.0) -> np.ndarray:
    """Camera position at angular offsets (east, north) from the plane normal."""
    e = east + 0.0
    n = north
    x = math.sin(e) * math.cos(n)
    y = math.sin(n)
    z = math.cos(e) * math.cos(n)
    p = distance * np.array([x, y, z])
    if base_deflection:
        # tilt the whole arc eastwards
        c, s = math.cos(base_deflection), math.sin(base_deflection)
        p = np.array([c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]])
    return p


def look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` aiming at
    ``target``, image x to the camera's right, image y down, world up +y."""
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(-up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise RenderError("camera forward axis parallel to world up")
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z])  # rows: camera axes in world coords


@dataclass(frozen=True)
class GroundTruthRecord:
    """Exact per-frame, per-marker truth mirrored into trace-record fields."""

    frame: int
    t: float
    id: int
    position: tuple        # camera frame, meters
    quaternion: tuple      # (w, x, y, z), marker -> camera
    e: float
    n: float
    u: float
    un: float
    vn: float

    def pose(self) -> Pose:
        return Pose(position=np.array(self.position),
                    orientation=Quaternion(*self.quaternion))


def marker_pose_in_camera(placement: MarkerPlacement, cam_pos: np.ndarray,
                          r_wc: np.ndarray):
    """(t, R) of the marker frame in the camera frame."""
    yaw = placement.yaw
    r_wm = np.array([[math.cos(yaw), -math.sin(yaw), 0.0],
                     [math.sin(yaw), math.cos(yaw), 0.0],
                     [0.0, 0.0, 1.0]])
    m_pos = np.array([placement.x, placement.y, 0.0])
    t = r_wc @ (m_pos - cam_pos)
    r_cm = r_wc @ r_wm
    return t, r_cm


def _ray_grid(cam: CameraIntrinsics, supersample: int) -> np.ndarray:
    """Normalized rays for every supersampled pixel, shape (H*s, W*s, 3)."""
    s = supersample
    us = (np.arange(cam.width * s) + 0.5) / s - 0.5
    vs = (np.arange(cam.height * s) + 0.5) / s - 0.5
    uu, vv = np.meshgrid(us, vs)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    rays = undistort_pixels(uv, cam)
    return rays.reshape(cam.height * s, cam.width * s, 3)


_RAY_CACHE: dict = {}


def _cached_rays(cam: CameraIntrinsics, supersample: int) -> np.ndarray:
    key = (cam, supersample)
    if key not in _RAY_CACHE:
        if len(_RAY_CACHE) > 8:
            _RAY_CACHE.clear()
        _RAY_CACHE[key] = _ray_grid(cam, supersample)
    return _RAY_CACHE[key]


def _marker_pixel_bbox(scene, cam_pos, r_wc, cam, margin: int = 6):
    """Union pixel bbox of all marker outlines, clamped to the image."""
    uvs = []
    ang = np.linspace(0, 2 * math.pi, 24, endpoint=False)
    for pl in scene.markers:
        ring = np.stack([pl.x + pl.spec.radius * 1.05 * np.cos(ang),
                         pl.y + pl.spec.radius * 1.05 * np.sin(ang),
                         np.zeros_like(ang)], axis=1)
        pts_c = (ring - cam_pos) @ r_wc.T
        uvs.append(project_points(pts_c, cam))
    uv = np.concatenate(uvs)
    c0 = max(0, int(uv[:, 0].min()) - margin)
    c1 = min(cam.width, int(uv[:, 0].max()) + margin + 1)
    r0 = max(0, int(uv[:, 1].min()) - margin)
    r1 = min(cam.height, int(uv[:, 1].max()) + margin + 1)
    return r0, r1, c0, c1


def render_frame(scene: Scene, cam_pos: np.ndarray, r_wc: np.ndarray,
                 cam: CameraIntrinsics, supersample: int = 2) -> np.ndarray:
    """One grayscale frame (float 0..255, no noise) by plane intersection.

    Only the pixel region covered by markers is ray-traced; the rest is
    background white.
    """
    rays = _cached_rays(cam, supersample)
    ss = supersample
    r0, r1, c0, c1 = _marker_pixel_bbox(scene, cam_pos, r_wc, cam)
    img = np.full((cam.height, cam.width), 255.0 * scene.ambient)
    if r1 <= r0 or c1 <= c0:
        return img
    sub = rays[r0 * ss:r1 * ss, c0 * ss:c1 * ss].reshape(-1, 3)
    d_w = sub @ r_wc  # equals R_wc^T applied to each camera-frame ray
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -cam_pos[2] / d_w[:, 2]
    valid = (d_w[:, 2] != 0) & (s > 0)
    pts = cam_pos[None, :2] + s[:, None] * d_w[:, :2]
    color = np.ones(d_w.shape[0])
    for pl in scene.markers:
        local = pts - np.array([pl.x, pl.y])
        if pl.yaw:
            c, sn = math.cos(pl.yaw), math.sin(pl.yaw)
            # rotate by -yaw into the marker's own frame
            local = local @ np.array([[c, -sn], [sn, c]])
        inside = valid & (np.hypot(local[:, 0], local[:, 1])
                          <= pl.spec.radius)
        if np.any(inside):
            color[inside] = marker_colors(local[inside], pl.spec)
    patch = (color * 255.0 * scene.ambient).reshape((r1 - r0) * ss,
                                                    (c1 - c0) * ss)
    if ss > 1:
        patch = patch.reshape(r1 - r0, ss, c1 - c0, ss).mean(axis=(1, 3))
    img[r0:r1, c0:c1] = patch
    return img


def render_sequence(scene: Scene, traj: Trajectory, cam: CameraIntrinsics,
                    noise_sigma: float = 0.0, blur_radius: float = 0.0,
                    seed: int = 0, supersample: int = 2):
    """Render all frames and exact ground truth.

    Returns (frames, records): frames are uint8 arrays in trajectory
    order; records are GroundTruthRecords, one per frame per marker.
    Raises if any marker ever leaves the image, naming the first
    offending frame.
    """
    rng = np.random.default_rng(seed)
    frames = []
    records = []
    n = traj.n_frames
    dt = 1.0 / traj.rate
    for i in range(n):
        t = i * dt
        cam_pos, aim = traj.camera_at(t)
        r_wc = look_at(cam_pos, aim)
        _check_in_frame(scene, cam_pos, r_wc, cam, frame=i)
        img = render_frame(scene, cam_pos, r_wc, cam, supersample)
        if blur_radius > 0:
            img = gaussian_filter(img, sigma=blur_radius)
        if noise_sigma > 0:
            img = img + rng.normal(0.0, noise_sigma, size=img.shape)
        frames.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
        for pl in scene.markers:
            tvec, r_cm = marker_pose_in_camera(pl, cam_pos, r_wc)
            enu = r_cm.T @ tvec
            uv = project_points(tvec[None, :], cam)[0]
            records.append(GroundTruthRecord(
                frame=i, t=t, id=pl.spec.id,
                position=tuple(tvec),
                quaternion=tuple(Quaternion.from_matrix(r_cm).as_array()),
                e=float(enu[0]), n=float(enu[1]), u=float(enu[2]),
                un=float((2 * uv[0] - cam.width) / cam.width),
                vn=float((2 * uv[1] - cam.height) / cam.height)))
    return frames, records


def _check_in_frame(scene, cam_pos, r_wc, cam, frame: int,
                    margin: float = 1.0):
    for pl in scene.markers:
        ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
        ring = np.stack([pl.x + pl.spec.radius * np.cos(ang),
                         pl.y + pl.spec.radius * np.sin(ang),
                         np.zeros_like(ang)], axis=1)
        pts_c = (ring - cam_pos) @ r_wc.T
        if np.any(pts_c[:, 2] <= 0):
            raise RenderError(
                f"marker {pl.spec.id} behind camera at frame {frame}")
        uv = project_points(pts_c, cam)
        if (np.any(uv < margin)
                or np.any(uv[:, 0] > cam.width - 1 - margin)
                or np.any(uv[:, 1] > cam.height - 1 - margin)):
            raise RenderError(
                f"marker {pl.spec.id} leaves the frame at frame {frame}")


def ground_truth_trace(records, case: str, marker_id: int | None = None,
                       system: str = "ground-truth") -> PoseTrace:
    """Assemble a PoseTrace from ground-truth records of one marker."""
    trace = PoseTrace(system=system, case=case)
    for r in records:
        if marker_id is not None and r.id != marker_id:
            continue
        trace.append(TraceRecord(
            frame=r.frame, t=r.t, id=r.id, e=r.e, n=r.n, u=r.u,
            qw=r.quaternion[0], qx=r.quaternion[1], qy=r.quaternion[2],
            qz=r.quaternion[3], un=r.un, vn=r.vn))
    return trace


def inject_flips(trace: PoseTrace, k: int, seed: int = 0) -> PoseTrace:
    """Toggle the ambiguity twin at k random points of a trace.

    Each toggle mirrors the pose to the other candidate from that record
    onward: the east/north target components flip sign (up and all
    magnitudes preserved) and the orientation jumps by pi, i.e. well above
    any sane angular-speed threshold for one frame period. Toggle points
    are separated by at least 2 records, so a classifier that flags frame
    pairs sees exactly k discontinuities.
    """
    if k <= 0:
        return PoseTrace(system=trace.system, case=trace.case,
                         records=list(trace.records))
    n = len(trace.records)
    if n <= 2 * k:
        raise ValueError("trace too short for requested flip count")
    rng = np.random.default_rng(seed)
    candidates = np.arange(1, n - 1)
    while True:
        idx = np.sort(rng.choice(candidates, size=k, replace=False))
        if k == 1 or np.min(np.diff(idx)) >= 2:
            break
    flipped = []
    state = False
    toggles = set(int(i) for i in idx)
    for i, r in enumerate(trace.records):
        if i in toggles:
            state = not state
        if state:
            q = r.quaternion() * Quaternion.from_axis_angle([0, 0, 1], math.pi)
            flipped.append(TraceRecord(
                frame=r.frame, t=r.t, id=r.id, e=-r.e, n=-r.n, u=r.u,
                qw=q.w, qx=q.x, qy=q.y, qz=q.z, un=r.un, vn=r.vn,
                solution="B" if r.solution == "A" else "A",
                var_a=r.var_a, var_b=r.var_b))
        else:
            flipped.append(r)
    return PoseTrace(system=trace.system, case=trace.case, records=flipped)


def save_sequence(out_dir, frames, records, cam: CameraIntrinsics,
                  rate: float, seed: int, case: str = "case") -> None:
    """Write numbered PNGs, a JSON manifest, and ground-truth JSONL."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(frames):
        name = f"frame_{i:05d}.png"
        Image.fromarray(f, mode="L").save(out / name)
        names.append(name)
    manifest = {
        "case": case,
        "frame_rate": rate,
        "seed": seed,
        "frames": names,
        "intrinsics": cam.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    with (out / "ground_truth.jsonl").open("w") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def load_sequence(in_dir):
    """Read a sequence directory -> (frames, manifest dict, camera)."""
    in_dir = Path(in_dir)
    mpath = in_dir / "manifest.json"
    if not mpath.exists():
        raise RenderError(f"missing manifest: {mpath}")
    manifest = json.loads(mpath.read_text())
    cam = CameraIntrinsics.from_dict(manifest["intrinsics"])
    frames = []
    for name in manifest["frames"]:
        fp = in_dir / name
        if not fp.exists():
            raise RenderError(f"missing frame listed in manifest: {fp}")
        frames.append(np.asarray(Image.open(fp).convert("L")))
    return frames, manifest, cam


def load_ground_truth(in_dir):
    path = Path(in_dir) / "ground_truth.jsonl"
    records = []
    with path.open() as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                d["position"] = tuple(d["position"])
                d["quaternion"] = tuple(d["quaternion"])
                records.append(GroundTruthRecord(**d))
    return records
