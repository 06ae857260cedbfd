"""Rotation, camera, conic, and plane math shared by the whole toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_UNIT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs."""


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). Normalized on construction."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n < _UNIT_TOL:
            raise GeometryError("zero-norm quaternion")
        if abs(n - 1.0) > _UNIT_TOL:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < _UNIT_TOL:
            raise GeometryError("zero-norm rotation axis")
        axis = axis / n
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_matrix(cls, m) -> "Quaternion":
        m = np.asarray(m, dtype=float)
        # Shepperd's method: pick the largest diagonal combination.
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            return cls((s / 4), (m[2, 1] - m[1, 2]) / s,
                       (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            return cls((m[2, 1] - m[1, 2]) / s, s / 4,
                       (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                       s / 4, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                   (m[1, 2] + m[2, 1]) / s, s / 4)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: marker frame -> camera frame."""

    position: np.ndarray  # meters, camera frame
    orientation: Quaternion

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with 5-coefficient plumb-bob distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float,
                 **dist) -> "CameraIntrinsics":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height, **dist)

    def distortion(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "k1": self.k1, "k2": self.k2, "p1": self.p1, "p2": self.p2,
            "k3": self.k3,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**d)


@dataclass(frozen=True)
class Ellipse:
    """Image ellipse: center in pixels, semi-axes a >= b, angle in [0, pi)."""

    u: float
    v: float
    a: float
    b: float
    angle: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise GeometryError("ellipse requires a >= b > 0")
        object.__setattr__(self, "angle", self.angle % math.pi)

    def boundary(self, n: int = 64) -> np.ndarray:
        """n points on the ellipse outline, shape (n, 2)."""
        t = np.linspace(0, 2 * math.pi, n, endpoint=False)
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        x = self.a * np.cos(t)
        y = self.b * np.sin(t)
        return np.stack([self.u + ca * x - sa * y,
                         self.v + sa * x + ca * y], axis=1)

    def point_at(self, t: float) -> tuple[float, float]:
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        x = self.a * math.cos(t)
        y = self.b * math.sin(t)
        return self.u + ca * x - sa * y, self.v + sa * x + ca * y

    def scaled(self, factor: float) -> "Ellipse":
        return Ellipse(self.u, self.v, self.a * factor, self.b * factor,
                       self.angle)


@dataclass(frozen=True)
class Plane:
    """Plane normal . p = offset with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if abs(nn - 1.0) > 1e-6:
            raise GeometryError("plane normal must be unit length")
        object.__setattr__(self, "normal", n / nn)

    def distance(self, p) -> float:
        return float(self.normal @ np.asarray(p, dtype=float) - self.offset)


def geodesic_distance(q1: Quaternion, q2: Quaternion) -> float:
    """Rotation angle between two orientations, in [0, pi].

    Uses the full-angle convention d = 2*acos(|<q1,q2>|), so a 180 degree
    flip costs pi. Sign-flip invariant (q and -q are the same rotation).
    """
    dot = abs(float(q1.as_array() @ q2.as_array()))
    return 2.0 * math.acos(min(1.0, dot))


def ypr_to_quaternion(yaw: float, pitch: float, roll: float) -> Quaternion:
    """Intrinsic Z-Y-X Tait-Bryan angles to quaternion."""
    return (Quaternion.from_axis_angle([0, 0, 1], yaw)
            * Quaternion.from_axis_angle([0, 1, 0], pitch)
            * Quaternion.from_axis_angle([1, 0, 0], roll))


def quaternion_to_ypr(q: Quaternion) -> tuple[float, float, float]:
    """Quaternion to intrinsic Z-Y-X (yaw, pitch, roll).

    At gimbal lock (|pitch| = pi/2) roll is fixed to 0 and yaw absorbs
    the remaining freedom.
    """
    w, x, y, z = q.w, q.x, q.y, q.z
    sp = 2.0 * (w * y - z * x)
    if abs(sp) >= 1.0 - 1e-12:
        # Gimbal lock: roll fixed to 0, yaw absorbs the free angle.
        return 2.0 * math.atan2(z, w), math.copysign(math.pi / 2, sp), 0.0
    pitch = math.asin(sp)
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return yaw, pitch, roll


def project_point(p, cam: CameraIntrinsics) -> tuple[float, float]:
    """Project a 3D camera-frame point (z > 0) to distorted pixels."""
    p = np.asarray(p, dtype=float).reshape(3)
    if p[2] <= 0:
        raise GeometryError("point behind camera (z <= 0)")
    x, y = p[0] / p[2], p[1] / p[2]
    xd, yd = _distort(np.array([x]), np.array([y]), cam)
    return float(cam.fx * xd[0] + cam.cx), float(cam.fy * yd[0] + cam.cy)


def project_points(pts, cam: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection, pts shape (n, 3) with all z > 0."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if np.any(pts[:, 2] <= 0):
        raise GeometryError("point behind camera (z <= 0)")
    x = pts[:, 0] / pts[:, 2]
    y = pts[:, 1] / pts[:, 2]
    xd, yd = _distort(x, y, cam)
    return np.stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy], axis=1)


def _distort(x: np.ndarray, y: np.ndarray, cam: CameraIntrinsics):
    r2 = x * x + y * y
    radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2 + cam.k3 * r2 * r2 * r2
    xd = x * radial + 2 * cam.p1 * x * y + cam.p2 * (r2 + 2 * x * x)
    yd = y * radial + cam.p1 * (r2 + 2 * y * y) + 2 * cam.p2 * x * y
    return xd, yd


def undistort_pixel(uv, cam: CameraIntrinsics, max_iter: int = 20) -> np.ndarray:
    """Pixel to normalized ray (x, y, 1) by fixed-point distortion inversion."""
    ray = undistort_pixels(np.asarray(uv, dtype=float).reshape(1, 2), cam,
                           max_iter=max_iter)
    return ray[0]


def undistort_pixels(uv: np.ndarray, cam: CameraIntrinsics,
                     max_iter: int = 20) -> np.ndarray:
    """Vectorized undistortion, uv shape (n, 2) -> rays (n, 3)."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    xd = (uv[:, 0] - cam.cx) / cam.fx
    yd = (uv[:, 1] - cam.cy) / cam.fy
    x, y = xd.copy(), yd.copy()
    if np.any(cam.distortion() != 0):
        for _ in range(max_iter):
            xt, yt = _distort(x, y, cam)
            x += xd - xt
            y += yd - yt
        xt, yt = _distort(x, y, cam)
        resid = np.hypot(xt - xd, yt - yd)
        if np.any(resid > 1e-8):
            raise GeometryError(
                f"undistortion did not converge (max residual {resid.max():.3g})")
    return np.stack([x, y, np.ones_like(x)], axis=1)


def fit_plane(points) -> Plane:
    """Total-least-squares plane through >= 3 non-collinear points.

    The normal is the eigenvector of the smallest eigenvalue of the
    centered covariance, oriented camera-facing (normal.z < 0).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise GeometryError("plane fit requires at least 3 points")
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    # Collinear points: two near-zero eigenvalues.
    if evals[1] <= max(evals[2], 1e-30) * 1e-10:
        raise GeometryError("degenerate plane fit: points are collinear")
    normal = evecs[:, 0]
    if normal[2] > 0:
        normal = -normal
    return Plane(normal=normal, offset=float(normal @ centroid))


@dataclass(frozen=True)
class CirclePose:
    """Two-fold ambiguous pose of a 3D circle recovered from its image conic."""

    position: np.ndarray      # circle center, camera frame (mean of the pair)
    normal_a: np.ndarray      # camera-facing unit normals, n . position < 0
    normal_b: np.ndarray
    axis: np.ndarray          # cone axis / bisector of the two normals
    mirror_axis: np.ndarray   # in-plane direction flipped between candidates
    center_a: np.ndarray = None   # per-candidate circle centers; the mean
    center_b: np.ndarray = None   # position is their midpoint


def conic_from_ellipse(e: Ellipse) -> np.ndarray:
    """3x3 symmetric conic matrix of an ellipse in its own plane units."""
    ca, sa = math.cos(e.angle), math.sin(e.angle)
    R = np.array([[ca, -sa], [sa, ca]])
    D = np.diag([1.0 / e.a**2, 1.0 / e.b**2])
    A = R @ D @ R.T
    c = np.array([e.u, e.v])
    Q = np.zeros((3, 3))
    Q[:2, :2] = A
    Q[:2, 2] = -A @ c
    Q[2, :2] = Q[:2, 2]
    Q[2, 2] = c @ A @ c - 1.0
    return Q


def fit_conic(points: np.ndarray) -> np.ndarray:
    """Least-squares conic x^T Q x = 0 through 2D points, shape (n, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    # Design matrix for ax^2 + bxy + cy^2 + dx + ey + f = 0, |coef| = 1.
    A = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=1)
    _, _, vt = np.linalg.svd(A, full_matrices=False)
    a, b, c, d, e, f = vt[-1]
    return np.array([[a, b / 2, d / 2],
                     [b / 2, c, e / 2],
                     [d / 2, e / 2, f]])


def circle_pose_from_conic(Q: np.ndarray, radius: float) -> CirclePose:
    """Decompose a normalized-image-plane conic of a circle of known radius.

    The conic is the projection cone section at z=1; eigen-decomposition of
    the cone gives two admissible (center, normal) pairs, both in front of
    the camera with camera-facing normals. Returned position is the mean of
    the two candidate centers (they coincide for a frontal view and the
    mean lies on the cone axis).
    """
    Q = np.asarray(Q, dtype=float)
    # Scale-normalize sign so eigenvalues come out (+, +, -).
    evals, evecs = np.linalg.eigh(Q)
    if np.sum(evals > 0) == 1:
        Q = -Q
        evals, evecs = -evals, evecs
    order = np.argsort(evals)[::-1]  # l1 >= l2 > 0 > l3
    l1, l2, l3 = evals[order]
    e1, e2, e3 = evecs[:, order].T
    if not (l1 >= l2 > 0 > l3):
        raise GeometryError("conic is not an ellipse seen by the camera")
    g = math.sqrt(max(0.0, (l1 - l2) / (l1 - l3)))
    h = math.sqrt(max(0.0, (l2 - l3) / (l1 - l3)))
    scale = radius / math.sqrt(-l1 * l3)
    candidates = []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            center = scale * (s1 * l3 * g * e1 + s2 * l1 * h * e3)
            normal = s1 * g * e1 + s2 * h * e3
            if center[2] <= 0:
                continue
            if normal @ center > 0:
                normal = -normal
            candidates.append((center, normal))
    if len(candidates) != 2:
        raise GeometryError("conic decomposition did not yield two solutions")
    (c_a, n_a), (c_b, n_b) = candidates
    position = (c_a + c_b) / 2.0
    axis = position / np.linalg.norm(position)
    bis = n_a + n_b
    bn = np.linalg.norm(bis)
    axis_n = bis / bn if bn > 1e-12 else -axis
    # In-plane direction orthogonal to the bisector, spanning the two normals.
    mirror = n_a - n_b
    mn = np.linalg.norm(mirror)
    if mn < 1e-12:
        # Frontal view: any direction orthogonal to the axis works.
        mirror = np.cross(axis, [0.0, 1.0, 0.0])
        if np.linalg.norm(mirror) < 1e-6:
            mirror = np.cross(axis, [1.0, 0.0, 0.0])
        mn = np.linalg.norm(mirror)
    return CirclePose(position=position, normal_a=n_a, normal_b=n_b,
                      axis=axis_n, mirror_axis=mirror / mn,
                      center_a=c_a, center_b=c_b)


def circle_pose_candidates(e: Ellipse, cam: CameraIntrinsics,
                           diameter: float) -> CirclePose:
    """Recover the ambiguous 3D pose of a circle from its image ellipse.

    Samples the pixel-space ellipse outline, undistorts each sample to the
    normalized image plane, fits a conic there, and decomposes it. The two
    returned normals are the classic two-fold ambiguity; for a frontal view
    they coincide.
    """
    if diameter <= 0:
        raise GeometryError("diameter must be positive")
    if e.b / e.a < 0.05:
        raise GeometryError("degenerate ellipse (b/a < 0.05)")
    pts = e.boundary(n=96)
    if (np.any(pts < -0.5)
            or np.any(pts[:, 0] > cam.width - 0.5)
            or np.any(pts[:, 1] > cam.height - 0.5)):
        raise GeometryError("ellipse extends outside the image")
    rays = undistort_pixels(pts, cam)
    Q = fit_conic(rays[:, :2])
    return circle_pose_from_conic(Q, radius=diameter / 2.0)


def ellipse_from_moments(centroid, second_moments) -> Ellipse:
    """Ellipse whose filled region has the given centroid and central moments.

    For a filled ellipse the covariance eigenvalues are (a/2)^2 and (b/2)^2,
    so the semi-axes are twice the eigenvalue square roots.
    """
    M = np.asarray(second_moments, dtype=float).reshape(2, 2)
    evals, evecs = np.linalg.eigh(M)
    if evals[0] <= 0:
        raise GeometryError("non-positive second moments")
    b = 2.0 * math.sqrt(evals[0])
    a = 2.0 * math.sqrt(evals[1])
    major = evecs[:, 1]
    angle = math.atan2(major[1], major[0]) % math.pi
    return Ellipse(u=float(centroid[0]), v=float(centroid[1]),
                   a=a, b=b, angle=angle)
