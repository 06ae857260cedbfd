"""Circular marker detection: segmentation, ellipse extraction, ID decoding,
candidate-pose generation, and the three disambiguation strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import (CameraIntrinsics, CirclePose, Ellipse, GeometryError,
                       Pose, Quaternion, circle_pose_from_conic, fit_conic,
                       fit_plane, ellipse_from_moments, project_points,
                       quaternion_to_ypr, undistort_pixels)
from .marker import decode_ring, encode_id
from .trace import TraceRecord


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    """Detector configuration; defaults follow the stock system parameters."""

    id_bits: int = 8
    id_samples: int = 360
    min_size: int = 30
    diameter: float = 0.3
    initial_circularity_tolerance: float = 100.0
    final_circularity_tolerance: float = 2.0
    area_ratio_tolerance: float = 40.0
    center_distance_tolerance_ratio: float = 10.0
    center_distance_tolerance_abs: float = 5.0
    inner_frac: float = 0.42
    teeth_frac: float = 0.75
    edge_line_samples: int = 16
    bundle_ids: tuple = ()
    # Planar-localization legacy knobs; carried for config fidelity, unused.
    field_length: float = 1.0
    field_width: float = 1.0
    identify: bool = True

    def __post_init__(self):
        for name in ("initial_circularity_tolerance",
                     "final_circularity_tolerance", "area_ratio_tolerance",
                     "center_distance_tolerance_ratio",
                     "center_distance_tolerance_abs"):
            if getattr(self, name) <= 0:
                raise DetectionError(f"{name} must be positive")
        object.__setattr__(self, "bundle_ids", tuple(self.bundle_ids))

    @property
    def mid_teeth_frac(self) -> float:
        return (self.inner_frac + self.teeth_frac) / 2.0

    def expected_white_fraction(self) -> float:
        return self.inner_frac**2 + 0.5 * (self.teeth_frac**2
                                           - self.inner_frac**2)


@dataclass(frozen=True)
class Segment:
    """One flood-filled region."""

    pixel_count: int
    bbox: tuple              # (row0, row1, col0, col1), half-open
    centroid: tuple          # (u, v) pixels
    moments: tuple           # 2x2 second central moments, row-major
    mean_gray: float
    inner: bool


@dataclass(frozen=True)
class SegmentPair:
    """Concentric black outer / white inner pair plus the outer ellipse."""

    outer: Segment
    inner: Segment
    ellipse: Ellipse         # from the hole-filled outer region's moments
    threshold: float


@dataclass(frozen=True)
class MarkerDetection:
    """Per-frame, per-marker result with both ambiguity candidates."""

    id: int | None
    pose_a: Pose
    pose_b: Pose
    solution: str            # "A", "B", or "M" for a plane-regressed bundle
    var_a: float
    var_b: float
    e: float
    n: float
    u: float
    un: float
    vn: float
    yaw: float
    pitch: float
    roll: float
    t: float
    frame: int
    ellipse: Ellipse | None = None
    circle: CirclePose | None = None
    phase: float = 0.0
    fallback: bool = False   # edge sampling failed, variance method used

    @property
    def chosen_pose(self) -> Pose:
        return self.pose_b if self.solution == "B" else self.pose_a

    def with_choice(self, solution: str, var_a: float, var_b: float,
                    fallback: bool = False) -> "MarkerDetection":
        d = replace(self, solution=solution, var_a=var_a, var_b=var_b,
                    fallback=fallback)
        return _with_derived(d)

    def to_trace_record(self) -> TraceRecord:
        q = self.chosen_pose.orientation
        return TraceRecord(frame=self.frame, t=self.t,
                           id=-1 if self.id is None else self.id,
                           e=self.e, n=self.n, u=self.u,
                           qw=q.w, qx=q.x, qy=q.y, qz=q.z,
                           un=self.un, vn=self.vn, solution=self.solution,
                           var_a=self.var_a, var_b=self.var_b)


def position_target(pose: Pose) -> tuple[float, float, float]:
    """Camera-to-marker translation in the marker's east/north/up frame.

    A marker directly below a downward-looking camera at distance d,
    facing up, yields (0, 0, -d).
    """
    enu = pose.orientation.to_matrix().T @ pose.position
    return float(enu[0]), float(enu[1]), float(enu[2])


def normalized_pixel(center, cam: CameraIntrinsics) -> tuple[float, float]:
    """Pixel position mapped to [-1, 1] x [-1, 1], image center at (0, 0)."""
    u, v = float(center[0]), float(center[1])
    if not (0 <= u <= cam.width and 0 <= v <= cam.height):
        raise DetectionError("pixel center outside image")
    return (2 * u - cam.width) / cam.width, (2 * v - cam.height) / cam.height


def _sample_bilinear(img: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear image samples at (u, v) points, clamped at borders."""
    h, w = img.shape
    u = np.clip(pts[:, 0], 0, w - 1.001)
    v = np.clip(pts[:, 1], 0, h - 1.001)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    du = u - u0
    dv = v - v0
    img = img.astype(float)
    return ((img[v0, u0] * (1 - du) + img[v0, u0 + 1] * du) * (1 - dv)
            + (img[v0 + 1, u0] * (1 - du) + img[v0 + 1, u0 + 1] * du) * dv)


def _segment_from_mask(mask: np.ndarray, gray: np.ndarray,
                       inner: bool) -> Segment:
    ys, xs = np.nonzero(mask)
    cnt = xs.size
    cu, cv = xs.mean(), ys.mean()
    dx, dy = xs - cu, ys - cv
    m = ((dx * dx).sum() / cnt, (dx * dy).sum() / cnt,
         (dx * dy).sum() / cnt, (dy * dy).sum() / cnt)
    return Segment(pixel_count=int(cnt),
                   bbox=(int(ys.min()), int(ys.max()) + 1,
                         int(xs.min()), int(xs.max()) + 1),
                   centroid=(float(cu), float(cv)),
                   moments=tuple(float(v) for v in m),
                   mean_gray=float(gray[mask].mean()), inner=inner)


_EIGHT = np.ones((3, 3), dtype=int)


def segment_image(image: np.ndarray, params: DetectorParams) -> list:
    """Find concentric black-outer / white-inner segment pairs.

    Thresholding is adaptive: a global (min+max)/2 cut seeds candidate
    regions, then each candidate is re-segmented with a threshold computed
    from its own bounding-box gray range.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise DetectionError("expected an 8-bit grayscale image")
    h, w = img.shape
    t0 = (img.min() + img.max()) / 2.0
    labels, nlab = ndimage.label(img < t0, structure=_EIGHT)
    pairs = []
    for lab_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        core = labels[sl] == lab_id
        if core.sum() < params.min_size:
            continue
        r0, r1 = sl[0].start, sl[0].stop
        c0, c1 = sl[1].start, sl[1].stop
        if r0 <= 0 or c0 <= 0 or r1 >= h or c1 >= w:
            continue  # touching the border: marker not fully visible
        # loose circularity gate on the raw component
        a0 = core.sum()
        bb_ell = math.pi * (r1 - r0) * (c1 - c0) / 4.0
        if abs(bb_ell / a0 - 1.0) * 100 > params.initial_circularity_tolerance:
            continue
        pair = _refine_pair(img, (r0, r1, c0, c1), params)
        if pair is not None:
            pairs.append(pair)
    pairs.sort(key=lambda p: p.outer.centroid)
    return pairs


def _refine_pair(img, bbox, params: DetectorParams):
    h, w = img.shape
    r0, r1, c0, c1 = bbox
    pad = max(2, (r1 - r0) // 8)
    r0, r1 = max(0, r0 - pad), min(h, r1 + pad)
    c0, c1 = max(0, c0 - pad), min(w, c1 + pad)
    win = img[r0:r1, c0:c1]
    thr = (win.min() + win.max()) / 2.0
    black = win < thr
    labels, _ = ndimage.label(black, structure=_EIGHT)
    # component nearest the window center
    cy, cx = (r1 - r0) // 2, (c1 - c0) // 2
    lab_id = labels[cy, cx]
    if lab_id == 0:
        ids, counts = np.unique(labels[labels > 0], return_counts=True)
        if ids.size == 0:
            return None
        lab_id = ids[np.argmax(counts)]
    outer_mask = labels == lab_id
    if outer_mask.sum() < params.min_size:
        return None
    filled = ndimage.binary_fill_holes(outer_mask)
    seg_outer = _segment_from_mask(filled, win, inner=False)
    try:
        ell = ellipse_from_moments(seg_outer.centroid,
                                   np.array(seg_outer.moments).reshape(2, 2))
    except GeometryError:
        return None
    area = filled.sum()
    if abs(math.pi * ell.a * ell.b / area - 1.0) * 100 \
            > params.final_circularity_tolerance:
        return None
    holes = filled & ~outer_mask
    hl, nh = ndimage.label(holes, structure=_EIGHT)
    if nh == 0:
        return None
    sizes = ndimage.sum_labels(np.ones_like(hl), hl, index=np.arange(1, nh + 1))
    inner_id = 1 + int(np.argmax(sizes))
    inner_mask = hl == inner_id
    if inner_mask.sum() < params.min_size / 3:
        return None
    seg_inner = _segment_from_mask(inner_mask, win, inner=True)
    if seg_inner.mean_gray < thr:
        return None
    ratio = inner_mask.sum() / area
    expected = params.expected_white_fraction()
    if abs(ratio / expected - 1.0) * 100 > params.area_ratio_tolerance:
        return None
    dist = math.hypot(seg_inner.centroid[0] - seg_outer.centroid[0],
                      seg_inner.centroid[1] - seg_outer.centroid[1])
    allowed = (params.center_distance_tolerance_ratio / 100.0) * ell.a \
        + params.center_distance_tolerance_abs
    if dist > allowed:
        return None

    def shift(seg: Segment) -> Segment:
        return replace(seg,
                       bbox=(seg.bbox[0] + r0, seg.bbox[1] + r0,
                             seg.bbox[2] + c0, seg.bbox[3] + c0),
                       centroid=(seg.centroid[0] + c0, seg.centroid[1] + r0))

    ell = Ellipse(ell.u + c0, ell.v + r0, ell.a, ell.b, ell.angle)
    return SegmentPair(outer=shift(seg_outer), inner=shift(seg_inner),
                       ellipse=ell, threshold=float(thr))


def _refine_outer_edge(img, ell: Ellipse, n_angles: int = 72,
                       n_radial: int = 17) -> np.ndarray:
    """Subpixel outer-boundary points via radial midpoint crossings.

    Along each outward radial profile the black-ring to background edge is
    located where the intensity crosses the local (min+max)/2 level,
    linearly interpolated between samples.
    """
    ts = np.linspace(0, 2 * math.pi, n_angles, endpoint=False)
    ca, sa = math.cos(ell.angle), math.sin(ell.angle)
    ex = ell.a * np.cos(ts)
    ey = ell.b * np.sin(ts)
    bx = ell.u + ca * ex - sa * ey
    by = ell.v + sa * ex + ca * ey
    dirx = bx - ell.u
    diry = by - ell.v
    norm = np.hypot(dirx, diry)
    dirx /= norm
    diry /= norm
    # radial window: +-10% of local radius, at least +-2.5 px
    half = np.maximum(0.10 * norm, 2.5)
    fr = np.linspace(-1.0, 1.0, n_radial)
    pu = bx[:, None] + dirx[:, None] * half[:, None] * fr[None, :]
    pv = by[:, None] + diry[:, None] * half[:, None] * fr[None, :]
    pts = np.stack([pu.ravel(), pv.ravel()], axis=1)
    h, w = img.shape
    pts = np.clip(pts, 0, [w - 1, h - 1])
    vals = _sample_bilinear(img, pts).reshape(n_angles, n_radial)
    lo = vals.min(axis=1)
    hi = vals.max(axis=1)
    out = []
    for i in range(n_angles):
        if hi[i] - lo[i] < 40:
            continue
        thr = (lo[i] + hi[i]) / 2.0
        v = vals[i]
        rising = (v[:-1] <= thr) & (v[1:] > thr)
        idx = np.nonzero(rising)[0]
        if idx.size == 0:
            continue
        # crossing with the steepest slope = the true ring/background edge
        j = idx[np.argmax(v[idx + 1] - v[idx])]
        sub = j + (thr - v[j]) / (v[j + 1] - v[j])
        frac = fr[0] + sub * (fr[1] - fr[0])
        out.append([bx[i] + dirx[i] * half[i] * frac,
                    by[i] + diry[i] * half[i] * frac])
    return np.asarray(out).reshape(-1, 2)


def _intersect_plane(ray: np.ndarray, normal: np.ndarray,
                     point: np.ndarray) -> np.ndarray:
    denom = ray @ normal
    if abs(denom) < 1e-12:
        raise GeometryError("ray parallel to candidate plane")
    s = (normal @ point) / denom
    return s * ray


def _pose_from_normal(center, normal) -> np.ndarray:
    """Rotation matrix with z = candidate normal and an arbitrary but
    deterministic in-plane x axis (used before the ring phase is known)."""
    z = normal / np.linalg.norm(normal)
    x = np.cross(z, [0.0, 0.0, 1.0])
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        x = np.cross(z, [0.0, 1.0, 0.0])
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _candidate_pose(center, normal, phase_ray) -> Pose:
    """Rotation with z = camera-facing normal, x anchored to the decoded
    ring phase direction back-projected onto the candidate plane."""
    z = normal / np.linalg.norm(normal)
    p_edge = _intersect_plane(phase_ray, z, center)
    x = p_edge - center
    x = x - (x @ z) * z
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        x = np.cross(z, [0.0, 0.0, 1.0])
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return Pose(position=np.asarray(center, dtype=float),
                orientation=Quaternion.from_matrix(r))


def _with_derived(det: MarkerDetection) -> MarkerDetection:
    pose = det.pose_b if det.solution == "B" else det.pose_a
    e, n, u = position_target(pose)
    yaw, pitch, roll = quaternion_to_ypr(pose.orientation)
    return replace(det, e=e, n=n, u=u, yaw=yaw, pitch=pitch, roll=roll)


def detect_markers(image, cam: CameraIntrinsics, params: DetectorParams,
                   timestamp: float = 0.0, frame: int = 0) -> list:
    """Detect all markers in a frame; chosen pose defaults to candidate A.

    Returns MarkerDetections with both ambiguity candidates filled in.
    Undecodable rings yield detections with id None.
    """
    img = np.asarray(image, dtype=float)
    detections = []
    for pair in segment_image(img, params):
        det = _detect_one(img, pair, cam, params, timestamp, frame)
        if det is not None:
            detections.append(det)
    return detections


def _detect_one(img, pair: SegmentPair, cam, params, timestamp, frame):
    ell = pair.ellipse
    try:
        edge_px = _refine_outer_edge(img, ell)
        if edge_px.shape[0] < 12:
            return None
        rays = undistort_pixels(edge_px, cam)
        circle = circle_pose_from_conic(fit_conic(rays[:, :2]),
                                        radius=params.diameter / 2.0)
    except GeometryError:
        return None
    # Candidate ordering: A has the smaller angle to the camera ray.
    to_cam = -circle.position / np.linalg.norm(circle.position)
    n_a, n_b = circle.normal_a, circle.normal_b
    c_a, c_b = circle.center_a, circle.center_b
    if n_b @ to_cam > n_a @ to_cam:
        n_a, n_b = n_b, n_a
        c_a, c_b = c_b, c_a
    # Decode the ID ring by sampling the predicted teeth-center circle of
    # a candidate pose (around its own candidate center): uniform marker
    # angle regardless of perspective. Try A first, then B.
    r_mid = params.mid_teeth_frac * params.diameter / 2.0
    ts = np.linspace(0, 2 * math.pi, params.id_samples, endpoint=False)
    marker_id, phase_ray, phase = None, None, 0.0
    h, w = img.shape
    for center, normal in ((c_a, n_a), (c_b, n_b)):
        if not params.identify:
            break
        rot = _pose_from_normal(center, normal)
        pts = (center[None, :]
               + r_mid * np.outer(np.cos(ts), rot[:, 0])
               + r_mid * np.outer(np.sin(ts), rot[:, 1]))
        if np.any(pts[:, 2] <= 0):
            continue
        uv = project_points(pts, cam)
        if np.any(uv < 0) or np.any(uv[:, 0] > w - 1) \
                or np.any(uv[:, 1] > h - 1):
            continue
        samples = _sample_bilinear(img, uv) < pair.threshold
        decoded = decode_ring(samples, params.id_bits)
        if decoded is not None:
            marker_id, phase = decoded
            d0 = math.cos(phase) * rot[:, 0] + math.sin(phase) * rot[:, 1]
            uv0 = project_points((center + r_mid * d0)[None, :], cam)[0]
            phase_ray = undistort_pixels(uv0[None, :], cam)[0]
            break
    # Each candidate pose carries its own circle center; the two centers
    # have exactly equal norms, so both targets share one distance.
    try:
        if phase_ray is None:
            pose_a = Pose(position=c_a, orientation=Quaternion
                          .from_matrix(_pose_from_normal(c_a, n_a)))
            pose_b = Pose(position=c_b, orientation=Quaternion
                          .from_matrix(_pose_from_normal(c_b, n_b)))
        else:
            pose_a = _candidate_pose(c_a, n_a, phase_ray)
            pose_b = _candidate_pose(c_b, n_b, phase_ray)
    except GeometryError:
        return None
    center_uv = project_points(circle.position[None, :], cam)[0]
    try:
        un, vn = normalized_pixel(center_uv, cam)
    except DetectionError:
        return None
    det = MarkerDetection(
        id=marker_id, pose_a=pose_a, pose_b=pose_b, solution="A",
        var_a=0.0, var_b=0.0, e=0.0, n=0.0, u=0.0, un=un, vn=vn,
        yaw=0.0, pitch=0.0, roll=0.0, t=timestamp, frame=frame,
        ellipse=ell, circle=circle, phase=phase)
    return _with_derived(det)


def _expected_runs(pattern_cells: np.ndarray):
    """Merged-run structure (color, cell multiplicity) of a tooth pattern."""
    runs = []
    start = 0
    n = pattern_cells.size
    # rotate so a transition is at position 0
    first = 0
    for i in range(n):
        if pattern_cells[i] != pattern_cells[i - 1]:
            first = i
            break
    cells = np.roll(pattern_cells, -first)
    color = cells[0]
    count = 0
    for c in cells:
        if c == color:
            count += 1
        else:
            runs.append((bool(color), count))
            color, count = c, 1
    runs.append((bool(color), count))
    return runs


def _runs_of(samples: np.ndarray):
    """Cyclic runs of a boolean sequence as (value, length) starting at a
    transition."""
    n = samples.size
    trans = np.nonzero(samples != np.roll(samples, 1))[0]
    if trans.size == 0:
        return [(bool(samples[0]), n)]
    out = []
    for i, start in enumerate(trans):
        end = trans[(i + 1) % trans.size]
        length = (end - start) % n
        if length == 0:
            length = n
        out.append((bool(samples[start]), int(length)))
    return out


def _center_for(det: MarkerDetection, pose: Pose) -> np.ndarray:
    """Candidate-specific circle center matching a pose's normal.

    The reported pose position is the midpoint of the two candidate
    centers; sampling predictions are more accurate around the candidate's
    own center."""
    circle = det.circle
    if circle is None or circle.center_a is None:
        return pose.position
    z = pose.orientation.to_matrix()[:, 2]
    if z @ circle.normal_a >= z @ circle.normal_b:
        return circle.center_a
    return circle.center_b


def _tooth_count_variance(img, pose: Pose, params: DetectorParams, cam,
                          pattern_cells: np.ndarray, threshold: float,
                          center: np.ndarray | None = None) -> float:
    """Variance of per-tooth sample counts on the predicted teeth-center
    ellipse of one candidate pose. Lower = better aligned."""
    if center is None:
        center = pose.position
    r_mid = params.mid_teeth_frac * params.diameter / 2.0
    rot = pose.orientation.to_matrix()
    ts = np.linspace(0, 2 * math.pi, params.id_samples, endpoint=False)
    pts = (center[None, :]
           + r_mid * np.outer(np.cos(ts), rot[:, 0])
           + r_mid * np.outer(np.sin(ts), rot[:, 1]))
    if np.any(pts[:, 2] <= 0):
        return math.inf
    uv = project_points(pts, cam)
    h, w = img.shape
    if np.any(uv < 0) or np.any(uv[:, 0] > w - 1) or np.any(uv[:, 1] > h - 1):
        return math.inf
    samples = _sample_bilinear(img, uv) < threshold
    obs = _runs_of(samples)
    exp = _expected_runs(pattern_cells)
    if len(obs) != len(exp):
        return math.inf
    m = len(exp)
    w_nom = params.id_samples / pattern_cells.size
    best = math.inf
    for shift in range(m):
        if obs[shift][0] != exp[0][0]:
            continue
        counts = []
        ok = True
        for j in range(m):
            color, length = obs[(shift + j) % m]
            ecolor, ncells = exp[j]
            if color != ecolor:
                ok = False
                break
            counts.extend([length / ncells] * ncells)
        if ok:
            var = float(np.var(np.array(counts) - w_nom))
            best = min(best, var)
    return best


def disambiguate_orig(det: MarkerDetection, image, cam: CameraIntrinsics,
                      params: DetectorParams) -> MarkerDetection:
    """Pick the candidate whose predicted teeth ellipse yields the lower
    variance in samples per tooth. Ties go to candidate A."""
    if det.id is None:
        raise DetectionError("cannot disambiguate an id-less detection")
    img = np.asarray(image, dtype=float)
    cells = encode_id(det.id, params.id_bits).cells_array()
    thr = _local_threshold(img, det)
    var_a = _tooth_count_variance(img, det.pose_a, params, cam, cells, thr,
                                  center=_center_for(det, det.pose_a))
    var_b = _tooth_count_variance(img, det.pose_b, params, cam, cells, thr,
                                  center=_center_for(det, det.pose_b))
    solution = "B" if var_b < var_a else "A"
    return det.with_choice(solution, var_a, var_b)


def _local_threshold(img, det: MarkerDetection) -> float:
    ell = det.ellipse
    h, w = img.shape
    r0 = max(0, int(ell.v - ell.a - 2))
    r1 = min(h, int(ell.v + ell.a + 3))
    c0 = max(0, int(ell.u - ell.a - 2))
    c1 = min(w, int(ell.u + ell.a + 3))
    win = img[r0:r1, c0:c1]
    return float((win.min() + win.max()) / 2.0)


def _edge_fractions(img, pose: Pose, params: DetectorParams, cam,
                    pattern_cells: np.ndarray,
                    center: np.ndarray | None = None):
    """Edge position (0 = centermost, 1 = outermost) on each tooth line.

    One radial line per tooth, from the predicted marker center through the
    predicted tooth center, sampled on a segment centered on the predicted
    white-to-black edge of that tooth. Returns an array with NaN where no
    edge was found.
    """
    if center is None:
        center = pose.position
    rr = params.diameter / 2.0
    rot = pose.orientation.to_matrix()
    n_cells = pattern_cells.size
    n_pts = params.edge_line_samples
    half_band = 0.45 * (params.teeth_frac - params.inner_frac) * rr
    fracs = np.full(n_cells, np.nan)
    h, w = img.shape
    for k in range(n_cells):
        ang = (k + 0.5) * 2 * math.pi / n_cells
        d = math.cos(ang) * rot[:, 0] + math.sin(ang) * rot[:, 1]
        # white tooth: white-to-black edge at the outer band radius;
        # black tooth: at the inner band radius.
        edge_r = (params.teeth_frac if not pattern_cells[k]
                  else params.inner_frac) * rr
        span = np.linspace(edge_r - half_band, edge_r + half_band, n_pts)
        pts = center[None, :] + np.outer(span, d)
        if np.any(pts[:, 2] <= 0):
            continue
        uv = project_points(pts, cam)
        if np.any(uv < 0) or np.any(uv[:, 0] > w - 1) \
                or np.any(uv[:, 1] > h - 1):
            continue
        vals = _sample_bilinear(img, uv)
        # Light smoothing before differencing: the finite-difference edge
        # picker is otherwise dominated by pixel noise at long range.
        vals = np.convolve(vals, [0.25, 0.5, 0.25], mode="same")
        vals[0], vals[-1] = vals[1], vals[-2]
        grad = np.diff(vals)
        j = int(np.argmin(grad))     # steepest white-to-black drop
        if -grad[j] < 10.0:
            continue
        # Parabolic sub-sample refinement around the steepest gradient:
        # without it the fraction quantization noise dominates the
        # candidate comparison at longer ranges.
        off = 0.0
        if 0 < j < grad.size - 1:
            denom = grad[j - 1] - 2 * grad[j] + grad[j + 1]
            if abs(denom) > 1e-9:
                off = float(np.clip(0.5 * (grad[j - 1] - grad[j + 1]) / denom,
                                    -0.5, 0.5))
        fracs[k] = min(1.0, max(0.0, (j + 0.5 + off) / (n_pts - 1)))
    return fracs


def disambiguate_ellipse(det: MarkerDetection, image, cam: CameraIntrinsics,
                         params: DetectorParams) -> MarkerDetection:
    """Pick the candidate minimizing the variance of true-edge locations
    along per-tooth radial sample lines.

    Falls back to the tooth-count method (and flags the record) when the
    edge is missing on more than half the lines for both candidates.
    """
    if det.id is None:
        raise DetectionError("cannot disambiguate an id-less detection")
    img = np.asarray(image, dtype=float)
    cells_a = _cells_for_pose(det, params)
    fr_a = _edge_fractions(img, det.pose_a, params, cam, cells_a,
                           center=_center_for(det, det.pose_a))
    fr_b = _edge_fractions(img, det.pose_b, params, cam, cells_a,
                           center=_center_for(det, det.pose_b))
    n_cells = cells_a.size
    ok_a = np.count_nonzero(~np.isnan(fr_a)) > n_cells / 2
    ok_b = np.count_nonzero(~np.isnan(fr_b)) > n_cells / 2
    if not (ok_a or ok_b):
        fb = disambiguate_orig(det, image, cam, params)
        return fb.with_choice(fb.solution, fb.var_a, fb.var_b, fallback=True)
    var_a = float(np.nanvar(fr_a)) if ok_a else math.inf
    var_b = float(np.nanvar(fr_b)) if ok_b else math.inf
    solution = "B" if var_b < var_a else "A"
    return det.with_choice(solution, var_a, var_b)


def _cells_for_pose(det: MarkerDetection, params: DetectorParams) -> np.ndarray:
    """Tooth colors indexed by marker-frame angle starting at the pose's
    x-axis (which is anchored to the decoded phase, i.e. bit 0)."""
    return encode_id(det.id, params.id_bits).cells_array()


def bundle_multi(dets: list, cam: CameraIntrinsics,
                 params: DetectorParams) -> MarkerDetection:
    """Fuse >= 3 coplanar detections into one bundle detection.

    Pitch and roll come from the total-least-squares plane through the
    constituent positions, yaw from the lowest-id constituent, position is
    the arithmetic mean; derived attributes are recomputed as for a single
    marker.
    """
    usable = [d for d in dets if d.id is not None
              and (not params.bundle_ids or d.id in params.bundle_ids)]
    if len(usable) < 3:
        raise DetectionError(
            f"bundle needs >= 3 constituent detections, got {len(usable)}")
    positions = np.stack([d.chosen_pose.position for d in usable])
    plane = fit_plane(positions)       # raises on collinear constituents
    z = plane.normal                   # camera-facing by convention
    anchor = min(usable, key=lambda d: d.id)
    x0 = anchor.chosen_pose.orientation.to_matrix()[:, 0]
    x = x0 - (x0 @ z) * z
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise DetectionError("bundle yaw anchor degenerate")
    x = x / nx
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    center = positions.mean(axis=0)
    pose = Pose(position=center, orientation=Quaternion.from_matrix(rot))
    uv = project_points(center[None, :], cam)[0]
    un, vn = normalized_pixel(uv, cam)
    det = MarkerDetection(
        id=anchor.id, pose_a=pose, pose_b=pose, solution="M",
        var_a=0.0, var_b=0.0, e=0.0, n=0.0, u=0.0, un=un, vn=vn,
        yaw=0.0, pitch=0.0, roll=0.0, t=usable[0].t, frame=usable[0].frame)
    return _with_derived(det)


VARIANTS = ("orig", "ellipse", "multi")


def detect_and_choose(image, cam: CameraIntrinsics, params: DetectorParams,
                      variant: str, timestamp: float = 0.0,
                      frame: int = 0) -> list:
    """Full per-frame pipeline for one disambiguation variant.

    Returns chosen MarkerDetections; id-less detections are dropped (traces
    index detections, not frames). For ``multi`` the result is a single
    bundle detection per frame (empty list when under three constituents).
    """
    if variant not in VARIANTS:
        raise DetectionError(f"unknown variant {variant!r}")
    dets = [d for d in detect_markers(image, cam, params, timestamp, frame)
            if d.id is not None]
    if variant == "multi":
        chosen = [disambiguate_orig(d, image, cam, params) for d in dets]
        try:
            return [bundle_multi(chosen, cam, params)]
        except (DetectionError, GeometryError):
            return []
    out = []
    for d in dets:
        if variant == "orig":
            out.append(disambiguate_orig(d, image, cam, params))
        else:
            out.append(disambiguate_ellipse(d, image, cam, params))
    return out


def run_sequence(frames, cam: CameraIntrinsics, params: DetectorParams,
                 rate: float, case: str,
                 variants=("orig", "ellipse")) -> dict:
    """Detect once per frame, disambiguate with several variants.

    Segmentation, ellipse fitting, and ring decoding are shared across
    variants (they only differ in candidate choice), so comparing variants
    on one corpus costs one detection pass. Returns {variant: PoseTrace}
    with system labels "whycode-<variant>".
    """
    from .trace import PoseTrace

    for v in variants:
        if v not in VARIANTS:
            raise DetectionError(f"unknown variant {v!r}")
    traces = {v: PoseTrace(system=f"whycode-{v}", case=case)
              for v in variants}
    for i, img in enumerate(frames):
        t = i / rate
        image = np.asarray(img, dtype=float)
        dets = [d for d in detect_markers(image, cam, params, t, i)
                if d.id is not None]
        orig_chosen = None
        for v in variants:
            if v == "ellipse":
                picked = [disambiguate_ellipse(d, image, cam, params)
                          for d in dets]
            else:
                if orig_chosen is None:
                    orig_chosen = [disambiguate_orig(d, image, cam, params)
                                   for d in dets]
                picked = orig_chosen
                if v == "multi":
                    try:
                        picked = [bundle_multi(orig_chosen, cam, params)]
                    except (DetectionError, GeometryError):
                        picked = []
            for d in picked:
                traces[v].append(d.to_trace_record())
    return traces
