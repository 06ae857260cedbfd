"""Circular fiducial marker toolkit.

Detection of circular Manchester-coded markers, two-fold pose-ambiguity
disambiguation (tooth-count, edge-variance, and multi-marker bundle
strategies), a synthetic renderer with exact ground truth, and an
evaluation harness for discontinuity and detection-rate metrics.
"""

from .geometry import (CameraIntrinsics, CirclePose, Ellipse, GeometryError,
                       Plane, Pose, Quaternion, circle_pose_candidates,
                       circle_pose_from_conic, fit_conic, fit_plane,
                       geodesic_distance, project_points,
                       quaternion_to_ypr, undistort_pixels,
                       ypr_to_quaternion)
from .marker import (APRIL_TAG_FAMILIES, MarkerError, MarkerSpec,
                     ToothPattern, canonicalize_necklace, decode_ring,
                     encode_id, enumerate_necklaces, render_marker_bitmap)
from .trace import PoseTrace, TraceRecord
from .render import (GroundTruthRecord, RenderError, Scene, Trajectory,
                     ground_truth_trace, inject_flips, load_ground_truth,
                     load_sequence, render_sequence, save_sequence)
from .detector import (DetectionError, DetectorParams, MarkerDetection,
                       VARIANTS, bundle_multi, detect_and_choose,
                       detect_markers, disambiguate_ellipse,
                       disambiguate_orig, normalized_pixel, position_target,
                       run_sequence, segment_image)
from .eval import (BenchmarkResult, CaseResult, EvaluationError, RateResult,
                   Thresholds, angular_speed, classify_discontinuities,
                   detection_rate, discontinuity_rate, emit_report,
                   evaluate_trace, linear_discontinuity, run_benchmark,
                   summarize)
from .presets import (DISCONTINUITY_SUITE, PRESETS, RATE_SUITE, Preset,
                      get_preset, preset_seed, render_preset)

__version__ = "0.1.0"
