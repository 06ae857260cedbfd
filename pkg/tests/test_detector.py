"""Detector tests: segmentation, pose candidates, disambiguation, bundles.

Oracle: the synthetic renderer's exact ground truth.
"""

import math

import numpy as np
import pytest

from fidmark.detector import (DetectionError, DetectorParams, bundle_multi,
                              detect_and_choose, detect_markers,
                              disambiguate_ellipse, disambiguate_orig,
                              normalized_pixel, position_target,
                              run_sequence, segment_image)
from fidmark.geometry import Pose, Quaternion, geodesic_distance
from fidmark.marker import MarkerSpec
from fidmark.render import Scene, Trajectory, render_sequence


PARAMS = DetectorParams(diameter=0.3)


def _normal_error_deg(pose, gt_pose):
    z = pose.orientation.to_matrix()[:, 2]
    zg = gt_pose.orientation.to_matrix()[:, 2]
    return math.degrees(math.acos(np.clip(z @ zg, -1, 1)))


class TestPositionTarget:
    def test_below_camera_anchor(self):
        # Marker 2 m below a downward camera, facing up: marker z-axis
        # points at the camera, i.e. (0, 0, -1) in camera frame.
        pose = Pose(position=np.array([0.0, 0.0, 2.0]),
                    orientation=Quaternion.from_axis_angle([1, 0, 0],
                                                           math.pi))
        assert position_target(pose) == pytest.approx((0.0, 0.0, -2.0))

    def test_camera_shifted_west(self):
        pose = Pose(position=np.array([0.5, 0.0, 2.0]),
                    orientation=Quaternion.from_axis_angle([1, 0, 0],
                                                           math.pi))
        e, n, u = position_target(pose)
        assert e == pytest.approx(0.5)
        assert u == pytest.approx(-2.0)


class TestNormalizedPixel:
    def test_corners(self, cam):
        assert normalized_pixel((cam.width / 2, cam.height / 2), cam) \
            == (0.0, 0.0)
        assert normalized_pixel((0, 0), cam) == (-1.0, -1.0)
        assert normalized_pixel((cam.width, cam.height), cam) == (1.0, 1.0)

    def test_outside_raises(self, cam):
        with pytest.raises(DetectionError):
            normalized_pixel((-5, 10), cam)


class TestSegmentation:
    def test_blank_image_empty(self):
        img = np.full((480, 640), 255, dtype=np.uint8)
        assert segment_image(img, PARAMS) == []

    def test_frontal_single_pair(self, frontal_sequence, cam):
        frames, recs = frontal_sequence
        pairs = segment_image(frames[0], PARAMS)
        assert len(pairs) == 1
        from fidmark.geometry import project_points
        gt_uv = project_points(np.array([recs[0].position]), cam)[0]
        assert abs(pairs[0].ellipse.u - gt_uv[0]) < 0.5
        assert abs(pairs[0].ellipse.v - gt_uv[1]) < 0.5

    def test_bundle_three_pairs(self, bundle_sequence):
        frames, _ = bundle_sequence
        pairs = segment_image(frames[0],
                              DetectorParams(diameter=0.123))
        assert len(pairs) == 3


class TestDetection:
    def test_frontal_id_and_position(self, frontal_sequence, cam):
        frames, recs = frontal_sequence
        dets = detect_markers(frames[0], cam, PARAMS)
        assert len(dets) == 1
        det = dets[0]
        assert det.id == 53
        assert np.linalg.norm(det.pose_a.position
                              - np.array(recs[0].position)) < 0.02

    def test_oblique_one_candidate_close(self, oblique_sequence, cam):
        frames, recs = oblique_sequence
        det = detect_markers(frames[0], cam, PARAMS)[0]
        gt = recs[0].pose()
        err = min(_normal_error_deg(det.pose_a, gt),
                  _normal_error_deg(det.pose_b, gt))
        assert err < 3.0

    def test_candidate_targets_mirror(self, oblique_sequence, cam):
        frames, _ = oblique_sequence
        det = detect_markers(frames[0], cam, PARAMS)[0]
        ea, na, ua = position_target(det.pose_a)
        eb, nb, ub = position_target(det.pose_b)
        assert math.copysign(1, ea) == -math.copysign(1, eb)
        assert np.isclose(np.linalg.norm([ea, na, ua]),
                          np.linalg.norm([eb, nb, ub]), atol=1e-6)

    def test_translation_consistency(self, cam):
        """Camera 10 cm east -> east target decreases by ~0.10 m.

        Tolerance is 5%, not the ideal 1%: at 640x480 the ellipse
        eccentricity quantizes the recovered tilt to ~0.1-0.2 degrees,
        which leaks into the east target through the 2 m lever arm.
        """
        scene = Scene.single(MarkerSpec(id=53, diameter=0.3))
        from fidmark.render import render_frame, look_at
        th = math.radians(30)
        base = np.array([2.0 * math.sin(th), 0.0, 2.0 * math.cos(th)])
        es = []
        for shift in (0.0, 0.1):
            cpos = base + np.array([shift, 0.0, 0.0])
            r_wc = look_at(cpos, np.zeros(3))
            img = render_frame(scene, cpos, r_wc, cam).astype(np.uint8)
            img_f = np.asarray(img, float)
            det = detect_markers(img, cam, PARAMS)[0]
            out = disambiguate_orig(det, img_f, cam, PARAMS)
            es.append(position_target(out.chosen_pose)[0])
        assert es[0] - es[1] == pytest.approx(0.10, rel=0.05)

    def test_id_accuracy_under_noise(self, cam):
        scene = Scene.single(MarkerSpec(id=91, diameter=0.3))
        traj = Trajectory(kind="static", duration=1.5, rate=10.0,
                          distance=2.0, deflection=0.2)
        frames, _ = render_sequence(scene, traj, cam, noise_sigma=8.0,
                                    blur_radius=0.6, seed=4)
        good = sum(1 for f in frames
                   for d in detect_markers(f, cam, PARAMS) if d.id == 91)
        assert good == len(frames)


class TestDisambiguation:
    def test_orig_argmin_contract(self, oblique_sequence, cam):
        frames, _ = oblique_sequence
        img = np.asarray(frames[0], float)
        det = detect_markers(img, cam, PARAMS)[0]
        out = disambiguate_orig(det, img, cam, PARAMS)
        chosen = out.var_a if out.solution == "A" else out.var_b
        other = out.var_b if out.solution == "A" else out.var_a
        assert chosen <= other

    def test_ellipse_argmin_contract(self, oblique_sequence, cam):
        frames, _ = oblique_sequence
        img = np.asarray(frames[0], float)
        det = detect_markers(img, cam, PARAMS)[0]
        out = disambiguate_ellipse(det, img, cam, PARAMS)
        chosen = out.var_a if out.solution == "A" else out.var_b
        other = out.var_b if out.solution == "A" else out.var_a
        assert chosen <= other

    @pytest.mark.parametrize("method", [disambiguate_orig,
                                        disambiguate_ellipse])
    def test_oblique_correct_choice(self, method, oblique_sequence, cam):
        frames, recs = oblique_sequence
        hits = 0
        for i, f in enumerate(frames):
            img = np.asarray(f, float)
            det = detect_markers(img, cam, PARAMS)[0]
            out = method(det, img, cam, PARAMS)
            if _normal_error_deg(out.chosen_pose, recs[i].pose()) < 3.0:
                hits += 1
        assert hits >= 0.9 * len(frames)

    def test_frontal_tie_deterministic(self, frontal_sequence, cam):
        frames, _ = frontal_sequence
        img = np.asarray(frames[0], float)
        det = detect_markers(img, cam, PARAMS)[0]
        a = disambiguate_orig(det, img, cam, PARAMS)
        b = disambiguate_orig(det, img, cam, PARAMS)
        assert a.solution == b.solution

    def test_idless_rejected(self, frontal_sequence, cam):
        frames, _ = frontal_sequence
        img = np.asarray(frames[0], float)
        det = detect_markers(img, cam, PARAMS)[0]
        from dataclasses import replace
        with pytest.raises(DetectionError):
            disambiguate_orig(replace(det, id=None), img, cam, PARAMS)


class TestBundle:
    BPARAMS = DetectorParams(diameter=0.123, bundle_ids=(1, 3, 5))

    def _chosen(self, bundle_sequence, cam):
        frames, recs = bundle_sequence
        img = np.asarray(frames[0], float)
        dets = [d for d in detect_markers(img, cam, self.BPARAMS)
                if d.id is not None]
        return [disambiguate_orig(d, img, cam, self.BPARAMS)
                for d in dets], recs

    def test_normal_and_mean_position(self, bundle_sequence, cam):
        chosen, recs = self._chosen(bundle_sequence, cam)
        b = bundle_multi(chosen, cam, self.BPARAMS)
        assert _normal_error_deg(b.chosen_pose, recs[0].pose()) < 3.0
        mean = np.mean([d.chosen_pose.position for d in chosen], axis=0)
        assert np.array_equal(b.chosen_pose.position, mean)

    def test_too_few_constituents(self, bundle_sequence, cam):
        chosen, _ = self._chosen(bundle_sequence, cam)
        with pytest.raises(DetectionError):
            bundle_multi(chosen[:2], cam, self.BPARAMS)

    def test_variant_multi_one_record(self, bundle_sequence, cam):
        frames, _ = bundle_sequence
        out = detect_and_choose(frames[0], cam, self.BPARAMS, "multi")
        assert len(out) == 1
        assert out[0].solution == "M"


class TestRunSequence:
    def test_variants_share_positions(self, oblique_sequence, cam):
        frames, _ = oblique_sequence
        traces = run_sequence(frames, cam, PARAMS, rate=10.0, case="c")
        for a, b in zip(traces["orig"].records, traces["ellipse"].records):
            assert abs(a.e) == pytest.approx(abs(b.e), abs=1e-9)
            assert a.u == pytest.approx(b.u, abs=1e-9)

    def test_unknown_variant(self, frontal_sequence, cam):
        frames, _ = frontal_sequence
        with pytest.raises(DetectionError):
            run_sequence(frames, cam, PARAMS, 10.0, "c",
                         variants=("bogus",))
