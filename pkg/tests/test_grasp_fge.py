"""Tests for graspability evaluation and grasp detection."""
import math
import os
import sys

import numpy as np
import pytest
from scipy import ndimage

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def brute_force_map(depth, template, phi):
    """Place the template at every pixel independently."""
    contact, collision = template.offsets(phi)
    img = depth.data.astype(np.int64)
    h, w = img.shape
    floor = depth.floor_mm
    allo = np.vstack([contact, collision])

    def lookup(vv, uu):
        inside = (vv >= 0) & (vv < h) & (uu >= 0) & (uu < w)
        out = np.zeros(len(vv), dtype=np.int64)
        out[inside] = img[vv[inside], uu[inside]]
        return out

    contact_w = np.zeros((h, w), dtype=np.int64)
    coll = np.zeros((h, w), dtype=np.int64)
    valid = np.zeros((h, w), dtype=bool)
    for v in range(h):
        for u in range(w):
            vals = lookup(v + contact[:, 0], u + contact[:, 1])
            top = max(int(img[v, u]), int(vals.max()))
            level = max(top - template.insertion_depth_mm, floor)
            contact_w[v, u] = int(np.where(vals > level, vals - floor, 0).sum())
            coll[v, u] = int((lookup(v + collision[:, 0], u + collision[:, 1]) > level).sum())
            vv, uu = v + allo[:, 0], u + allo[:, 1]
            valid[v, u] = bool(((vv >= 0) & (vv < h) & (uu >= 0) & (uu < w)).all())
    smoothed = ndimage.gaussian_filter(contact_w.astype(np.float64), sigma=2.0, mode="constant", cval=0.0)
    keep = valid & (coll == 0) & (contact_w > 0) & (img > floor)
    return np.where(keep, smoothed, 0.0)


def brute_force_grasps(depth, template, n_orientations, k):
    """Exhaustive ranking followed by greedy suppression."""
    phis = [i * (math.pi / n_orientations) for i in range(n_orientations)]
    maps = [brute_force_map(depth, template, phi) for phi in phis]
    cands = []
    for o, m in enumerate(maps):
        for v, u in zip(*np.nonzero(m > 0)):
            cands.append((-m[v, u], o, int(v), int(u)))
    cands.sort()
    radius = (template.finger_gap * 1000.0 / 2) / depth.mm_per_pixel
    kept = []
    for neg, o, v, u in cands:
        if any((ku - u) ** 2 + (kv - v) ** 2 <= radius * radius for _, _, kv, ku in kept):
            continue
        kept.append((-neg, o, v, u))
        if len(kept) >= k:
            break
    return [(u, v, phis[o], score) for score, o, v, u in kept]


class TestGripperTemplate:
    """Tests for GripperTemplate."""

    def test_from_geometry(self, template):
        """Test the default template layout."""
        c, k = template.contact_mask, template.collision_mask
        assert c.shape == k.shape
        assert c.shape[0] % 2 == 1 and c.shape[1] % 2 == 1
        assert not (c & k).any()
        _, n = ndimage.label(c)
        assert n == 2
        assert template.finger_gap == pytest.approx(0.036)

    def test_overlapping_masks_rejected(self):
        """Test that overlapping stencils are a config error."""
        from src.errors import ConfigError
        from src.grasp_fge import GripperTemplate
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 0] = mask[2, 4] = True
        with pytest.raises(ConfigError):
            GripperTemplate(contact_mask=mask, collision_mask=mask, finger_gap=0.01, template_resolution=3.0)

    def test_load_from_file(self, tmp_path):
        """Test loading a geometry description."""
        from src.grasp_fge import GripperTemplate
        path = tmp_path / "gripper.json"
        path.write_text('{"geometry": {"open_width_mm": 36.0}}')
        assert GripperTemplate.load(path).finger_gap == pytest.approx(0.036)

    def test_rotated_offsets_stay_disjoint(self, template):
        """Test that rotation never merges contact and collision cells."""
        for phi in np.linspace(0.0, math.pi, 9):
            contact, collision = template.offsets(phi)
            a = {tuple(p) for p in contact}
            b = {tuple(p) for p in collision}
            assert a and b
            assert not a & b


class TestGraspability:
    """Tests for graspability_map."""

    def test_flat_floor_has_no_grasps(self, template):
        """Test that an empty bin scores zero everywhere."""
        from src.depth_image import DepthImage
        from src.grasp_fge import detect_grasps
        depth = DepthImage(data=np.full((64, 64), 10, dtype=np.uint16), mm_per_pixel=3.0, floor_mm=10)
        assert len(detect_grasps(depth, template)) == 0

    def test_across_cable_is_graspable(self, cable_image, template):
        """Test that closing across a cable scores and closing along it does not."""
        from src.grasp_fge import graspability_map
        across = graspability_map(cable_image, template, math.pi / 2)
        along = graspability_map(cable_image, template, 0.0)
        assert across[31, 32] > 0
        assert along[31, 32] == 0
        # off the cable the center pixel is floor
        assert across[20, 32] == 0

    def test_resolution_mismatch(self, cable_image):
        """Test that a template at another resolution is rejected."""
        from src.errors import ConfigError
        from src.grasp_fge import GripperTemplate, graspability_map
        other = GripperTemplate.from_geometry(mm_per_pixel=2.0)
        with pytest.raises(ConfigError):
            graspability_map(cable_image, other, 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force_map(self, random_depth, template, seed):
        """Test the vectorized map against per-pixel placement."""
        from src.grasp_fge import graspability_map
        depth = random_depth(seed)
        for phi in (0.0, math.pi / 4, math.pi / 2):
            assert np.array_equal(graspability_map(depth, template, phi), brute_force_map(depth, template, phi))


class TestDetectGrasps:
    """Tests for detect_grasps and non-maximum suppression."""

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_matches_brute_force(self, random_depth, template, seed):
        """Test detection against exhaustive ranking."""
        from src.grasp_fge import detect_grasps
        depth = random_depth(seed)
        got = [(g.u, g.v, g.phi, g.fge_score) for g in detect_grasps(depth, template, 4, 10)]
        assert got == brute_force_grasps(depth, template, 4, 10)

    @pytest.mark.slow
    def test_matches_brute_force_many_images(self, random_depth, template):
        """Test detection against exhaustive ranking on 50 images."""
        from src.grasp_fge import detect_grasps
        for seed in range(50):
            depth = random_depth(100 + seed)
            got = [(g.u, g.v, g.phi, g.fge_score) for g in detect_grasps(depth, template, 8, 10)]
            assert got == brute_force_grasps(depth, template, 8, 10)

    def test_sorted_and_separated(self, random_depth, template):
        """Test ordering and the suppression radius."""
        from src.grasp_fge import detect_grasps
        grasps = detect_grasps(random_depth(3, n_bars=10), template, 8, 10)
        scores = grasps.scores
        assert len(grasps) <= 10
        assert all(scores[i] >= scores[i + 1] for i in range(len(scores) - 1))
        radius = 18.0 / 3.0
        for i, a in enumerate(grasps):
            for b in list(grasps)[i + 1:]:
                assert (a.u - b.u) ** 2 + (a.v - b.v) ** 2 > radius ** 2 - 1e-9

    def test_invalid_arguments(self, cable_image, template):
        """Test argument validation."""
        from src.errors import ConfigError
        from src.grasp_fge import detect_grasps
        with pytest.raises(ConfigError):
            detect_grasps(cable_image, template, n_orientations=0)
        with pytest.raises(ConfigError):
            detect_grasps(cable_image, template, k=0)

    def test_orientations(self):
        """Test evenly spaced angles in [0, pi)."""
        from src.grasp_fge import orientations
        phis = orientations(8)
        assert len(phis) == 8
        assert phis[0] == 0.0
        assert np.allclose(np.diff(phis), math.pi / 8)


class TestRobotFrame:
    """Tests for pixel/robot conversion."""

    def test_round_trip(self, cable_image):
        """Test that robot_to_pixel inverts pixel_to_robot."""
        from src.grasp_fge import CameraCalibration, Grasp, pixel_to_robot, robot_to_pixel
        calib = CameraCalibration(rotation=0.3, translation=(0.4, -0.1), height_offset=0.02, finger_descent=0.015)
        g = pixel_to_robot(Grasp(u=32, v=31, phi=2.9), cable_image, calib)
        rf = g.robot_frame
        u, v = robot_to_pixel(rf.x, rf.y, cable_image.mm_per_pixel, calib)
        assert u == pytest.approx(32, abs=1e-9)
        assert v == pytest.approx(31, abs=1e-9)
        assert rf.z == pytest.approx(0.020 + 0.02 - 0.015)
        assert 0.0 <= rf.phi < math.pi
        assert rf.phi == pytest.approx((2.9 + 0.3) % math.pi)

    def test_invalid_depth(self, cable_image):
        """Test that a zero-depth pixel has no robot pose."""
        from src.depth_image import DepthImage
        from src.errors import InvalidDepthError
        from src.grasp_fge import CameraCalibration, Grasp, pixel_to_robot
        data = cable_image.data.copy()
        data[31, 32] = 0
        depth = DepthImage(data=data, mm_per_pixel=3.0, floor_mm=10)
        with pytest.raises(InvalidDepthError):
            pixel_to_robot(Grasp(u=32, v=31, phi=0.0), depth, CameraCalibration())

    def test_centered_calibration(self):
        """Test that the bin center maps onto the requested robot point."""
        from src.grasp_fge import CameraCalibration, robot_to_pixel
        from src.scene_gen import BinBounds
        calib = CameraCalibration.centered_on(BinBounds(), 3.0, (0.525, 0.065))
        u, v = robot_to_pixel(0.525, 0.065, 3.0, calib)
        assert u == pytest.approx(79.5)
        assert v == pytest.approx(79.5)

    def test_grasp_dict(self):
        """Test grasp serialization keys."""
        from src.grasp_fge import Grasp, RobotGrasp
        g = Grasp(u=1, v=2, phi=0.5, fge_score=3.0, robot_frame=RobotGrasp(0.1, 0.2, 0.3, 0.5))
        d = g.to_dict()
        assert set(d) == {"u", "v", "phi", "score", "gx", "gy", "gz", "gphi"}
        assert Grasp.from_dict(d) == g


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
