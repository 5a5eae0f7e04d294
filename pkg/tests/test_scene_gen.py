"""Tests for scene generation, rendering and the complexity oracle."""
import json
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# x positions of harnesses laid across the target; the first lands on its connector
CROSS_XS = [0.07, 0.15, 0.20, 0.30, 0.35]


def _grasp(u, v):
    from src.grasp_fge import Grasp
    return Grasp(u=u, v=v, phi=0.0)


def _vertex_z(h, s):
    i = int(np.argmin(np.abs(h.arc_lengths() - s)))
    return float(h.centerline[i, 2])


class TestSceneSpec:
    """Tests for SceneSpec validation."""

    def test_negative_count_rejected(self):
        """Test that a negative object count is a config error."""
        from src.errors import ConfigError
        from src.scene_gen import SceneSpec
        with pytest.raises(ConfigError):
            SceneSpec(n_objects=-1).validate()

    def test_bin_too_small_rejected(self):
        """Test that a bin that cannot hold one harness is rejected."""
        from src.errors import ConfigError
        from src.scene_gen import BinBounds, SceneSpec
        spec = SceneSpec(n_objects=1, bin_bounds=BinBounds(x_max=0.1, y_max=0.1))
        with pytest.raises(ConfigError):
            spec.validate()

    def test_dict_round_trip(self):
        """Test SceneSpec serialization."""
        from src.scene_gen import SceneSpec
        spec = SceneSpec(n_objects=7, harness_length=0.5)
        assert SceneSpec.from_dict(spec.to_dict()) == spec


class TestGenerateScene:
    """Tests for generate_scene."""

    def test_empty_bin(self):
        """Test that zero objects gives an empty scene."""
        from src.scene_gen import SceneSpec, generate_scene
        scene = generate_scene(SceneSpec(n_objects=0), seed=3)
        assert scene.harnesses == ()
        assert scene.crossing_graph == ()

    def test_deterministic(self):
        """Test that one seed reproduces the same scene."""
        from src.scene_gen import SceneSpec, generate_scene
        spec = SceneSpec(n_objects=5)
        a = json.dumps(generate_scene(spec, 11).to_dict(), sort_keys=True)
        b = json.dumps(generate_scene(spec, 11).to_dict(), sort_keys=True)
        assert a == b

    def test_different_seeds_differ(self):
        """Test that different seeds give different layouts."""
        from src.scene_gen import SceneSpec, generate_scene
        spec = SceneSpec(n_objects=3)
        a = generate_scene(spec, 1).harnesses[0].centerline
        b = generate_scene(spec, 2).harnesses[0].centerline
        assert a.shape != b.shape or not np.allclose(a, b)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_harness_lengths_and_bounds(self, seed):
        """Test centerline length and containment of every harness."""
        from src.scene_gen import SceneSpec, generate_scene
        spec = SceneSpec(n_objects=6)
        scene = generate_scene(spec, seed)
        assert len(scene.harnesses) == 6
        b = spec.bin_bounds
        for h in scene.harnesses:
            assert abs(h.centerline_length - spec.harness_length) < 1e-6
            assert h.planar_length <= spec.harness_length + 1e-9
            assert h.xy[:, 0].min() >= b.x_min + spec.margin - 1e-9
            assert h.xy[:, 0].max() <= b.x_max - spec.margin + 1e-9
            assert h.xy[:, 1].min() >= b.y_min + spec.margin - 1e-9
            assert h.xy[:, 1].max() <= b.y_max - spec.margin + 1e-9
            assert len(h.segment_kinds) == len(h.centerline) - 1

    @pytest.mark.parametrize("seed", [3, 4])
    def test_draped_pile_keeps_length(self, seed):
        """Test that harnesses lying on a tall pile keep their 3D length."""
        from src.scene_gen import SceneSpec, generate_scene
        spec = SceneSpec(n_objects=10)
        scene = generate_scene(spec, seed)
        lengths = [h.centerline_length for h in scene.harnesses]
        assert max(abs(v - spec.harness_length) for v in lengths) < 1e-6
        for c in scene.crossing_graph:
            for hid, s in ((c.harness_a, c.s_a), (c.harness_b, c.s_b)):
                assert s <= scene.harness(hid).planar_length + 1e-9

    def test_fit_length(self):
        """Test trimming a long centerline and lifting the end of a short one."""
        from src.scene_gen import _fit_length
        pts = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.3, 0.4, 0.0]])
        cut = _fit_length(pts, 0.5)
        assert cut[-1] == pytest.approx([0.3, 0.2, 0.0])
        assert np.linalg.norm(np.diff(cut, axis=0), axis=1).sum() == pytest.approx(0.5)
        lifted = _fit_length(pts, 0.8)
        assert lifted[:, :2] == pytest.approx(pts[:, :2])
        assert lifted[-1, 2] > 0
        assert np.linalg.norm(np.diff(lifted, axis=0), axis=1).sum() == pytest.approx(0.8)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_crossings_strictly_ordered(self, seed):
        """Test that the upper harness lies above the lower one at every crossing."""
        from src.scene_gen import SceneSpec, generate_scene
        scene = generate_scene(SceneSpec(n_objects=6), seed)
        for c in scene.inter_crossings():
            upper = scene.harness(c.above)
            lower = scene.harness(c.below)
            assert _vertex_z(upper, c.arc_on(c.above)) > _vertex_z(lower, c.arc_on(c.below))

    @pytest.mark.slow
    def test_crossings_grow_with_object_count(self):
        """Test that fuller bins entangle more per object."""
        from src.scene_gen import SceneSpec, generate_scene

        def mean_per_object(n):
            spec = SceneSpec(n_objects=n)
            return np.mean([len(generate_scene(spec, s).inter_crossings()) / n for s in range(200)])

        assert mean_per_object(10) > mean_per_object(5)

    def test_crowded_bin_has_crossings(self):
        """Test that a crowded bin produces entanglement."""
        from src.scene_gen import SceneSpec, generate_scene
        scene = generate_scene(SceneSpec(n_objects=12), 5)
        assert len(scene.inter_crossings()) > 0

    def test_scene_json_round_trip(self):
        """Test Scene serialization."""
        from src.scene_gen import Scene, SceneSpec, generate_scene
        scene = generate_scene(SceneSpec(n_objects=4), 9)
        again = Scene.from_dict(json.loads(json.dumps(scene.to_dict())))
        assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(scene.to_dict(), sort_keys=True)

    def test_wrong_schema_version(self):
        """Test that an unknown scene schema is a data error."""
        from src.errors import DataError
        from src.scene_gen import Scene, SceneSpec, generate_scene
        doc = generate_scene(SceneSpec(n_objects=1), 0).to_dict()
        doc["schema_version"] = 99
        with pytest.raises(DataError):
            Scene.from_dict(doc)


class TestRender:
    """Tests for render_depth."""

    def test_small_resolution_rejected(self):
        """Test that resolutions under 64 px are config errors."""
        from src.errors import ConfigError
        from src.scene_gen import SceneSpec, generate_scene, render_depth
        with pytest.raises(ConfigError):
            render_depth(generate_scene(SceneSpec(n_objects=0), 0), resolution=(32, 32))

    def test_empty_bin_is_floor(self):
        """Test that an empty bin renders at floor height."""
        from src.scene_gen import SceneSpec, generate_scene, render_depth
        depth = render_depth(generate_scene(SceneSpec(n_objects=0), 0))
        assert depth.shape == (160, 160)
        assert (depth.data == 10).all()
        assert depth.floor_mm == 10

    def test_tube_height(self, straight_harness, make_scene):
        """Test the rendered height of a single straight cable."""
        from src.scene_gen import render_depth
        scene = make_scene([straight_harness(0, (0.05, 0.24), (0.43, 0.24))])
        depth = render_depth(scene)
        # pixel center 1.5 mm off the centerline: 14 + sqrt(16 - 2.25) mm
        assert depth.at(79, 79) == 18
        assert depth.at(79, 0) == 10

    def test_crossing_pixel_shows_upper_harness(self, straight_harness, make_scene):
        """Test that the upper harness owns and sets the height at a crossing."""
        from src.scene_gen import Crossing, render_depth, render_owner
        target = straight_harness(0, (0.05, 0.24), (0.43, 0.24))
        over = straight_harness(1, (0.24, 0.05), (0.24, 0.43), z=0.022)
        scene = make_scene([target, over], [Crossing(0, 1, (0.24, 0.24), above=1, s_a=0.19, s_b=0.19)])
        depth = render_depth(scene)
        # both tubes are 1.5 mm off-center here: 22 + 3.7 over 14 + 3.7
        assert depth.at(79, 79) == 26
        assert render_owner(scene, (160, 160), 3.0)[79, 79] == 1
        assert depth.at(39, 79) == 18

    def test_dropout(self):
        """Test that dropout zeroes pixels deterministically."""
        from src.scene_gen import SceneSpec, generate_scene, render_depth
        scene = generate_scene(SceneSpec(n_objects=0), 0)
        a = render_depth(scene, dropout=0.2, seed=4)
        b = render_depth(scene, dropout=0.2, seed=4)
        assert (a.data == 0).any()
        assert np.array_equal(a.data, b.data)


class TestSceneUpdates:
    """Tests for remove_harness and perturb_scene."""

    def test_remove_harness(self):
        """Test that removal drops the harness and its crossings."""
        from src.scene_gen import SceneSpec, generate_scene, remove_harness
        scene = generate_scene(SceneSpec(n_objects=8), 2)
        target = scene.ids[0]
        after = remove_harness(scene, target)
        assert len(after.harnesses) == 7
        assert target not in after.ids
        assert not any(c.involves(target) for c in after.crossing_graph)

    def test_remove_missing_harness(self):
        """Test that removing an unknown id is a data error."""
        from src.errors import DataError
        from src.scene_gen import SceneSpec, generate_scene, remove_harness
        scene = generate_scene(SceneSpec(n_objects=2), 0)
        with pytest.raises(DataError):
            remove_harness(scene, 42)

    def test_perturb_keeps_ids(self):
        """Test that perturbation re-drops without losing harnesses."""
        from src.scene_gen import SceneSpec, generate_scene, perturb_scene
        scene = generate_scene(SceneSpec(n_objects=6), 4)
        moved = perturb_scene(scene, [scene.ids[1], scene.ids[2]], seed=8)
        assert sorted(moved.ids) == sorted(scene.ids)
        assert all(abs(h.centerline_length - 0.74) < 1e-6 for h in moved.harnesses)
        again = perturb_scene(scene, [scene.ids[1], scene.ids[2]], seed=8)
        assert json.dumps(moved.to_dict(), sort_keys=True) == json.dumps(again.to_dict(), sort_keys=True)

    def test_perturb_restores_removed(self):
        """Test that a lifted harness can be dropped back in."""
        from src.scene_gen import SceneSpec, generate_scene, perturb_scene, remove_harness
        scene = generate_scene(SceneSpec(n_objects=3), 1)
        lifted = scene.harness(scene.ids[0])
        after = perturb_scene(remove_harness(scene, lifted.id), [], seed=2, extra=[lifted])
        assert sorted(after.ids) == sorted(scene.ids)


class TestRequiredComplexity:
    """Tests for the required-complexity oracle."""

    def test_isolated_mid_grasp(self, straight_harness, make_scene):
        """Test that an isolated harness grasped mid-length needs no untangling."""
        from src.scene_gen import required_complexity
        scene = make_scene([straight_harness(0, (0.05, 0.24), (0.43, 0.24))])
        assert required_complexity(scene, 0, _grasp(79, 79)) == 0

    def test_isolated_near_end(self, straight_harness, make_scene):
        """Test the near-end term."""
        from src.scene_gen import required_complexity
        scene = make_scene([straight_harness(0, (0.05, 0.24), (0.43, 0.24))])
        assert required_complexity(scene, 0, _grasp(19, 79)) == 1

    def test_crossing_above(self, straight_harness, make_scene):
        """Test that one harness lying across the target raises the requirement."""
        from src.scene_gen import Crossing, required_complexity
        target = straight_harness(0, (0.05, 0.24), (0.43, 0.24))
        over = straight_harness(1, (0.24, 0.05), (0.24, 0.43), z=0.022)
        crossing = Crossing(0, 1, (0.24, 0.24), above=1, s_a=0.19, s_b=0.19)
        scene = make_scene([target, over], [crossing])
        assert required_complexity(scene, 0, _grasp(39, 79)) == 1
        # the upper harness is free
        assert required_complexity(scene, 1, _grasp(79, 39)) == 0

    def test_two_crossings_and_connector(self, straight_harness, make_scene):
        """Test the crossing count and the connector term together."""
        from src.scene_gen import Crossing, required_complexity
        target = straight_harness(0, (0.05, 0.24), (0.43, 0.24))
        a = straight_harness(1, (0.07, 0.05), (0.07, 0.43), z=0.022)
        b = straight_harness(2, (0.30, 0.05), (0.30, 0.43), z=0.022)
        on_connector = Crossing(0, 1, (0.07, 0.24), above=1, s_a=0.02, s_b=0.19)
        on_cable = Crossing(0, 2, (0.30, 0.24), above=2, s_a=0.25, s_b=0.19)
        scene = make_scene([target, a, b], [on_connector])
        assert required_complexity(scene, 0, _grasp(79, 79)) == 2
        scene = make_scene([target, a, b], [on_connector, on_cable])
        assert required_complexity(scene, 0, _grasp(79, 79)) == 4

    def test_grasp_off_target(self, straight_harness, make_scene):
        """Test that a grasp on another harness is rejected."""
        from src.errors import InvalidGraspError
        from src.scene_gen import required_complexity
        scene = make_scene([
            straight_harness(0, (0.05, 0.24), (0.43, 0.24)),
            straight_harness(1, (0.05, 0.10), (0.43, 0.10)),
        ])
        with pytest.raises(InvalidGraspError):
            required_complexity(scene, 0, _grasp(79, 33))

    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(
        present=st.lists(st.booleans(), min_size=len(CROSS_XS), max_size=len(CROSS_XS)),
        extra=st.integers(0, len(CROSS_XS) - 1),
        near_end=st.booleans(),
    )
    def test_monotone_in_crossings(self, straight_harness, make_scene, present, extra, near_end):
        """Test that adding a crossing above the target never lowers the requirement."""
        from src.scene_gen import Crossing, required_complexity
        target = straight_harness(0, (0.05, 0.24), (0.43, 0.24))
        others = [straight_harness(k + 1, (x, 0.05), (x, 0.43), z=0.022) for k, x in enumerate(CROSS_XS)]

        def crossing(k):
            x = CROSS_XS[k]
            return Crossing(0, k + 1, (x, 0.24), above=k + 1, s_a=x - 0.05, s_b=0.19)

        chosen = {k for k, on in enumerate(present) if on}
        g = _grasp(19, 79) if near_end else _grasp(79, 79)
        before = required_complexity(make_scene([target] + others, [crossing(k) for k in sorted(chosen)]), 0, g)
        more = sorted(chosen | {extra})
        after = required_complexity(make_scene([target] + others, [crossing(k) for k in more]), 0, g)
        assert after >= before
        if not chosen and not near_end:
            assert before == 0

    def test_capped_at_six(self, straight_harness, make_scene):
        """Test that the requirement never exceeds the most complex action."""
        from src.scene_gen import Crossing, required_complexity
        target = straight_harness(0, (0.05, 0.24), (0.43, 0.24))
        others, crossings = [], []
        for k, x in enumerate([0.10, 0.15, 0.20, 0.30, 0.35]):
            others.append(straight_harness(k + 1, (x, 0.05), (x, 0.43), z=0.022))
            crossings.append(Crossing(0, k + 1, (x, 0.24), above=k + 1, s_a=x - 0.05, s_b=0.19))
        scene = make_scene([target] + others, crossings)
        assert required_complexity(scene, 0, _grasp(79, 79)) == 6


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
