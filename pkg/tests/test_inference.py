"""Tests for action-grasp inference and the baseline policies."""
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


class MatrixScorer:
    """Returns a fixed score matrix."""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=np.float64)

    def predict_batch(self, o, G, M):
        return self.P[:len(list(G)), :len(M)]


def _grasps(scores):
    from src.grasp_fge import Grasp
    return [Grasp(u=k, v=k, phi=0.0, fge_score=s) for k, s in enumerate(scores)]


class TestInferenceConfig:
    """Tests for InferenceConfig."""

    @pytest.mark.parametrize("p", [0.0, 1.0, 1.5])
    def test_bad_threshold(self, p):
        """Test that thresholds outside (0, 1) are rejected."""
        from src.errors import ConfigError
        from src.inference import InferenceConfig
        with pytest.raises(ConfigError):
            InferenceConfig(p_thld=p)


class TestSelectFromScores:
    """Tests for the pure selection rule."""

    def test_cheapest_feasible_action(self):
        """Test that the least complex feasible action wins over higher scores."""
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        P = np.array([[0.1, 0.2, 0.6, 0.7, 0.8, 0.9, 0.95]])
        sel = select_from_scores(P, [1.0], action_table(), 0.5)
        assert (sel.grasp_index, sel.action_index, sel.fallback) == (0, 2, False)
        assert [r.action for r in sel.ranked] == ["a_hs", "a_f", "a_fs", "a_tf", "a_tfs"]
        assert sel.ranked_by_score[0].action == "a_tfs"

    def test_ties_prefer_better_grasp(self):
        """Test that equal complexity goes to the higher-scored grasp."""
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        P = np.zeros((3, 7))
        P[:, 1] = 0.8
        sel = select_from_scores(P, [2.0, 5.0, 5.0], action_table(), 0.5)
        assert (sel.grasp_index, sel.action_index) == (1, 1)

    def test_threshold_is_inclusive(self):
        """Test that a score equal to p_thld is feasible."""
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        P = np.full((1, 7), 0.2)
        P[0, 3] = 0.5
        sel = select_from_scores(P, [1.0], action_table(), 0.5)
        assert sel.action_index == 3
        assert not sel.fallback

    def test_fallback(self):
        """Test the fallback to the top grasp with the most complex action."""
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        P = np.full((3, 7), 0.1)
        sel = select_from_scores(P, [1.0, 4.0, 4.0], action_table(), 0.5)
        assert (sel.grasp_index, sel.action_index, sel.fallback) == (1, 6, True)
        assert sel.ranked == []

    def test_shape_mismatch(self):
        """Test that a score matrix of the wrong shape is rejected."""
        from src.errors import ConfigError
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        with pytest.raises(ConfigError):
            select_from_scores(np.zeros((2, 7)), [1.0], action_table(), 0.5)

    @settings(max_examples=200, deadline=None)
    @given(
        data=st.lists(
            st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=7, max_size=7),
            min_size=1, max_size=6,
        ),
        fge=st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=6, max_size=6),
        p_thld=st.floats(0.05, 0.95),
    )
    def test_matches_enumeration(self, data, fge, p_thld):
        """Test the selection against exhaustive enumeration of feasible pairs."""
        from src.inference import select_from_scores
        from src.motion_primitives import action_table
        actions = action_table()
        P = np.array(data)
        scores = fge[:len(data)]
        sel = select_from_scores(P, scores, actions, p_thld)
        feasible = [(i, j) for i in range(P.shape[0]) for j in range(7) if P[i, j] >= p_thld]
        if feasible:
            best = min(feasible, key=lambda ij: (actions[ij[1]].complexity, -scores[ij[0]], ij[0], ij[1]))
            assert (sel.grasp_index, sel.action_index) == best
            assert not sel.fallback
            assert P[sel.grasp_index, sel.action_index] >= p_thld
            assert len(sel.ranked) == len(feasible)
        else:
            assert sel.fallback
            assert sel.grasp_index == int(np.argmax(scores))
            assert sel.action_index == 6


class TestActionGraspInference:
    """Tests for action_grasp_inference."""

    def test_result(self, cable_image):
        """Test the selected grasp and action."""
        from src.inference import action_grasp_inference
        from src.motion_primitives import action_table
        P = np.full((2, 7), 0.2)
        P[1, 4] = 0.7
        res = action_grasp_inference(cable_image, _grasps([3.0, 1.0]), action_table(), MatrixScorer(P))
        assert res.action.id == "a_fs"
        assert res.grasp_index == 1
        assert res.score == 0.7
        assert res.to_dict()["action"] == "a_fs"

    def test_empty_grasps(self, cable_image):
        """Test that an empty grasp set is rejected."""
        from src.errors import EmptyInputError
        from src.inference import action_grasp_inference
        from src.motion_primitives import action_table
        with pytest.raises(EmptyInputError):
            action_grasp_inference(cable_image, [], action_table(), MatrixScorer(np.zeros((1, 7))))

    def test_single_grasp(self, cable_image):
        """Test single-grasp inference and its fallback."""
        from src.inference import single_grasp_inference
        from src.motion_primitives import action_table
        g = _grasps([1.0])[0]
        assert single_grasp_inference(cable_image, g, action_table(), MatrixScorer(np.full((1, 7), 0.9))).id == "a_dl"
        assert single_grasp_inference(cable_image, g, action_table(), MatrixScorer(np.zeros((1, 7)))).id == "a_tfs"


class TestBaselines:
    """Tests for baseline_inference."""

    def test_fixed_baselines(self):
        """Test DL and TFS on the top-scored grasp."""
        from src.inference import baseline_inference
        grasps = _grasps([1.0, 9.0, 3.0])
        a, g, i = baseline_inference("DL", grasps)
        assert (a.id, i) == ("a_dl", 1)
        a, g, i = baseline_inference("tfs", grasps)
        assert (a.id, i, g.u) == ("a_tfs", 1, 1)

    def test_random_baseline(self):
        """Test that RAND is seeded and covers the action set."""
        from src.inference import baseline_inference
        grasps = _grasps([1.0])
        rng = np.random.default_rng(0)
        picks = [baseline_inference("RAND", grasps, rng=rng)[0].id for _ in range(200)]
        assert len(set(picks)) == 7
        rng = np.random.default_rng(0)
        again = [baseline_inference("RAND", grasps, rng=rng)[0].id for _ in range(200)]
        assert picks == again

    def test_random_weights(self):
        """Test weighted RAND and its validation."""
        from src.errors import ConfigError
        from src.inference import baseline_inference
        grasps = _grasps([1.0])
        rng = np.random.default_rng(1)
        w = [0, 0, 0, 1, 0, 0, 0]
        assert {baseline_inference("RAND", grasps, rng=rng, weights=w)[0].id for _ in range(20)} == {"a_f"}
        with pytest.raises(ConfigError):
            baseline_inference("RAND", grasps, rng=rng, weights=[1, 1])
        with pytest.raises(ConfigError):
            baseline_inference("RAND", grasps)

    def test_unknown_baseline(self):
        """Test an unknown baseline name."""
        from src.errors import ConfigError
        from src.inference import baseline_inference
        with pytest.raises(ConfigError):
            baseline_inference("GREEDY", _grasps([1.0]))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
