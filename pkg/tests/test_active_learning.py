"""Tests for logical-sample classification and the active learning loop."""
import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def _image():
    from src.depth_image import DepthImage
    return DepthImage(data=np.full((64, 64), 12, dtype=np.uint16), mm_per_pixel=3.0, floor_mm=10)


def _sample(action, label, u=0, v=0, required=None):
    from src.dataset import Sample
    return Sample(image=_image(), u=u, v=v, action=action, label=label, required=required)


def _pool(n, offset=0):
    """Alternating successes and failures, never on the most complex action."""
    from src.motion_primitives import ACTION_IDS
    return [_sample(ACTION_IDS[k % 6], k % 2, u=(offset + k) % 64, v=(offset + k) // 64) for k in range(n)]


class FakeTrainer:
    """Counts calls and returns a token model."""

    def __init__(self, fail_on=None):
        self.calls = []
        self.fail_on = fail_on

    def __call__(self, samples, init_model, lr_scale, seed):
        from src.errors import TrainingDivergenceError
        self.calls.append((len(samples), init_model, lr_scale, seed))
        if self.fail_on is not None and len(self.calls) == self.fail_on:
            raise TrainingDivergenceError(1, float("nan"))
        return {"generation": len(self.calls)}


def logical_inferencer(model, sample):
    """Predicts so that every sample is logical."""
    from src.motion_primitives import get_action
    return get_action(sample.action) if sample.label == 1 else get_action("a_tfs")


def illogical_inferencer(model, sample):
    """Predicts so that every sample is illogical."""
    from src.motion_primitives import get_action
    return get_action("a_tfs") if sample.label == 1 else get_action("a_dl")


class TestClassifyLogical:
    """Tests for classify_logical."""

    def test_truth_table(self):
        """Test all labeled-action, label and predicted-action combinations."""
        from src.active_learning import Logical, classify_logical
        from src.motion_primitives import action_table
        actions = action_table()
        cases = 0
        for labeled in actions:
            for label in (0, 1):
                s = _sample(labeled.id, label)
                for predicted in actions:
                    got = classify_logical(s, predicted)
                    if label == 1:
                        want = Logical.SUCCESS_LOGICAL if predicted.complexity <= labeled.complexity else Logical.ILLOGICAL
                    else:
                        want = Logical.FAILURE_LOGICAL if predicted.complexity > labeled.complexity else Logical.ILLOGICAL
                    assert got is want
                    cases += 1
        assert cases == 98

    def test_failure_on_most_complex_is_never_logical(self):
        """Test that nothing can be more complex than the top action."""
        from src.active_learning import Logical, classify_logical
        from src.motion_primitives import action_table
        s = _sample("a_tfs", 0)
        assert all(classify_logical(s, a) is Logical.ILLOGICAL for a in action_table())


class TestActiveLearnConfig:
    """Tests for ActiveLearnConfig validation."""

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_bad_ratio(self, ratio):
        """Test that transfer ratios outside (0, 1] are rejected."""
        from src.active_learning import ActiveLearnConfig
        from src.errors import ConfigError
        with pytest.raises(ConfigError):
            ActiveLearnConfig(transfer_ratio=ratio)


class TestActiveLearn:
    """Tests for active_learn with stub trainer and inferencer."""

    def _cfg(self, **kw):
        from src.active_learning import ActiveLearnConfig
        base = dict(transfer_ratio=0.4, max_iterations=3, validation_fraction=0.0, seed=5)
        base.update(kw)
        return ActiveLearnConfig(**base)

    def test_conservation(self):
        """Test that samples only move between train and pool."""
        from src.active_learning import active_learn
        init, pool = _pool(4), _pool(10, offset=4)
        _, stats = active_learn(pool, init, self._cfg(), FakeTrainer(), logical_inferencer)
        for st in stats:
            assert st.n_train + st.n_pool == 14

    def test_transfer_budget(self):
        """Test that each iteration moves at most ceil(ratio * pool)."""
        from src.active_learning import active_learn
        _, stats = active_learn(_pool(10, offset=4), _pool(4), self._cfg(), FakeTrainer(), logical_inferencer)
        assert [st.n_pool for st in stats] == [10, 6, 3, 1]
        assert len(stats[1].transferred) == math.ceil(0.4 * 10)
        assert len(stats[2].transferred) == math.ceil(0.4 * 6)

    def test_full_ratio_empties_pool(self):
        """Test that r = 1 with all-logical samples moves everything at once."""
        from src.active_learning import active_learn
        trainer = FakeTrainer()
        _, stats = active_learn(_pool(9, offset=4), _pool(4), self._cfg(transfer_ratio=1.0), trainer, logical_inferencer)
        assert stats[-1].n_pool == 0
        assert stats[-1].n_train == 13
        assert len(stats) == 2
        assert len(trainer.calls) == 2

    def test_illogical_samples_stay(self):
        """Test that illogical samples never leave the pool."""
        from src.active_learning import active_learn
        _, stats = active_learn(_pool(8, offset=4), _pool(4), self._cfg(), FakeTrainer(), illogical_inferencer)
        assert all(st.n_pool == 8 for st in stats)
        assert all(st.transferred == [] for st in stats)
        # scans are bounded per iteration
        assert stats[1].classifications == 8 * 3

    def test_fine_tuning_arguments(self):
        """Test that fine-tuning starts from the previous model at a reduced rate."""
        from src.active_learning import active_learn
        trainer = FakeTrainer()
        model, stats = active_learn(_pool(10, offset=4), _pool(4), self._cfg(max_iterations=2), trainer, logical_inferencer)
        assert trainer.calls[0][1] is None
        assert trainer.calls[0][2] == 1.0
        assert trainer.calls[1][1] == {"generation": 1}
        assert trainer.calls[1][2] == 0.1
        assert trainer.calls[1][0] == 4 + 4
        assert model == {"generation": 3}

    def test_ratios_reported(self):
        """Test the logical ratios recorded per iteration."""
        from src.active_learning import active_learn
        _, stats = active_learn(_pool(10, offset=4), _pool(4), self._cfg(), FakeTrainer(), logical_inferencer)
        assert stats[0].ratio_success_logical == 1.0
        assert stats[0].ratio_failure_logical == 1.0

    def test_deterministic(self):
        """Test that one seed transfers the same samples."""
        from src.active_learning import active_learn
        a = active_learn(_pool(10, offset=4), _pool(4), self._cfg(), FakeTrainer(), logical_inferencer)[1]
        b = active_learn(_pool(10, offset=4), _pool(4), self._cfg(), FakeTrainer(), logical_inferencer)[1]
        assert [st.transferred for st in a] == [st.transferred for st in b]

    def test_empty_initial_set(self):
        """Test that an empty starting set is rejected."""
        from src.active_learning import active_learn
        from src.errors import EmptyInputError
        with pytest.raises(EmptyInputError):
            active_learn(_pool(3), [], self._cfg(), FakeTrainer(), logical_inferencer)

    def test_divergence_keeps_partial_stats(self):
        """Test that a diverging fine-tune reports the completed iterations."""
        from src.active_learning import active_learn
        from src.errors import TrainingDivergenceError
        with pytest.raises(TrainingDivergenceError) as info:
            active_learn(_pool(10, offset=4), _pool(4), self._cfg(), FakeTrainer(fail_on=2), logical_inferencer)
        assert len(info.value.partial_stats) == 1

    def test_checkpoints(self, tmp_path):
        """Test that every iteration writes a model file."""
        from src.active_learning import active_learn

        class JsonModel(dict):
            def to_json(self):
                return "{}"

        def trainer(samples, init_model, lr_scale, seed):
            return JsonModel()

        _, stats = active_learn(_pool(10, offset=4), _pool(4), self._cfg(max_iterations=1), trainer,
                                logical_inferencer, checkpoint_dir=tmp_path)
        assert [os.path.basename(st.checkpoint_path) for st in stats] == ["model_iter0.json", "model_iter1.json"]
        assert all(os.path.exists(st.checkpoint_path) for st in stats)


class TestSelectInitialTraining:
    """Tests for select_initial_training."""

    def test_picks_near_optimal(self):
        """Test that only cheapest-success and one-short failures qualify."""
        from src.active_learning import select_initial_training
        samples = [
            _sample("a_h", 1, u=1, required=1),   # cheapest success
            _sample("a_f", 1, u=2, required=1),   # over-complex success
            _sample("a_dl", 0, u=3, required=1),  # one short
            _sample("a_dl", 0, u=4, required=3),  # far short
            _sample("a_hs", 1, u=5),              # no oracle value
        ]
        initial, rest = select_initial_training(samples, per_action=5, seed=0)
        assert sorted(s.u for s in initial) == [1, 3]
        assert len(initial) + len(rest) == len(samples)

    def test_per_action_cap(self):
        """Test the per-action limit."""
        from src.active_learning import select_initial_training
        samples = [_sample("a_h", 1, u=k, required=1) for k in range(10)]
        initial, rest = select_initial_training(samples, per_action=3, seed=1)
        assert len(initial) == 3
        assert len(rest) == 7


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
