"""Per-episode decision agent.

Given an observation and its grasp candidates, the agent picks an
(action, grasp) pair the way its policy route prescribes: a fixed or random
action for the baselines, action-grasp inference for the learned policies.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.errors import ConfigError
from src.grasp_fge import Grasp
from src.inference import InferenceConfig, action_grasp_inference, baseline_inference
from src.motion_primitives import ActionSpec, action_table
from src.policies import PolicyRoute

logger = logging.getLogger(__name__)

@dataclass
class Decision:
    action: ActionSpec
    grasp: Grasp
    grasp_index: int
    scores: Optional[List[float]] = None  # predicted p for the chosen grasp, per action
    fallback: bool = False


class PickingAgent:
    """Chooses what to do at each attempt of an episode."""

    def __init__(
        self,
        route: PolicyRoute,
        model=None,
        inference_cfg: InferenceConfig = InferenceConfig(),
        actions: Optional[Sequence[ActionSpec]] = None,
        rng: Optional[np.random.Generator] = None,
        rand_weights: Optional[Sequence[float]] = None,
    ):
        if route.kind == "learned" and model is None:
            raise ConfigError(f"policy {route.name} needs a trained model")
        self.route = route
        self.model = model
        self.inference_cfg = inference_cfg
        self.actions = list(actions) if actions is not None else action_table()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.rand_weights = rand_weights

    def decide(self, depth, grasps, scene=None) -> Decision:
        """Pick (action, grasp); `scene` is only shown to scorers that observe it."""
        if self.route.kind == "baseline":
            action, grasp, index = baseline_inference(
                self.route.name, grasps, self.actions, self.rng, self.rand_weights
            )
            decision = Decision(action, grasp, index)
        else:
            if scene is not None and hasattr(self.model, "observe"):
                self.model.observe(scene)
            result = action_grasp_inference(depth, grasps, self.actions, self.model, self.inference_cfg)
            scores = [float(p) for p in result.scores[result.grasp_index]]
            decision = Decision(result.action, result.grasp, result.grasp_index, scores, result.fallback)
            if result.fallback:
                logger.warning(f"{self.route.name}: no pair cleared threshold, using {result.action.id}")

        return decision
