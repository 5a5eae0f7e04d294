"""Harness picking: grasp detection, action selection and simulated evaluation."""
from .errors import HarnessPickingError
from .depth_image import DepthImage
from .scene_gen import SceneSpec, generate_scene, render_depth
from .grasp_fge import GripperTemplate, detect_grasps
from .motion_primitives import action_table, plan_action

__all__ = [
    "HarnessPickingError",
    "DepthImage",
    "SceneSpec",
    "generate_scene",
    "render_depth",
    "GripperTemplate",
    "detect_grasps",
    "action_table",
    "plan_action",
]
