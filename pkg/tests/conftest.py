"""Shared fixtures for harness picking tests."""
import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

FLOOR_MM = 10
CABLE_Z = 0.014  # resting on a 10 mm floor with a 4 mm radius


@pytest.fixture
def template():
    """Default two-finger gripper at 3 mm/px."""
    from src.grasp_fge import GripperTemplate
    return GripperTemplate.from_geometry()


@pytest.fixture
def straight_harness():
    """Factory for a straight harness between two bin points at constant height."""
    from src.scene_gen import Harness, SceneSpec, _segment_kinds

    def build(hid, start, end, z=CABLE_Z, n=41, spec=None):
        spec = spec or SceneSpec(n_objects=1)
        xs = np.linspace(start[0], end[0], n)
        ys = np.linspace(start[1], end[1], n)
        pts = np.column_stack([xs, ys, np.full(n, z)])
        length = float(np.hypot(end[0] - start[0], end[1] - start[1]))
        return Harness(
            id=hid,
            centerline=pts,
            segment_kinds=_segment_kinds(pts[:, :2], spec, None),
            cable_radius=spec.cable_radius,
            connector_extent=spec.connector_extent,
            connector_height=spec.connector_height,
            length=length,
        )

    return build


@pytest.fixture
def make_scene():
    """Factory for a hand-built scene from harnesses and crossings."""
    from src.scene_gen import BinBounds, Scene, SceneSpec

    def build(harnesses, crossings=(), seed=0):
        spec = SceneSpec(n_objects=len(harnesses))
        return Scene(
            harnesses=tuple(harnesses),
            bin_bounds=BinBounds(),
            crossing_graph=tuple(crossings),
            seed=seed,
            spec=spec,
        )

    return build


@pytest.fixture
def cable_image():
    """64x64 depth image with one horizontal 3-px cable on rows 30..32."""
    from src.depth_image import DepthImage
    data = np.full((64, 64), FLOOR_MM, dtype=np.uint16)
    data[30:33, 8:56] = 20
    return DepthImage(data=data, mm_per_pixel=3.0, floor_mm=FLOOR_MM)


@pytest.fixture
def random_depth():
    """Factory for synthetic clutter images: random raised bars on a flat floor."""
    from src.depth_image import DepthImage

    def build(seed, size=64, n_bars=6):
        rng = np.random.default_rng(seed)
        data = np.full((size, size), FLOOR_MM, dtype=np.uint16)
        for _ in range(n_bars):
            height = int(rng.integers(14, 40))
            if rng.random() < 0.5:
                r = int(rng.integers(0, size - 3))
                c0, c1 = sorted(rng.integers(0, size, 2))
                data[r:r + 3, c0:c1 + 1] = np.maximum(data[r:r + 3, c0:c1 + 1], height)
            else:
                c = int(rng.integers(0, size - 3))
                r0, r1 = sorted(rng.integers(0, size, 2))
                data[r0:r1 + 1, c:c + 3] = np.maximum(data[r0:r1 + 1, c:c + 3], height)
        return DepthImage(data=data, mm_per_pixel=3.0, floor_mm=FLOOR_MM)

    return build


@pytest.fixture
def toy_samples():
    """Factory for labeled samples on small random images."""
    from src.dataset import Sample
    from src.depth_image import DepthImage
    from src.motion_primitives import ACTION_IDS

    def build(n, seed=0, label_fn=None):
        rng = np.random.default_rng(seed)
        out = []
        for k in range(n):
            data = rng.integers(FLOOR_MM, FLOOR_MM + 60, size=(64, 64)).astype(np.uint16)
            image = DepthImage(data=data, mm_per_pixel=3.0, floor_mm=FLOOR_MM)
            action = ACTION_IDS[k % len(ACTION_IDS)]
            u, v = int(rng.integers(0, 64)), int(rng.integers(0, 64))
            label = label_fn(action, k) if label_fn else int(rng.integers(0, 2))
            out.append(Sample(image=image, u=u, v=v, action=action, label=label))
        return out

    return build
