"""Model-free grasp detection by graspability evaluation.

A parallel-jaw template (contact pads between the open fingers, collision
region under the finger bodies) is rotated and slid over the depth map. A
pixel is graspable when the finger bodies clear everything above the grasp
level while the pads cover object pixels; the contact count is Gaussian
smoothed into a score.
"""
import json
import math
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from src.depth_image import DepthImage
from src.errors import ConfigError, DataError, InvalidDepthError

logger = logging.getLogger(__name__)

SMOOTHING_SIGMA = 2.0


@dataclass(frozen=True)
class GripperTemplate:
    """Contact and collision stencils of a two-finger gripper at phi = 0.

    The closing axis runs along template columns; the stencil center is the
    grasp point.
    """
    contact_mask: np.ndarray
    collision_mask: np.ndarray
    finger_gap: float  # open width, meters
    template_resolution: float  # mm per pixel
    insertion_depth_mm: int = 15

    def __post_init__(self):
        for name in ("contact_mask", "collision_mask"):
            arr = np.array(getattr(self, name), dtype=bool)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self) -> None:
        c, k = self.contact_mask, self.collision_mask
        if c.shape != k.shape or c.ndim != 2:
            raise ConfigError("contact and collision masks must share one 2D shape")
        if c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise ConfigError("template masks must have odd side lengths")
        if not c.any() or not k.any():
            raise ConfigError("template masks must be non-empty")
        if (c & k).any():
            raise ConfigError("contact and collision masks overlap")
        _, n = ndimage.label(c)
        if n != 2:
            raise ConfigError(f"contact mask must have two components, found {n}")
        if self.finger_gap <= 0 or self.template_resolution <= 0:
            raise ConfigError("finger_gap and template_resolution must be positive")

    @classmethod
    def from_geometry(
        cls,
        open_width_mm: float = 36.0,
        finger_width_mm: float = 15.0,
        finger_thickness_mm: float = 9.0,
        insertion_depth_mm: int = 15,
        mm_per_pixel: float = 3.0,
    ) -> "GripperTemplate":
        half_open = int(round(open_width_mm / 2 / mm_per_pixel))
        thickness = max(1, int(round(finger_thickness_mm / mm_per_pixel)))
        half_width = int(round(finger_width_mm / 2 / mm_per_pixel))
        half = half_open + thickness
        rows, cols = np.mgrid[-half:half + 1, -half:half + 1]
        in_band = np.abs(rows) <= half_width
        contact = in_band & (np.abs(cols) >= 1) & (np.abs(cols) <= half_open)
        collision = in_band & (np.abs(cols) > half_open) & (np.abs(cols) <= half)
        return cls(
            contact_mask=contact,
            collision_mask=collision,
            finger_gap=open_width_mm / 1000.0,
            template_resolution=float(mm_per_pixel),
            insertion_depth_mm=int(insertion_depth_mm),
        )

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GripperTemplate":
        try:
            if "geometry" in d:
                return cls.from_geometry(**d["geometry"])
            return cls(
                contact_mask=np.array(d["contact_mask"], dtype=bool),
                collision_mask=np.array(d["collision_mask"], dtype=bool),
                finger_gap=float(d["finger_gap"]),
                template_resolution=float(d["template_resolution"]),
                insertion_depth_mm=int(d.get("insertion_depth_mm", 15)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed gripper template: {e}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GripperTemplate":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read gripper template {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"gripper template {path} is not valid JSON: {e}")

    def offsets(self, phi: float) -> Tuple[np.ndarray, np.ndarray]:
        """(dv, du) offsets of the contact and collision cells rotated by phi."""
        return _rotated_offsets(self.contact_mask.tobytes(), self.collision_mask.tobytes(),
                                self.contact_mask.shape, float(phi))


@lru_cache(maxsize=64)
def _rotated_offsets(contact: bytes, collision: bytes, shape: Tuple[int, int], phi: float):
    masks = [np.frombuffer(m, dtype=bool).reshape(shape) for m in (contact, collision)]
    half_r, half_c = shape[0] // 2, shape[1] // 2
    reach = int(math.ceil(math.hypot(half_r, half_c)))
    dv, du = np.mgrid[-reach:reach + 1, -reach:reach + 1]
    cos, sin = math.cos(phi), math.sin(phi)
    # nearest-neighbour inverse rotation into template (row, col)
    col = np.rint(du * cos + dv * sin).astype(int)
    row = np.rint(-du * sin + dv * cos).astype(int)
    inside = (np.abs(row) <= half_r) & (np.abs(col) <= half_c)
    out = []
    for mask in masks:
        hit = np.zeros(dv.shape, dtype=bool)
        hit[inside] = mask[row[inside] + half_r, col[inside] + half_c]
        out.append(np.column_stack([dv[hit], du[hit]]).astype(np.int64))
    return tuple(out)


@dataclass(frozen=True)
class RobotGrasp:
    x: float
    y: float
    z: float
    phi: float


@dataclass(frozen=True)
class Grasp:
    """Pixel grasp (u, v, phi) with its score and optional robot-frame pose."""
    u: int
    v: int
    phi: float
    fge_score: float = 0.0
    robot_frame: Optional[RobotGrasp] = None
    orientation: int = 0

    def to_dict(self) -> Dict[str, Any]:
        d = {"u": self.u, "v": self.v, "phi": self.phi, "score": self.fge_score}
        if self.robot_frame is not None:
            rf = self.robot_frame
            d.update({"gx": rf.x, "gy": rf.y, "gz": rf.z, "gphi": rf.phi})
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Grasp":
        try:
            robot = None
            if all(k in d for k in ("gx", "gy", "gz", "gphi")):
                robot = RobotGrasp(float(d["gx"]), float(d["gy"]), float(d["gz"]), float(d["gphi"]))
            return cls(
                u=int(d["u"]),
                v=int(d["v"]),
                phi=float(d["phi"]) % math.pi,
                fge_score=float(d.get("score", 0.0)),
                robot_frame=robot,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed grasp: {e}")


@dataclass
class GraspSet:
    """Grasps ordered by descending score."""
    grasps: List[Grasp] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.grasps)

    def __iter__(self) -> Iterator[Grasp]:
        return iter(self.grasps)

    def __getitem__(self, i: int) -> Grasp:
        return self.grasps[i]

    @property
    def scores(self) -> np.ndarray:
        return np.array([g.fge_score for g in self.grasps], dtype=np.float64)

    def to_list(self) -> List[Dict[str, Any]]:
        return [g.to_dict() for g in self.grasps]


@dataclass(frozen=True)
class CameraCalibration:
    """Orthographic camera to robot: rotation, translation, scale from mm/px."""
    rotation: float = 0.0
    translation: Tuple[float, float] = (0.0, 0.0)
    height_offset: float = 0.0
    finger_descent: float = 0.0

    @classmethod
    def centered_on(
        cls,
        bin_bounds,
        mm_per_pixel: float,
        robot_center: Tuple[float, float],
        finger_descent: float = 0.015,
    ) -> "CameraCalibration":
        """Calibration that maps the bin center to robot_center, axes aligned."""
        scale = mm_per_pixel / 1000.0
        cu = (bin_bounds.width / scale) / 2 - 0.5
        cv = (bin_bounds.depth / scale) / 2 - 0.5
        return cls(
            rotation=0.0,
            translation=(robot_center[0] - cu * scale, robot_center[1] - cv * scale),
            finger_descent=finger_descent,
        )


def _shift(padded: np.ndarray, pad: int, dv: int, du: int, shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    return padded[pad + dv:pad + dv + h, pad + du:pad + du + w]


def _raw_maps(depth: DepthImage, template: GripperTemplate, phi: float):
    """Unsmoothed height-weighted contact and collision counts, and the validity mask."""
    contact, collision = template.offsets(phi)
    img = depth.data.astype(np.int64)
    h, w = img.shape
    floor = depth.floor_mm
    allo = np.vstack([contact, collision, [[0, 0]]])
    v_lo, v_hi = int(-allo[:, 0].min()), int(allo[:, 0].max())
    u_lo, u_hi = int(-allo[:, 1].min()), int(allo[:, 1].max())
    pad = int(np.abs(allo).max())
    padded = np.pad(img, pad, mode="constant", constant_values=0)

    top = img.copy()
    for dv, du in contact:
        np.maximum(top, _shift(padded, pad, dv, du, img.shape), out=top)
    level = np.maximum(top - template.insertion_depth_mm, floor)

    contact_w = np.zeros(img.shape, dtype=np.int64)
    for dv, du in contact:
        s = _shift(padded, pad, dv, du, img.shape)
        contact_w += np.where(s > level, s - floor, 0)
    coll = np.zeros(img.shape, dtype=np.int64)
    for dv, du in collision:
        coll += _shift(padded, pad, dv, du, img.shape) > level

    # the whole rotated stencil must land inside the image
    valid = np.zeros(img.shape, dtype=bool)
    if h > v_lo + v_hi and w > u_lo + u_hi:
        valid[v_lo:h - v_hi, u_lo:w - u_hi] = True
    return contact_w, coll, valid


def graspability_map(
    depth: DepthImage,
    template: GripperTemplate,
    phi: float,
) -> np.ndarray:
    """Per-pixel graspability at orientation phi.

    The grasp level adapts per pixel: the highest surface under the pads
    minus the insertion depth, never below the floor.
    """
    if abs(template.template_resolution - depth.mm_per_pixel) > 1e-9:
        raise ConfigError(
            f"template resolution {template.template_resolution} mm/px does not match "
            f"image resolution {depth.mm_per_pixel} mm/px"
        )
    contact_w, coll, valid = _raw_maps(depth, template, phi)
    smoothed = ndimage.gaussian_filter(contact_w.astype(np.float64), sigma=SMOOTHING_SIGMA,
                                       mode="constant", cval=0.0)
    keep = valid & (coll == 0) & (contact_w > 0) & depth.object_mask()
    return np.where(keep, smoothed, 0.0)


def orientations(n_orientations: int) -> np.ndarray:
    return np.arange(n_orientations) * (math.pi / n_orientations)


def select_grasps(
    maps: np.ndarray,
    phis: np.ndarray,
    radius_px: float,
    k: int,
) -> List[Grasp]:
    """Greedy non-max suppression over stacked orientation maps.

    Candidates are visited by (score desc, orientation, v, u); a candidate
    within radius_px of a kept grasp is dropped whatever its orientation.
    """
    o_idx, v_idx, u_idx = np.nonzero(maps > 0)
    if len(o_idx) == 0:
        return []
    scores = maps[o_idx, v_idx, u_idx]
    order = np.lexsort((u_idx, v_idx, o_idx, -scores))
    kept: List[Grasp] = []
    kept_uv = np.empty((0, 2))
    r2 = radius_px * radius_px
    for i in order:
        u, v = int(u_idx[i]), int(v_idx[i])
        if len(kept_uv):
            d2 = (kept_uv[:, 0] - u) ** 2 + (kept_uv[:, 1] - v) ** 2
            if (d2 <= r2).any():
                continue
        o = int(o_idx[i])
        kept.append(Grasp(u=u, v=v, phi=float(phis[o]), fge_score=float(scores[i]), orientation=o))
        kept_uv = np.vstack([kept_uv, [u, v]])
        if len(kept) >= k:
            break
    return kept


def detect_grasps(
    depth: DepthImage,
    template: GripperTemplate,
    n_orientations: int = 8,
    k: int = 10,
) -> GraspSet:
    """Top-k graspable poses over n_orientations evenly spaced angles."""
    if n_orientations < 1:
        raise ConfigError(f"n_orientations must be >= 1, got {n_orientations}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    phis = orientations(n_orientations)
    maps = np.stack([graspability_map(depth, template, phi) for phi in phis])
    radius_px = (template.finger_gap * 1000.0 / 2) / depth.mm_per_pixel
    grasps = select_grasps(maps, phis, radius_px, k)
    if not grasps:
        logger.debug("No graspable pixel found")
    return GraspSet(grasps)


def pixel_to_robot(g: Grasp, depth: DepthImage, calib: CameraCalibration) -> Grasp:
    """Attach the 4-DoF robot-frame pose to a pixel grasp."""
    if not depth.contains(g.u, g.v):
        raise InvalidDepthError(f"grasp ({g.u}, {g.v}) lies outside the image")
    height_mm = depth.at(g.u, g.v)
    if height_mm == 0:
        raise InvalidDepthError(f"grasp ({g.u}, {g.v}) is on an invalid depth pixel")
    scale = depth.mm_per_pixel / 1000.0
    c, s = math.cos(calib.rotation), math.sin(calib.rotation)
    px, py = g.u * scale, g.v * scale
    x = c * px - s * py + calib.translation[0]
    y = s * px + c * py + calib.translation[1]
    z = height_mm / 1000.0 + calib.height_offset - calib.finger_descent
    g_phi = (g.phi + calib.rotation) % math.pi
    return replace(g, robot_frame=RobotGrasp(x=x, y=y, z=z, phi=g_phi))


def robot_to_pixel(
    x: float, y: float, mm_per_pixel: float, calib: CameraCalibration
) -> Tuple[float, float]:
    """Inverse of the planar part of pixel_to_robot (sub-pixel result)."""
    scale = mm_per_pixel / 1000.0
    dx, dy = x - calib.translation[0], y - calib.translation[1]
    c, s = math.cos(calib.rotation), math.sin(calib.rotation)
    return (c * dx + s * dy) / scale, (-s * dx + c * dy) / scale
