"""Procedural wire-harness clutter.

Harnesses are dropped one at a time into the bin. Each one is a planar random
walk, smoothed once and scaled to the harness length, that drapes over what is
already lying in the bin. Every 2D intersection becomes an explicit vertex on
both polylines with a strict height order, recorded in the crossing graph.

A harness's 3D centerline is exactly the harness length: draping lifts parts
of the path, so the tail that no longer fits is cut off. Arc positions (crossings,
connectors, grasp projections) are measured along the horizontal projection.
"""
import math
import logging
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.depth_image import DepthImage
from src.errors import ConfigError, DataError, InvalidGraspError

logger = logging.getLogger(__name__)

SCENE_SCHEMA_VERSION = 1

CABLE = "cable"
CONNECTOR = "connector"

# Generation height field resolution (meters)
_FIELD_CELL = 0.004
_MAX_FIT_ATTEMPTS = 12
_COIL_FRACTION = 0.95


@dataclass(frozen=True)
class BinBounds:
    """Axis-aligned bin footprint with its floor height, in meters."""
    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 0.48
    y_max: float = 0.48
    floor_height: float = 0.01

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def depth(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2


@dataclass(frozen=True)
class OracleWeights:
    """Constants of the required-complexity oracle.

    required = clamp(max(crossing * n - offset, 0) + connector * c + near_end * e, 0, 6)
    """
    crossing: int = 2
    connector: int = 1
    near_end: int = 1
    offset: int = 1
    near_end_fraction: float = 0.1


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the drop model."""
    n_objects: int
    harness_length: float = 0.74
    bin_bounds: BinBounds = field(default_factory=BinBounds)
    control_points: Tuple[int, int] = (11, 31)
    turn_range: Tuple[float, float] = (0.15, 0.6)
    p_above: float = 0.8
    drop_spread: float = 0.12
    cable_radius: float = 0.004
    connector_extent: float = 0.015
    connector_height: float = 0.010
    connector_length: float = 0.03
    mid_branch_probability: float = 0.3

    @property
    def margin(self) -> float:
        return max(self.cable_radius, self.connector_extent)

    def validate(self) -> None:
        b = self.bin_bounds
        if self.n_objects < 0:
            raise ConfigError(f"n_objects must be >= 0, got {self.n_objects}")
        if self.harness_length <= 0:
            raise ConfigError(f"harness_length must be > 0, got {self.harness_length}")
        if b.width <= 0 or b.depth <= 0:
            raise ConfigError("bin_bounds is degenerate")
        lo, hi = self.control_points
        if lo < 2 or hi < lo:
            raise ConfigError(f"invalid control_points range {self.control_points}")
        if not (0 <= self.turn_range[0] <= self.turn_range[1]):
            raise ConfigError(f"invalid turn_range {self.turn_range}")
        if not (0.0 <= self.p_above <= 1.0):
            raise ConfigError(f"p_above must lie in [0, 1], got {self.p_above}")
        if self.cable_radius <= 0 or self.connector_extent < self.cable_radius:
            raise ConfigError("connector_extent must be >= cable_radius > 0")
        if 2 * self.connector_length >= self.harness_length:
            raise ConfigError("connector_length too large for harness_length")
        coil = 2 * _coil_radius(self.harness_length) + 2 * self.margin
        if coil > min(b.width, b.depth):
            raise ConfigError(
                f"bin of {b.width:.3f} x {b.depth:.3f} m cannot hold a harness "
                f"of length {self.harness_length} m"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SceneSpec":
        d = dict(d)
        d["bin_bounds"] = BinBounds(**d.get("bin_bounds", {}))
        for key in ("control_points", "turn_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Harness:
    """One wire harness: a polyline centerline plus connector segments."""
    id: int
    centerline: np.ndarray  # (N, 3) meters
    segment_kinds: Tuple[str, ...]
    cable_radius: float
    connector_extent: float
    connector_height: float = 0.010
    length: float = 0.0
    mid_branch: Optional[float] = None  # arc position of a mid-branch connector

    def __post_init__(self):
        pts = np.array(self.centerline, dtype=np.float64)
        pts.setflags(write=False)
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "segment_kinds", tuple(self.segment_kinds))

    @property
    def xy(self) -> np.ndarray:
        return self.centerline[:, :2]

    def arc_lengths(self) -> np.ndarray:
        """Cumulative planar arc length at each vertex."""
        return _cumulative(self.xy)

    @property
    def planar_length(self) -> float:
        return float(self.arc_lengths()[-1])

    @property
    def centerline_length(self) -> float:
        """Length along the 3D centerline."""
        return _path_length(self.centerline)

    def kind_at(self, s: float) -> str:
        """Segment kind at arc position s."""
        cum = self.arc_lengths()
        i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2))
        return self.segment_kinds[i]

    def project(self, x: float, y: float) -> float:
        """Arc position of the closest centerline point to (x, y)."""
        a = self.xy[:-1]
        d = self.xy[1:] - a
        dd = np.einsum("ij,ij->i", d, d)
        t = np.clip(np.einsum("ij,ij->i", np.array([x, y]) - a, d) / dd, 0.0, 1.0)
        closest = a + d * t[:, None]
        dist = np.hypot(closest[:, 0] - x, closest[:, 1] - y)
        i = int(np.argmin(dist))
        return float(self.arc_lengths()[i] + t[i] * math.sqrt(dd[i]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "centerline": self.centerline.tolist(),
            "segment_kinds": list(self.segment_kinds),
            "cable_radius": self.cable_radius,
            "connector_extent": self.connector_extent,
            "connector_height": self.connector_height,
            "length": self.length,
            "mid_branch": self.mid_branch,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Harness":
        return cls(
            id=int(d["id"]),
            centerline=np.array(d["centerline"], dtype=np.float64),
            segment_kinds=tuple(d["segment_kinds"]),
            cable_radius=float(d["cable_radius"]),
            connector_extent=float(d["connector_extent"]),
            connector_height=float(d.get("connector_height", 0.010)),
            length=float(d["length"]),
            mid_branch=d.get("mid_branch"),
        )


@dataclass(frozen=True)
class Crossing:
    """A 2D intersection between two centerlines.

    For inter-object crossings s_a and s_b are arc positions on harness_a and
    harness_b. For a self-crossing (harness_a == harness_b) s_a is the upper
    pass and s_b the lower one.
    """
    harness_a: int
    harness_b: int
    point: Tuple[float, float]
    above: int
    s_a: float
    s_b: float

    @property
    def is_self(self) -> bool:
        return self.harness_a == self.harness_b

    @property
    def below(self) -> int:
        return self.harness_b if self.above == self.harness_a else self.harness_a

    def involves(self, harness_id: int) -> bool:
        return harness_id in (self.harness_a, self.harness_b)

    def arc_on(self, harness_id: int) -> float:
        return self.s_a if harness_id == self.harness_a else self.s_b

    def to_dict(self) -> Dict[str, Any]:
        return {
            "harness_a": self.harness_a,
            "harness_b": self.harness_b,
            "point": list(self.point),
            "above": self.above,
            "s_a": self.s_a,
            "s_b": self.s_b,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Crossing":
        return cls(
            harness_a=int(d["harness_a"]),
            harness_b=int(d["harness_b"]),
            point=(float(d["point"][0]), float(d["point"][1])),
            above=int(d["above"]),
            s_a=float(d["s_a"]),
            s_b=float(d["s_b"]),
        )


@dataclass(frozen=True)
class Scene:
    """Harnesses in drop order plus their crossing graph."""
    harnesses: Tuple[Harness, ...]
    bin_bounds: BinBounds
    crossing_graph: Tuple[Crossing, ...]
    seed: int
    spec: SceneSpec

    def __post_init__(self):
        object.__setattr__(self, "harnesses", tuple(self.harnesses))
        object.__setattr__(self, "crossing_graph", tuple(self.crossing_graph))

    @property
    def ids(self) -> List[int]:
        return [h.id for h in self.harnesses]

    def harness(self, harness_id: int) -> Harness:
        for h in self.harnesses:
            if h.id == harness_id:
                return h
        raise DataError(f"scene has no harness {harness_id}")

    def inter_crossings(self) -> List[Crossing]:
        return [c for c in self.crossing_graph if not c.is_self]

    def neighbors(self, harness_id: int) -> List[int]:
        """Harnesses sharing an inter-object crossing with harness_id."""
        out = set()
        for c in self.inter_crossings():
            if c.involves(harness_id):
                out.add(c.harness_b if c.harness_a == harness_id else c.harness_a)
        return sorted(out)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "seed": self.seed,
            "bin_bounds": asdict(self.bin_bounds),
            "spec": self.spec.to_dict(),
            "harnesses": [h.to_dict() for h in self.harnesses],
            "crossing_graph": [c.to_dict() for c in self.crossing_graph],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Scene":
        version = d.get("schema_version")
        if version != SCENE_SCHEMA_VERSION:
            raise DataError(f"unsupported scene schema_version {version!r}")
        try:
            return cls(
                harnesses=tuple(Harness.from_dict(h) for h in d["harnesses"]),
                bin_bounds=BinBounds(**d["bin_bounds"]),
                crossing_graph=tuple(Crossing.from_dict(c) for c in d["crossing_graph"]),
                seed=int(d["seed"]),
                spec=SceneSpec.from_dict(d["spec"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed scene document: {e}")


# ---------------------------------------------------------------------------
# geometry helpers


def _cumulative(xy: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(xy, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _path_length(pts: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _fit_length(pts: np.ndarray, length: float) -> np.ndarray:
    """Centerline whose 3D length is `length`.

    A long path loses its tail. A short one (a crossing lift can flatten a dip)
    raises its last vertex; that vertex is never a crossing vertex.
    """
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if abs(total - length) <= 1e-12:
        return pts
    if total < length:
        out = np.array(pts, dtype=np.float64)
        need = seg[-1] + (length - total)
        flat = float(np.hypot(*(out[-1, :2] - out[-2, :2])))
        out[-1, 2] = out[-2, 2] + math.sqrt(need * need - flat * flat)
        return out
    i = int(np.searchsorted(cum, length, side="right") - 1)
    rest = length - cum[i]
    if rest <= 1e-9:
        return np.array(pts[:i + 1], dtype=np.float64)
    end = pts[i] + (rest / seg[i]) * (pts[i + 1] - pts[i])
    return np.vstack([pts[:i + 1], end])


def _coil_radius(length: float) -> float:
    return length / (2 * math.pi * _COIL_FRACTION)


def _chaikin(pts: np.ndarray) -> np.ndarray:
    """One corner-cutting pass that keeps both endpoints."""
    a, b = pts[:-1], pts[1:]
    q = 0.75 * a + 0.25 * b
    r = 0.25 * a + 0.75 * b
    inner = np.empty((2 * len(a), 2))
    inner[0::2] = q
    inner[1::2] = r
    return np.vstack([pts[:1], inner[1:-1], pts[-1:]])


def _segment_intersections(
    p: np.ndarray, q: np.ndarray, skip_adjacent: bool = False
) -> List[Tuple[int, float, int, float]]:
    """All proper intersections between polyline p and polyline q.

    Segment parameters are half-open, t and u in [0, 1), so a crossing at a
    shared vertex is reported once. Returns (i, t, j, u) tuples sorted by i, t.
    """
    a0, d1 = p[:-1], np.diff(p, axis=0)
    b0, d2 = q[:-1], np.diff(q, axis=0)
    denom = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    diff = b0[None, :, :] - a0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (diff[..., 0] * d2[None, :, 1] - diff[..., 1] * d2[None, :, 0]) / denom
        u = (diff[..., 0] * d1[:, None, 1] - diff[..., 1] * d1[:, None, 0]) / denom
    ok = (denom != 0) & (t >= 0) & (t < 1) & (u >= 0) & (u < 1)
    if skip_adjacent:
        i_idx, j_idx = np.indices(ok.shape)
        ok &= j_idx >= i_idx + 2
    hits = [(int(i), float(t[i, j]), int(j), float(u[i, j])) for i, j in zip(*np.nonzero(ok))]
    hits.sort(key=lambda h: (h[0], h[1]))
    return hits


def _arc_at(xy: np.ndarray, seg: int, t: float) -> float:
    cum = _cumulative(xy)
    return float(cum[seg] + t * (cum[seg + 1] - cum[seg]))


def _insert_at_arcs(pts: np.ndarray, arcs: Iterable[float]) -> np.ndarray:
    """Insert vertices at the given planar arc positions (z interpolated)."""
    pts = np.asarray(pts, dtype=np.float64)
    for s in sorted(set(arcs)):
        cum = _cumulative(pts[:, :2])
        i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2))
        span = cum[i + 1] - cum[i]
        t = (s - cum[i]) / span
        if t <= 1e-12 or t >= 1 - 1e-12:
            continue
        new = pts[i] + t * (pts[i + 1] - pts[i])
        pts = np.insert(pts, i + 1, new, axis=0)
    return pts


def _vertex_at(pts: np.ndarray, s: float) -> int:
    return int(np.argmin(np.abs(_cumulative(pts[:, :2]) - s)))


def _segment_kinds(xy: np.ndarray, spec: SceneSpec, mid_branch: Optional[float]) -> Tuple[str, ...]:
    cum = _cumulative(xy)
    total = cum[-1]
    mids = (cum[:-1] + cum[1:]) / 2
    conn = (mids <= spec.connector_length) | (mids >= total - spec.connector_length)
    if mid_branch is not None:
        conn |= np.abs(mids - mid_branch) <= spec.connector_length / 2
    return tuple(CONNECTOR if c else CABLE for c in conn)


# ---------------------------------------------------------------------------
# surfaces


def harness_surface(h: Harness, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Top surface height of harness h above points (px, py); -inf if uncovered."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    out = np.full(px.shape, -np.inf)
    pts = h.centerline
    reach = max(h.cable_radius, h.connector_extent)
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        lo_x, hi_x = min(a[0], b[0]) - reach, max(a[0], b[0]) + reach
        lo_y, hi_y = min(a[1], b[1]) - reach, max(a[1], b[1]) + reach
        near = (px >= lo_x) & (px <= hi_x) & (py >= lo_y) & (py <= hi_y)
        if not near.any():
            continue
        qx, qy = px[near], py[near]
        dx, dy = b[0] - a[0], b[1] - a[1]
        dd = dx * dx + dy * dy
        t_raw = ((qx - a[0]) * dx + (qy - a[1]) * dy) / dd
        t = np.clip(t_raw, 0.0, 1.0)
        cx, cy = a[0] + t * dx, a[1] + t * dy
        r2 = (qx - cx) ** 2 + (qy - cy) ** 2
        z = a[2] + t * (b[2] - a[2])
        rho2 = h.cable_radius ** 2
        tube = np.where(r2 <= rho2, z + np.sqrt(np.maximum(rho2 - r2, 0.0)), -np.inf)
        if h.segment_kinds[i] == CONNECTOR:
            inside = (t_raw >= 0) & (t_raw <= 1) & (r2 <= h.connector_extent ** 2)
            tube = np.maximum(tube, np.where(inside, z + h.connector_height, -np.inf))
        out[near] = np.maximum(out[near], tube)
    return out


def surface_owner(scene: Scene, x: float, y: float) -> Tuple[Optional[int], float]:
    """Topmost harness id and surface height at (x, y); (None, floor) on bare floor."""
    best_id, best_z = None, scene.bin_bounds.floor_height
    px, py = np.array([x]), np.array([y])
    for h in scene.harnesses:
        z = float(harness_surface(h, px, py)[0])
        if z > best_z:
            best_id, best_z = h.id, z
    return best_id, best_z


def _rasterize(
    harnesses: Sequence[Harness], bin_bounds: BinBounds, shape: Tuple[int, int], cell: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Height (meters) and owner maps on a pixel grid anchored at the bin origin."""
    h_px, w_px = shape
    xs = bin_bounds.x_min + (np.arange(w_px) + 0.5) * cell
    ys = bin_bounds.y_min + (np.arange(h_px) + 0.5) * cell
    gx, gy = np.meshgrid(xs, ys)
    height = np.full(shape, bin_bounds.floor_height)
    owner = np.full(shape, -1, dtype=np.int32)
    for h in harnesses:
        surf = harness_surface(h, gx, gy)
        win = surf > height
        height[win] = surf[win]
        owner[win] = h.id
    return height, owner


def render_owner(scene: Scene, resolution: Tuple[int, int], mm_per_pixel: float) -> np.ndarray:
    """Id of the harness owning each pixel, -1 for floor."""
    width, height = resolution
    return _rasterize(scene.harnesses, scene.bin_bounds, (height, width), mm_per_pixel / 1000)[1]


def render_depth(
    scene: Scene,
    resolution: Tuple[int, int] = (160, 160),
    mm_per_pixel: float = 3.0,
    dropout: float = 0.0,
    seed: Optional[int] = None,
):
    """Orthographic top-down render in integer millimeters."""

    width, height = resolution
    if width < 64 or height < 64:
        raise ConfigError(f"resolution must be at least 64x64, got {width}x{height}")
    if mm_per_pixel <= 0:
        raise ConfigError(f"mm_per_pixel must be > 0, got {mm_per_pixel}")
    surf, _ = _rasterize(scene.harnesses, scene.bin_bounds, (height, width), mm_per_pixel / 1000)
    data = np.rint(surf * 1000.0).astype(np.uint16)
    if dropout > 0:
        rng = np.random.default_rng(seed)
        data[rng.random(data.shape) < dropout] = 0
    floor_mm = int(np.rint(scene.bin_bounds.floor_height * 1000.0))
    return DepthImage(data=data, mm_per_pixel=float(mm_per_pixel), floor_mm=floor_mm)


def pixel_to_scene(scene: Scene, u: float, v: float, mm_per_pixel: float) -> Tuple[float, float]:
    """Scene coordinates of a pixel center."""
    cell = mm_per_pixel / 1000
    return (
        scene.bin_bounds.x_min + (u + 0.5) * cell,
        scene.bin_bounds.y_min + (v + 0.5) * cell,
    )


# ---------------------------------------------------------------------------
# drop model


class _Drop:
    """Mutable working state of a scene while harnesses are dropped."""

    def __init__(self, spec: SceneSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        b = spec.bin_bounds
        self.field_shape = (
            max(1, int(math.ceil(b.depth / _FIELD_CELL))),
            max(1, int(math.ceil(b.width / _FIELD_CELL))),
        )
        self.field = np.full(self.field_shape, b.floor_height)
        self.points: Dict[int, np.ndarray] = {}
        self.mid: Dict[int, Optional[float]] = {}
        self.order: List[int] = []
        self.crossings: List[Crossing] = []

    def load(self, scene: Scene) -> None:
        for h in scene.harnesses:
            self.points[h.id] = np.array(h.centerline)
            self.mid[h.id] = h.mid_branch
            self.order.append(h.id)
        self.crossings = list(scene.crossing_graph)
        self._stamp(self.order)

    def _harness(self, hid: int) -> Harness:
        pts = self.points[hid]
        return Harness(
            id=hid,
            centerline=pts,
            segment_kinds=_segment_kinds(pts[:, :2], self.spec, self.mid[hid]),
            cable_radius=self.spec.cable_radius,
            connector_extent=self.spec.connector_extent,
            connector_height=self.spec.connector_height,
            length=self.spec.harness_length,
            mid_branch=self.mid[hid],
        )

    def _stamp(self, ids: Sequence[int]) -> None:
        surf, _ = _rasterize(
            [self._harness(i) for i in ids], self.spec.bin_bounds, self.field_shape, _FIELD_CELL
        )
        np.maximum(self.field, surf, out=self.field)

    def _field_max_along(self, xy: np.ndarray) -> np.ndarray:
        """Max of the (dilated) field along each segment."""
        b = self.spec.bin_bounds
        grown = ndimage.maximum_filter(self.field, size=3, mode="nearest")
        out = np.empty(len(xy) - 1)
        for i in range(len(xy) - 1):
            n = max(2, int(math.ceil(np.hypot(*(xy[i + 1] - xy[i])) / (_FIELD_CELL / 2))) + 1)
            s = np.linspace(0.0, 1.0, n)[:, None]
            line = xy[i] + s * (xy[i + 1] - xy[i])
            col = np.clip(((line[:, 0] - b.x_min) / _FIELD_CELL).astype(int), 0, self.field_shape[1] - 1)
            row = np.clip(((line[:, 1] - b.y_min) / _FIELD_CELL).astype(int), 0, self.field_shape[0] - 1)
            out[i] = grown[row, col].max()
        return out

    def planar_path(self, center: Optional[Tuple[float, float]] = None) -> np.ndarray:
        spec, rng = self.spec, self.rng
        b = spec.bin_bounds
        length = spec.harness_length
        room_x = b.width - 2 * spec.margin
        room_y = b.depth - 2 * spec.margin
        n_ctrl = int(rng.integers(spec.control_points[0], spec.control_points[1] + 1))
        max_turn = float(rng.uniform(*spec.turn_range))
        pts = None
        for _ in range(_MAX_FIT_ATTEMPTS):
            heading0 = rng.uniform(0.0, 2 * math.pi)
            bias = rng.choice([-1.0, 1.0]) * rng.uniform(0.0, max_turn / 2)
            turns = rng.uniform(-max_turn, max_turn, n_ctrl - 1) + bias
            headings = heading0 + np.cumsum(turns)
            steps = np.column_stack([np.cos(headings), np.sin(headings)])
            cand = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
            cand = _chaikin(cand)
            cand *= length / _cumulative(cand)[-1]
            extent = cand.max(axis=0) - cand.min(axis=0)
            if extent[0] <= room_x and extent[1] <= room_y:
                pts = cand
                break
            max_turn = max_turn * 1.25 + 0.05
        if pts is None:
            radius = _coil_radius(length)
            n = 2 * n_ctrl - 2
            start = rng.uniform(0.0, 2 * math.pi)
            ang = start + np.linspace(0.0, 2 * math.pi * _COIL_FRACTION, n)
            pts = radius * np.column_stack([np.cos(ang), np.sin(ang)])
            pts *= length / _cumulative(pts)[-1]

        if center is None:
            cx, cy = b.center
            center = (
                cx + rng.normal() * spec.drop_spread * b.width,
                cy + rng.normal() * spec.drop_spread * b.depth,
            )
        shift = np.asarray(center) - pts.mean(axis=0)
        lo = np.array([b.x_min, b.y_min]) + spec.margin - pts.min(axis=0)
        hi = np.array([b.x_max, b.y_max]) - spec.margin - pts.max(axis=0)
        shift = np.clip(shift, lo, hi)
        return pts + shift

    def drop(self, hid: int, center: Optional[Tuple[float, float]] = None) -> None:
        spec, rng = self.spec, self.rng
        rho = spec.cable_radius
        xy = self.planar_path(center)
        mid = None
        if rng.random() < spec.mid_branch_probability:
            mid = float(rng.uniform(0.3, 0.7) * spec.harness_length)

        # inter-object crossings against everything already in the bin
        pending: List[Tuple[int, float, float, Tuple[float, float]]] = []
        for other in self.order:
            other_xy = self.points[other][:, :2]
            for i, t, j, u in _segment_intersections(xy, other_xy):
                p = xy[i] + t * (xy[i + 1] - xy[i])
                pending.append((other, _arc_at(xy, i, t), _arc_at(other_xy, j, u), (float(p[0]), float(p[1]))))
        own = [p[1] for p in pending]
        for other in sorted({p[0] for p in pending}):
            arcs = [p[2] for p in pending if p[0] == other]
            self.points[other] = _insert_at_arcs(self.points[other], arcs)

        # self-crossings on the new path
        selfs: List[Tuple[float, float, Tuple[float, float]]] = []
        for i, t, j, u in _segment_intersections(xy, xy, skip_adjacent=True):
            p = xy[i] + t * (xy[i + 1] - xy[i])
            selfs.append((_arc_at(xy, i, t), _arc_at(xy, j, u), (float(p[0]), float(p[1]))))
        own += [s for pair in selfs for s in pair[:2]]

        pts = np.column_stack([xy, np.zeros(len(xy))])
        pts = _insert_at_arcs(pts, own)

        # drape over the current pile
        seg_max = self._field_max_along(pts[:, :2])
        support = np.maximum(np.concatenate([seg_max[:1], seg_max]), np.concatenate([seg_max, seg_max[-1:]]))
        pts[:, 2] = support + rho

        touched = set()
        for early, late, point in selfs:
            v_early, v_late = _vertex_at(pts, early), _vertex_at(pts, late)
            if rng.random() < spec.p_above:
                upper_s, lower_s, v_up, v_lo = late, early, v_late, v_early
            else:
                upper_s, lower_s, v_up, v_lo = early, late, v_early, v_late
            pts[v_up, 2] = max(pts[v_up, 2], pts[v_lo, 2] + 2 * rho)
            self.crossings.append(Crossing(hid, hid, point, hid, upper_s, lower_s))

        for other, s_new, s_other, point in pending:
            v_new = _vertex_at(pts, s_new)
            other_pts = self.points[other]
            v_other = _vertex_at(other_pts, s_other)
            if rng.random() < spec.p_above:
                above = hid
                pts[v_new, 2] = max(pts[v_new, 2], other_pts[v_other, 2] + 2 * rho)
            else:
                above = other
                other_pts[v_other, 2] = max(other_pts[v_other, 2], pts[v_new, 2] + 2 * rho)
                touched.add(other)
            self.crossings.append(Crossing(other, hid, point, above, s_other, s_new))

        self.points[hid] = pts
        self.mid[hid] = mid
        self.order.append(hid)
        for i in [hid] + sorted(touched):
            self._settle(i)
        if touched:
            self.field[:] = spec.bin_bounds.floor_height
            self._stamp(self.order)
        else:
            self._stamp([hid])

    def _settle(self, hid: int) -> None:
        """Fit the 3D length and forget crossings on the cut-off tail."""
        pts = _fit_length(self.points[hid], self.spec.harness_length)
        self.points[hid] = pts
        cut = _cumulative(pts[:, :2])[-1] + 1e-12
        self.crossings = [
            c for c in self.crossings
            if not ((c.harness_a == hid and c.s_a > cut) or (c.harness_b == hid and c.s_b > cut))
        ]

    def build(self, seed: int, bin_bounds: BinBounds) -> Scene:
        return Scene(
            harnesses=tuple(self._harness(i) for i in self.order),
            bin_bounds=bin_bounds,
            crossing_graph=tuple(self.crossings),
            seed=seed,
            spec=self.spec,
        )


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Drop spec.n_objects harnesses into an empty bin."""
    spec.validate()
    rng = np.random.default_rng(seed)
    state = _Drop(spec, rng)
    for hid in range(spec.n_objects):
        state.drop(hid)
    scene = state.build(seed, spec.bin_bounds)
    logger.debug(
        f"Generated scene seed={seed} n={spec.n_objects} "
        f"crossings={len(scene.inter_crossings())}"
    )
    return scene


def remove_harness(scene: Scene, harness_id: int) -> Scene:
    """Scene with one harness lifted out; its crossings disappear with it."""
    scene.harness(harness_id)
    return replace(
        scene,
        harnesses=tuple(h for h in scene.harnesses if h.id != harness_id),
        crossing_graph=tuple(c for c in scene.crossing_graph if not c.involves(harness_id)),
    )


def perturb_scene(
    scene: Scene,
    ids: Sequence[int],
    seed: int,
    jitter: float = 0.03,
    extra: Sequence[Harness] = (),
) -> Scene:
    """Re-drop the given harnesses near their old centroids, on top of the rest.

    Harnesses in `extra` (not currently in the scene, e.g. a target that was
    lifted out) are dropped back in as well.
    """
    rng = np.random.default_rng(seed)
    spec = scene.spec
    moving = [scene.harness(i) for i in ids] + list(extra)
    moving_ids = {h.id for h in moving}
    kept = Scene(
        harnesses=tuple(h for h in scene.harnesses if h.id not in moving_ids),
        bin_bounds=scene.bin_bounds,
        crossing_graph=tuple(
            c for c in scene.crossing_graph if not (c.harness_a in moving_ids or c.harness_b in moving_ids)
        ),
        seed=scene.seed,
        spec=spec,
    )
    state = _Drop(spec, rng)
    state.load(kept)
    for h in sorted(moving, key=lambda h: h.id):
        cx, cy = h.xy.mean(axis=0)
        center = (cx + rng.normal() * jitter, cy + rng.normal() * jitter)
        state.drop(h.id, center)
    return state.build(seed, scene.bin_bounds)


# ---------------------------------------------------------------------------
# oracle


def required_complexity(
    scene: Scene,
    target: int,
    grasp,
    mm_per_pixel: float = 3.0,
    weights: OracleWeights = OracleWeights(),
) -> int:
    """Minimal action complexity that frees `target` when grasped at `grasp`.

    A stand-in entanglement measure: n counts other harnesses crossing above
    the target, c flags a connector in any of those crossings and e flags a
    grasp near either end of the target.
    """
    h = scene.harness(target)
    x, y = pixel_to_scene(scene, grasp.u, grasp.v, mm_per_pixel)
    owner, _ = surface_owner(scene, x, y)
    if owner != target:
        raise InvalidGraspError(f"grasp ({grasp.u}, {grasp.v}) is not on harness {target}")

    above = [c for c in scene.inter_crossings() if c.involves(target) and c.above != target]
    n = len(above)
    c = 0
    for cr in above:
        other = scene.harness(cr.above)
        if h.kind_at(cr.arc_on(target)) == CONNECTOR or other.kind_at(cr.arc_on(cr.above)) == CONNECTOR:
            c = 1
            break
    s = h.project(x, y)
    span = h.planar_length
    edge = weights.near_end_fraction * span
    e = 1 if (s <= edge or s >= span - edge) else 0
    value = max(weights.crossing * n - weights.offset, 0) + weights.connector * c + weights.near_end * e
    return int(min(max(value, 0), 6))
