"""Closed-loop picking evaluation against the scene oracle.

An attempt succeeds with a probability that depends on how far the executed
action's complexity exceeds (or falls short of) the oracle's required
complexity. Tasks chain attempts into episodes (consecutive picking empties a
bin, randomized picking takes one pick from a fresh bin) and aggregate
success rate, picks per hour and the mean complexity of executed actions.
"""
import re
import math
import asyncio
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from src.dataset import Sample
from src.errors import ConfigError, EmptyInputError
from src.grasp_fge import GripperTemplate, detect_grasps
from src.inference import InferenceConfig
from src.motion_primitives import ACTION_IDS, ActionSpec, action_table, get_action
from src.picking_agent import PickingAgent
from src.policies import PolicyRoute, get_policy_router
from src.scene_gen import (
    OracleWeights,
    Scene,
    SceneSpec,
    generate_scene,
    perturb_scene,
    pixel_to_scene,
    remove_harness,
    render_depth,
    required_complexity,
    surface_owner,
)
from src.settings import derive_seed

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["policy", "task", "episodes", "success_rate", "pph", "avg_A"]


class Outcome(Enum):
    SUCCESS = "success"
    MULTI_OBJECT = "multi_object"
    DROP = "drop"
    MISS = "miss"
    RECOVERED = "recovered"


class Recovery(Enum):
    KEEP = "keep"
    PUT_BACK = "put_back"


@dataclass(frozen=True)
class OutcomeModel:
    """Logistic success model in delta = A(a) - required.

    With noise disabled an attempt succeeds exactly when delta >= 0.
    """
    offsets: Dict[str, float]
    slope: float
    noise_enabled: bool = True
    recovery_tp: float = 0.9
    recovery_fp: float = 0.05
    t_overhead: float = 16.8
    put_back_penalty: float = 6.0
    seed: int = 0

    def __post_init__(self):
        missing = [a for a in ACTION_IDS if a not in self.offsets]
        if self.noise_enabled and missing:
            raise ConfigError(f"outcome model lacks offsets for {', '.join(missing)}")
        if self.slope < 0:
            raise ConfigError(f"slope must be >= 0, got {self.slope}")
        for name in ("recovery_tp", "recovery_fp"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.t_overhead < 0 or self.put_back_penalty < 0:
            raise ConfigError("t_overhead and put_back_penalty must be >= 0")

    def success_probability(self, action: ActionSpec, delta: int) -> float:
        if not self.noise_enabled:
            return 1.0 if delta >= 0 else 0.0
        return float(expit(self.offsets[action.id] + self.slope * delta))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "offsets": dict(self.offsets),
            "slope": self.slope,
            "noise_enabled": self.noise_enabled,
            "recovery_tp": self.recovery_tp,
            "recovery_fp": self.recovery_fp,
            "t_overhead": self.t_overhead,
            "put_back_penalty": self.put_back_penalty,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "OutcomeModel":
        return cls(**d)

    @classmethod
    def noiseless(cls, **kwargs) -> "OutcomeModel":
        return cls(offsets={a: 0.0 for a in ACTION_IDS}, slope=0.0, noise_enabled=False, **kwargs)


def calibrate_outcome_model(
    required: Sequence[int],
    slopes: Sequence[float] = (0.5, 1.0, 1.5, 2.0, 3.0),
    actions: Optional[Sequence[ActionSpec]] = None,
    targets: Optional[Dict[str, float]] = None,
    **kwargs,
) -> OutcomeModel:
    """Fit per-action offsets to reference success rates.

    For each candidate slope the offsets are solved so that the expected
    success rate of every action over the calibration population equals its
    target; the slope whose offsets vary least across actions is kept.
    """
    req = np.asarray(required, dtype=np.float64)
    if req.size == 0:
        raise EmptyInputError("calibration needs at least one required-complexity value")
    actions = list(actions) if actions is not None else action_table()
    targets = targets or {a.id: a.reference_rate for a in actions}

    best: Optional[Tuple[float, float, Dict[str, float]]] = None
    for slope in slopes:
        offsets = {}
        for a in actions:
            delta = a.complexity - req
            target = targets[a.id]

            def gap(alpha: float) -> float:
                return float(np.mean(expit(alpha + slope * delta))) - target

            offsets[a.id] = float(brentq(gap, -60.0, 60.0, xtol=1e-12))
        spread = float(np.var(list(offsets.values())))
        logger.debug(f"Calibration slope={slope}: offset variance {spread:.4f}")
        if best is None or spread < best[1]:
            best = (float(slope), spread, offsets)
    slope, _, offsets = best
    logger.info(f"Calibrated outcome model: slope={slope}")
    return OutcomeModel(offsets=offsets, slope=slope, **kwargs)


def expected_success_rates(om: OutcomeModel, required: Sequence[int], actions: Optional[Sequence[ActionSpec]] = None) -> Dict[str, float]:
    req = np.asarray(required, dtype=np.float64)
    actions = list(actions) if actions is not None else action_table()
    return {
        a.id: float(np.mean([om.success_probability(a, int(a.complexity - r)) for r in req]))
        for a in actions
    }


@dataclass
class SimEnv:
    """Everything an attempt needs besides the policy."""
    scene_spec: SceneSpec
    template: GripperTemplate
    resolution: Tuple[int, int] = (160, 160)
    mm_per_pixel: float = 3.0
    dropout: float = 0.0
    n_orientations: int = 8
    top_k: int = 10
    oracle: OracleWeights = OracleWeights()

    def observe(self, scene: Scene, seed: int):
        depth = render_depth(scene, self.resolution, self.mm_per_pixel, self.dropout, seed)
        grasps = detect_grasps(depth, self.template, self.n_orientations, self.top_k)
        return depth, grasps


@dataclass
class AttemptResult:
    outcome: Outcome
    scene: Scene
    elapsed: float
    target: Optional[int] = None
    required: Optional[int] = None
    delta: Optional[int] = None


def grasp_target(scene: Scene, g, mm_per_pixel: float) -> Optional[int]:
    """Topmost harness under the grasp pixel center."""
    x, y = pixel_to_scene(scene, g.u, g.v, mm_per_pixel)
    return surface_owner(scene, x, y)[0]


def execute_attempt(
    scene: Scene,
    g,
    a: ActionSpec,
    om: OutcomeModel,
    seed: int,
    mm_per_pixel: float = 3.0,
    weights: OracleWeights = OracleWeights(),
    advance: bool = True,
) -> AttemptResult:
    """Simulate one pick; with advance=False the returned scene is unchanged."""
    rng = np.random.default_rng(seed)
    target = grasp_target(scene, g, mm_per_pixel)
    if target is None:
        logger.debug(f"Grasp ({g.u}, {g.v}) on bare floor")
        return AttemptResult(Outcome.MISS, scene, om.t_overhead)

    required = required_complexity(scene, target, g, mm_per_pixel, weights)
    delta = a.complexity - required
    success = rng.random() < om.success_probability(a, delta)
    elapsed = om.t_overhead + a.exec_time
    if success:
        outcome = Outcome.SUCCESS
        next_scene = remove_harness(scene, target) if advance else scene
    else:
        outcome = Outcome.MULTI_OBJECT if required > 0 else Outcome.DROP
        if advance:
            moving = [target] + scene.neighbors(target)
            next_scene = perturb_scene(scene, moving, int(rng.integers(0, 2**63 - 1)))
        else:
            next_scene = scene
    return AttemptResult(outcome, next_scene, elapsed, target, required, delta)


def recovery_check(result: AttemptResult, om: OutcomeModel, rng: np.random.Generator) -> Recovery:
    """Simulated force check after lifting: fires on entangled lifts, rarely on clean ones."""
    if result.outcome is Outcome.MULTI_OBJECT:
        return Recovery.PUT_BACK if rng.random() < om.recovery_tp else Recovery.KEEP
    if result.outcome is Outcome.SUCCESS:
        return Recovery.PUT_BACK if rng.random() < om.recovery_fp else Recovery.KEEP
    return Recovery.KEEP


@dataclass(frozen=True)
class Task:
    kind: str  # "consecutive" or "randomized"
    n: int = 0
    low: int = 0
    high: int = 0

    @property
    def name(self) -> str:
        if self.kind == "consecutive":
            return f"consecutive:{self.n}"
        return f"randomized:{self.low}-{self.high}"


_TASK_RE = re.compile(r"^(consecutive|randomized):(\d+)(?:-(\d+))?$")


def parse_task(text: str) -> Task:
    """'consecutive:10' or 'randomized:22-25'."""
    m = _TASK_RE.match(text.strip().lower())
    if not m:
        raise ConfigError(f"cannot parse task {text!r}; use consecutive:N or randomized:LO-HI")
    kind, a, b = m.group(1), int(m.group(2)), m.group(3)
    if kind == "consecutive":
        if b is not None or a < 1:
            raise ConfigError(f"consecutive task needs one positive count, got {text!r}")
        return Task(kind, n=a)
    high = int(b) if b is not None else a
    if a < 1 or high < a:
        raise ConfigError(f"invalid randomized range in {text!r}")
    return Task(kind, low=a, high=high)


@dataclass
class AttemptRecord:
    attempt: int
    scene_seed: int
    outcome: str
    elapsed: float
    u: Optional[int] = None
    v: Optional[int] = None
    phi: Optional[float] = None
    action: Optional[str] = None
    complexity: Optional[int] = None
    scores: Optional[List[float]] = None
    target: Optional[int] = None
    required: Optional[int] = None
    fallback: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class EpisodeLog:
    task: str
    policy: str
    episode: int
    scene_seed: int
    n_objects: int
    attempts: List[AttemptRecord] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "policy": self.policy,
            "episode": self.episode,
            "scene_seed": self.scene_seed,
            "n_objects": self.n_objects,
            "attempts": [a.to_dict() for a in self.attempts],
        }


@dataclass
class Metrics:
    success_rate: float
    pph: float
    avg_complexity: float
    attempts: int = 0
    placing_attempts: int = 0
    successes: int = 0
    put_backs: int = 0
    elapsed: float = 0.0

    def to_row(self, policy: str, task: str, episodes: int) -> Dict[str, Any]:
        return {
            "policy": policy,
            "task": task,
            "episodes": episodes,
            "success_rate": f"{self.success_rate:.6f}",
            "pph": f"{self.pph:.4f}",
            "avg_A": f"{self.avg_complexity:.4f}",
        }


def compute_metrics(logs: Sequence[EpisodeLog]) -> Metrics:
    """Success rate over placing attempts, picks per hour, mean executed complexity."""
    records = [a for log in logs for a in log.attempts]
    successes = sum(r.outcome == Outcome.SUCCESS.value for r in records)
    put_backs = sum(r.outcome == Outcome.RECOVERED.value for r in records)
    placing = len(records) - put_backs
    elapsed = sum(r.elapsed for r in records)
    executed = [r.complexity for r in records if r.complexity is not None]
    return Metrics(
        success_rate=successes / placing if placing else 0.0,
        pph=3600.0 * successes / elapsed if elapsed > 0 else 0.0,
        avg_complexity=float(np.mean(executed)) if executed else 0.0,
        attempts=len(records),
        placing_attempts=placing,
        successes=successes,
        put_backs=put_backs,
        elapsed=elapsed,
    )


class OracleScorer:
    """Scores 1.0 for actions at or above the required complexity, else 0.0.

    Reads the live scene through observe(); a diagnostic upper bound for the
    learned scorer, not a policy of its own.
    """

    def __init__(self, mm_per_pixel: float = 3.0, weights: OracleWeights = OracleWeights()):
        self.mm_per_pixel = mm_per_pixel
        self.weights = weights
        self.scene: Optional[Scene] = None

    def observe(self, scene: Scene) -> None:
        self.scene = scene

    def predict_batch(self, o, G, M) -> np.ndarray:
        grasps = list(G)
        if not grasps:
            raise EmptyInputError("predict_batch needs at least one grasp")
        P = np.zeros((len(grasps), len(M)))
        for i, g in enumerate(grasps):
            target = grasp_target(self.scene, g, self.mm_per_pixel)
            if target is None:
                continue
            req = required_complexity(self.scene, target, g, self.mm_per_pixel, self.weights)
            P[i] = [1.0 if a.complexity >= req else 0.0 for a in M]
        return P


def _resolve(policy) -> PolicyRoute:
    return policy if isinstance(policy, PolicyRoute) else get_policy_router().resolve(policy)


def _model_for(route: PolicyRoute, models) -> Any:
    if route.kind != "learned":
        return None
    if isinstance(models, dict):
        model = models.get(route.model_stage)
        if model is None:
            raise ConfigError(f"policy {route.name} needs the {route.model_stage} model")
        return model
    return models


def run_episode(
    policy,
    task: Task,
    episode: int,
    seed: int,
    om: OutcomeModel,
    env: SimEnv,
    models=None,
    inference_cfg: InferenceConfig = InferenceConfig(),
    rand_weights: Optional[Sequence[float]] = None,
) -> EpisodeLog:
    """One episode; scenes depend only on (seed, episode), so policies see matched bins."""
    route = _resolve(policy)
    scene_seed = derive_seed(seed, f"episode:{episode}")
    task_rng = np.random.default_rng(derive_seed(scene_seed, "task"))
    agent = PickingAgent(
        route,
        model=_model_for(route, models),
        inference_cfg=inference_cfg,
        rng=np.random.default_rng(derive_seed(scene_seed, "policy")),
        rand_weights=rand_weights,
    )
    if task.kind == "consecutive":
        n, cap = task.n, 3 * task.n
    else:
        n, cap = int(task_rng.integers(task.low, task.high + 1)), 1
    scene = generate_scene(replace(env.scene_spec, n_objects=n), scene_seed)
    log = EpisodeLog(task.name, route.name, episode, scene_seed, n)

    for attempt in range(cap):
        if not scene.harnesses:
            break
        a_seed = derive_seed(scene_seed, f"attempt:{attempt}")
        depth, grasps = env.observe(scene, a_seed)
        if len(grasps) == 0:
            logger.warning(f"Episode {episode} attempt {attempt}: no grasp candidates, perturbing bin")
            ids = scene.ids
            pick = ids[int(np.random.default_rng(a_seed).integers(len(ids)))]
            scene = perturb_scene(scene, [pick], a_seed)
            log.attempts.append(AttemptRecord(attempt, scene_seed, Outcome.MISS.value, om.t_overhead))
            continue

        decision = agent.decide(depth, grasps, scene)
        result = execute_attempt(scene, decision.grasp, decision.action, om, a_seed,
                                 env.mm_per_pixel, env.oracle)
        outcome, next_scene, elapsed = result.outcome, result.scene, result.elapsed
        if route.recovery:
            rec = recovery_check(result, om, np.random.default_rng(derive_seed(a_seed, "recovery")))
            if rec is Recovery.PUT_BACK:
                outcome = Outcome.RECOVERED
                next_scene = perturb_scene(scene, [result.target], derive_seed(a_seed, "put_back"))
                elapsed += om.put_back_penalty

        g = decision.grasp
        log.attempts.append(AttemptRecord(
            attempt=attempt,
            scene_seed=scene_seed,
            outcome=outcome.value,
            elapsed=elapsed,
            u=g.u,
            v=g.v,
            phi=g.phi,
            action=decision.action.id,
            complexity=decision.action.complexity,
            scores=decision.scores,
            target=result.target,
            required=result.required,
            fallback=decision.fallback,
        ))
        scene = next_scene
    logger.debug(f"{route.name} {task.name} episode {episode}: {len(log.attempts)} attempts")
    return log


def run_task(
    policy,
    task: Task,
    n_episodes: int,
    seed: int,
    om: OutcomeModel,
    env: SimEnv,
    models=None,
    inference_cfg: InferenceConfig = InferenceConfig(),
    rand_weights: Optional[Sequence[float]] = None,
) -> Tuple[Metrics, List[EpisodeLog]]:
    """Run n_episodes sequentially and aggregate."""
    route = _resolve(policy)
    logs = [
        run_episode(route, task, i, seed, om, env, models, inference_cfg, rand_weights)
        for i in range(n_episodes)
    ]
    metrics = compute_metrics(logs)
    logger.info(
        f"{route.name} {task.name}: success={metrics.success_rate:.3f} "
        f"pph={metrics.pph:.1f} avg_A={metrics.avg_complexity:.2f}"
    )
    return metrics, logs


async def run_task_async(
    policy,
    task: Task,
    n_episodes: int,
    seed: int,
    om: OutcomeModel,
    env: SimEnv,
    models=None,
    inference_cfg: InferenceConfig = InferenceConfig(),
    rand_weights: Optional[Sequence[float]] = None,
) -> Tuple[Metrics, List[EpisodeLog]]:
    """Same result as run_task with episodes running in worker threads."""
    route = _resolve(policy)
    if route.kind == "learned" and hasattr(_model_for(route, models), "observe"):
        raise ConfigError("scene-observing scorers cannot be shared across concurrent episodes")
    logs = await asyncio.gather(*[
        asyncio.to_thread(run_episode, route, task, i, seed, om, env, models, inference_cfg, rand_weights)
        for i in range(n_episodes)
    ])
    return compute_metrics(logs), list(logs)


# ---------------------------------------------------------------------------
# data collection


def _pick_grasp(grasps, rng: np.random.Generator, choice: str):
    if choice == "top":
        return grasps[0]
    return grasps[int(rng.integers(len(grasps)))]


def collect_required(
    env: SimEnv,
    object_counts: Sequence[int],
    n_scenes: int,
    seed: int,
    grasp_choice: str = "random_top_k",
) -> np.ndarray:
    """Required complexity at one detected grasp per calibration scene."""
    values = []
    for k in range(n_scenes):
        n = object_counts[k % len(object_counts)]
        sseed = derive_seed(seed, f"calibration:{k}")
        scene = generate_scene(replace(env.scene_spec, n_objects=n), sseed)
        _, grasps = env.observe(scene, sseed)
        if len(grasps) == 0:
            continue
        g = _pick_grasp(grasps, np.random.default_rng(sseed), grasp_choice)
        target = grasp_target(scene, g, env.mm_per_pixel)
        if target is None:
            continue
        values.append(required_complexity(scene, target, g, env.mm_per_pixel, env.oracle))
    return np.array(values, dtype=np.int64)


def collect_samples(
    env: SimEnv,
    om: OutcomeModel,
    total: int,
    object_counts: Sequence[int],
    seed: int,
    actions: Optional[Sequence[ActionSpec]] = None,
    grasp_choice: str = "random_top_k",
) -> List[Sample]:
    """Label one grasp per scene with every action, cycling object counts.

    Each action is executed on the same bin state, so a scene contributes one
    sample per action. The list is truncated to `total`.
    """
    if total < 0:
        raise ConfigError(f"total must be >= 0, got {total}")
    if not object_counts:
        raise ConfigError("object_counts must not be empty")
    actions = list(actions) if actions is not None else action_table()
    samples: List[Sample] = []
    k = 0
    misses = 0
    while len(samples) < total:
        n = object_counts[k % len(object_counts)]
        sseed = derive_seed(seed, f"scene:{k}")
        k += 1
        scene = generate_scene(replace(env.scene_spec, n_objects=n), sseed)
        depth, grasps = env.observe(scene, sseed)
        g = _pick_grasp(grasps, np.random.default_rng(sseed), grasp_choice) if len(grasps) else None
        if g is None or grasp_target(scene, g, env.mm_per_pixel) is None:
            misses += 1
            if misses > 10 * max(total, 1):
                raise EmptyInputError("scenes keep producing no usable grasp")
            continue
        for a in actions:
            res = execute_attempt(scene, g, a, om, derive_seed(sseed, a.id), env.mm_per_pixel,
                                  env.oracle, advance=False)
            samples.append(Sample(
                image=depth,
                u=g.u,
                v=g.v,
                action=a.id,
                label=1 if res.outcome is Outcome.SUCCESS else 0,
                required=res.required,
                scene_seed=sseed,
                target=res.target,
            ))
    samples = samples[:total]
    logger.info(f"Collected {len(samples)} samples from {k} scenes")
    return samples
