"""Action-grasp inference: the cheapest action that is predicted to succeed.

Pairs scoring at least p_thld form the feasible set. The selected pair has
the lowest action complexity in that set, ties going to the higher grasp
score, then the lower grasp index, then the lower action index. With an empty
feasible set the top-scored grasp is paired with the most complex action.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, EmptyInputError
from src.grasp_fge import Grasp
from src.motion_primitives import ActionSpec, action_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    p_thld: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.p_thld < 1.0):
            raise ConfigError(f"p_thld must lie in (0, 1), got {self.p_thld}")


@dataclass(frozen=True)
class RankedPair:
    grasp_index: int
    action: str
    score: float
    complexity: int
    fge_score: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grasp_index": self.grasp_index,
            "action": self.action,
            "score": self.score,
            "complexity": self.complexity,
            "fge_score": self.fge_score,
        }


@dataclass
class Selection:
    grasp_index: int
    action_index: int
    fallback: bool
    ranked: List[RankedPair] = field(default_factory=list)
    ranked_by_score: List[RankedPair] = field(default_factory=list)


@dataclass
class InferenceResult:
    action: ActionSpec
    grasp: Grasp
    grasp_index: int
    score: float
    fallback: bool
    ranked: List[RankedPair] = field(default_factory=list)
    ranked_by_score: List[RankedPair] = field(default_factory=list)
    scores: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "action": self.action.id,
            "grasp": self.grasp.to_dict(),
            "grasp_index": self.grasp_index,
            "score": self.score,
            "fallback": self.fallback,
            "ranked": [r.to_dict() for r in self.ranked],
            "ranked_by_score": [r.to_dict() for r in self.ranked_by_score],
        }


def select_from_scores(
    P: np.ndarray,
    fge_scores: Sequence[float],
    actions: Sequence[ActionSpec],
    p_thld: float,
) -> Selection:
    """Pure selection rule over a |G| x |M| score matrix."""
    P = np.asarray(P, dtype=np.float64)
    fge = np.asarray(fge_scores, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise EmptyInputError("no grasp candidates to choose from")
    if P.shape != (len(fge), len(actions)):
        raise ConfigError(f"score matrix shape {P.shape} does not match {len(fge)} grasps x {len(actions)} actions")

    def pair(i: int, j: int) -> RankedPair:
        a = actions[j]
        return RankedPair(i, a.id, float(P[i, j]), a.complexity, float(fge[i]))

    feasible = [(i, j) for i, j in zip(*np.nonzero(P >= p_thld))]
    feasible = [(int(i), int(j)) for i, j in feasible]
    ranked_keys = sorted(feasible, key=lambda ij: (actions[ij[1]].complexity, -fge[ij[0]], ij[0], ij[1]))
    ranked = [pair(i, j) for i, j in ranked_keys]
    by_score = [pair(i, j) for i, j in sorted(feasible, key=lambda ij: (-P[ij], ij[0], ij[1]))]

    if ranked_keys:
        i, j = ranked_keys[0]
        return Selection(i, j, False, ranked, by_score)

    # fallback: highest FGE score (first on ties), most complex action (first on ties)
    i = int(np.argmax(fge))
    complexities = [a.complexity for a in actions]
    j = int(np.argmax(complexities))
    return Selection(i, j, True, ranked, by_score)


def action_grasp_inference(o, G, M: Sequence[ActionSpec], model, cfg: InferenceConfig = InferenceConfig()) -> InferenceResult:
    """Pick (a*, g*) from a grasp set using a success scorer."""
    grasps = list(G)
    if not grasps:
        raise EmptyInputError("no grasps detected")
    P = model.predict_batch(o, grasps, M)
    sel = select_from_scores(P, [g.fge_score for g in grasps], M, cfg.p_thld)
    if sel.fallback:
        logger.debug(f"No pair reached p_thld={cfg.p_thld}, falling back to {M[sel.action_index].id}")
    return InferenceResult(
        action=M[sel.action_index],
        grasp=grasps[sel.grasp_index],
        grasp_index=sel.grasp_index,
        score=float(P[sel.grasp_index, sel.action_index]),
        fallback=sel.fallback,
        ranked=sel.ranked,
        ranked_by_score=sel.ranked_by_score,
        scores=P,
    )


def single_grasp_inference(o, g: Grasp, M: Sequence[ActionSpec], model, cfg: InferenceConfig = InferenceConfig()) -> ActionSpec:
    """Cheapest action predicted to succeed for one grasp, else the most complex."""
    return action_grasp_inference(o, [g], M, model, cfg).action


def baseline_inference(
    name: str,
    G,
    M: Sequence[ActionSpec] = None,
    rng: Optional[np.random.Generator] = None,
    weights: Optional[Sequence[float]] = None,
) -> Tuple[ActionSpec, Grasp, int]:
    """DL, RAND and TFS: a fixed or random action on the top-scored grasp."""
    grasps = list(G)
    if not grasps:
        raise EmptyInputError("no grasps detected")
    actions = list(M) if M is not None else action_table()
    i = int(np.argmax([g.fge_score for g in grasps]))
    key = name.upper()
    if key == "DL":
        action = min(actions, key=lambda a: a.complexity)
    elif key == "TFS":
        action = max(actions, key=lambda a: a.complexity)
    elif key == "RAND":
        if rng is None:
            raise ConfigError("RAND baseline needs a random generator")
        p = None
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            if len(w) != len(actions) or (w < 0).any() or w.sum() <= 0:
                raise ConfigError("RAND weights must be non-negative, one per action")
            p = w / w.sum()
        action = actions[int(rng.choice(len(actions), p=p))]
    else:
        raise ConfigError(f"unknown baseline {name!r}")
    return action, grasps[i], i
