"""Active learning over logical samples.

Starting from a hand-picked training set, each iteration scans the data pool
in a seeded random order and moves samples whose label agrees with the
model's cheapest-successful-action prediction into the training set, then
fine-tunes the model.
"""
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.artifacts import atomic_write_text
from src.asp_model import AspModel, evaluate
from src.dataset import Sample, split_samples
from src.errors import ConfigError, EmptyInputError, TrainingDivergenceError
from src.grasp_fge import Grasp
from src.inference import InferenceConfig, single_grasp_inference
from src.motion_primitives import ACTION_IDS, ActionSpec, action_table, get_action

logger = logging.getLogger(__name__)

Trainer = Callable[[Sequence[Sample], Optional[AspModel], float, int], AspModel]
Inferencer = Callable[[AspModel, Sample], ActionSpec]


class Logical(Enum):
    SUCCESS_LOGICAL = "success_logical"
    FAILURE_LOGICAL = "failure_logical"
    ILLOGICAL = "illogical"


def classify_logical(sample: Sample, a_p: ActionSpec) -> Logical:
    """Compare a labeled action with the predicted cheapest successful one."""
    labeled = get_action(sample.action).complexity
    if sample.label == 1 and a_p.complexity <= labeled:
        return Logical.SUCCESS_LOGICAL
    if sample.label == 0 and a_p.complexity > labeled:
        return Logical.FAILURE_LOGICAL
    return Logical.ILLOGICAL


@dataclass(frozen=True)
class ActiveLearnConfig:
    transfer_ratio: float = 0.4
    max_iterations: int = 3
    max_pool_scans_per_iteration: int = 3
    seed: int = 0
    fine_tune_lr_scale: float = 0.1
    validation_fraction: float = 0.1
    early_stop_rises: int = 2

    def __post_init__(self):
        if not (0.0 < self.transfer_ratio <= 1.0):
            raise ConfigError(f"transfer_ratio must lie in (0, 1], got {self.transfer_ratio}")
        if self.max_iterations < 0 or self.max_pool_scans_per_iteration < 1:
            raise ConfigError("max_iterations must be >= 0 and max_pool_scans_per_iteration >= 1")


@dataclass
class IterationStats:
    iteration: int
    n_train: int
    n_pool: int
    ratio_success_logical: float
    ratio_failure_logical: float
    checkpoint_path: str = ""
    val_loss: float = float("nan")
    transferred: List[str] = field(default_factory=list)
    classifications: int = 0

    def to_row(self) -> Dict[str, object]:
        return {
            "iteration": self.iteration,
            "n_train": self.n_train,
            "n_pool": self.n_pool,
            "ratio_success_logical": f"{self.ratio_success_logical:.6f}",
            "ratio_failure_logical": f"{self.ratio_failure_logical:.6f}",
            "checkpoint_path": self.checkpoint_path,
        }


STATS_COLUMNS = ["iteration", "n_train", "n_pool", "ratio_success_logical",
                 "ratio_failure_logical", "checkpoint_path"]


def make_inferencer(cfg: InferenceConfig = InferenceConfig(), actions: Optional[Sequence[ActionSpec]] = None) -> Inferencer:
    """Single-grasp inference on a sample's own image and grasp pixel."""
    actions = list(actions) if actions is not None else action_table()

    def infer(model: AspModel, sample: Sample) -> ActionSpec:
        g = Grasp(u=sample.u, v=sample.v, phi=0.0)
        return single_grasp_inference(sample.image, g, actions, model, cfg)

    return infer


def logical_ratios(model: AspModel, samples: Sequence[Sample], inferencer: Inferencer) -> Tuple[float, float]:
    """(success-logical / positives, failure-logical / negatives)."""
    sl = fl = pos = neg = 0
    for s in samples:
        cls = classify_logical(s, inferencer(model, s))
        if s.label == 1:
            pos += 1
            sl += cls is Logical.SUCCESS_LOGICAL
        else:
            neg += 1
            fl += cls is Logical.FAILURE_LOGICAL
    return (sl / pos if pos else float("nan"), fl / neg if neg else float("nan"))


def select_initial_training(
    samples: Sequence[Sample], per_action: int, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """Pick an approximately optimal, action-balanced starting set.

    A sample qualifies when its action is the cheapest that frees the target
    (label 1, complexity == required) or one step short of it (label 0,
    complexity == required - 1). Returns (initial, rest).
    """
    rng = np.random.default_rng(seed)
    chosen = set()
    for action_id in ACTION_IDS:
        a = get_action(action_id)
        cands = [
            k for k, s in enumerate(samples)
            if s.action == action_id and s.required is not None and (
                (s.label == 1 and a.complexity == s.required)
                or (s.label == 0 and a.complexity == s.required - 1)
            )
        ]
        if not cands:
            continue
        pick = rng.permutation(len(cands))[:per_action]
        chosen.update(cands[p] for p in pick)
    initial = [s for k, s in enumerate(samples) if k in chosen]
    rest = [s for k, s in enumerate(samples) if k not in chosen]
    logger.info(f"Initial training set: {len(initial)} samples, pool: {len(rest)}")
    return initial, rest


def active_learn(
    pool: Sequence[Sample],
    init_train: Sequence[Sample],
    cfg: ActiveLearnConfig,
    trainer: Trainer,
    inferencer: Inferencer,
    eval_pool: Optional[Sequence[Sample]] = None,
    checkpoint_dir: Optional[Path] = None,
) -> Tuple[AspModel, List[IterationStats]]:
    """Iterate transfer and fine-tuning until the pool empties or learning stalls.

    Iteration 0 is the model trained on init_train alone. The validation
    split comes from init_train, stays in the training partition for
    bookkeeping and is never fitted on.
    """
    if not init_train:
        raise EmptyInputError("initial training set is empty")
    rng = np.random.default_rng(cfg.seed)
    val, _ = split_samples(list(init_train), cfg.validation_fraction, cfg.seed)
    val_ids = {s.id for s in val}
    train_set = list(init_train)
    pool = list(pool)
    stats: List[IterationStats] = []

    def fit_set() -> List[Sample]:
        return [s for s in train_set if s.id not in val_ids]

    def record(iteration: int, model: AspModel, ratios_on: Sequence[Sample], transferred, classifications) -> IterationStats:
        sl, fl = logical_ratios(model, ratios_on, inferencer)
        path = ""
        if checkpoint_dir is not None:
            path = str(Path(checkpoint_dir) / f"model_iter{iteration}.json")
            atomic_write_text(Path(path), model.to_json())
        val_loss = evaluate(model, val)["loss"] if val else float("nan")
        st = IterationStats(iteration, len(train_set), len(pool), sl, fl, path, val_loss,
                            list(transferred), classifications)
        logger.info(
            f"Iteration {iteration}: train={st.n_train} pool={st.n_pool} "
            f"success_logical={sl:.3f} failure_logical={fl:.3f} val_loss={val_loss:.4f}"
        )
        return st

    try:
        model = trainer(fit_set(), None, 1.0, cfg.seed)
        stats.append(record(0, model, eval_pool if eval_pool is not None else pool, [], 0))

        rises = 0
        for iteration in range(1, cfg.max_iterations + 1):
            if not pool:
                break
            n = len(pool)
            budget = int(math.ceil(cfg.transfer_ratio * n))
            ratios_on = eval_pool if eval_pool is not None else list(pool)
            moved: List[str] = []
            moved_idx = set()
            classifications = 0
            for _ in range(cfg.max_pool_scans_per_iteration):
                for k in rng.permutation(n):
                    if k in moved_idx:
                        continue
                    sample = pool[k]
                    classifications += 1
                    if classify_logical(sample, inferencer(model, sample)) is not Logical.ILLOGICAL:
                        moved_idx.add(int(k))
                        moved.append(sample.id)
                        if len(moved) >= budget:
                            break
                if len(moved) >= budget or len(moved_idx) == n:
                    break
            train_set.extend(pool[k] for k in sorted(moved_idx))
            pool = [s for k, s in enumerate(pool) if k not in moved_idx]

            seed = int(rng.integers(0, 2**63 - 1))
            model = trainer(fit_set(), model, cfg.fine_tune_lr_scale, seed)
            st = record(iteration, model, ratios_on, moved, classifications)
            stats.append(st)

            if val and st.val_loss > stats[-2].val_loss:
                rises += 1
            else:
                rises = 0
            if rises >= cfg.early_stop_rises:
                logger.info(f"Validation loss rose {rises} times in a row, stopping at iteration {iteration}")
                break
    except TrainingDivergenceError as e:
        e.partial_stats = stats
        logger.error(f"Active learning aborted: {e}")
        raise
    return model, stats
