"""Experiment pipeline: calibrate → gen-dataset → train → active-learn → simulate → report.

Each stage derives its seed from the global seed and its own name, writes its
outputs through an ArtifactWriter and is recorded in a RunManifest. A re-run
under the same config hash skips stages whose listed outputs all still exist;
once a stage runs, every later stage runs too.
"""
import json
import asyncio
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from src.active_learning import STATS_COLUMNS, active_learn, make_inferencer, select_initial_training
from src.artifacts import ArtifactWriter, atomic_write_text, dumps_json
from src.asp_model import FEATURE_VERSION, MODEL_FORMAT, AspModel, mean_scores_by_action, train
from src.config import CONFIG_VERSION, PipelineConfig
from src.dataset import Sample, action_counts, load_dataset, save_dataset, split_samples
from src.errors import DataError
from src.report import write_report
from src.scene_gen import SCENE_SCHEMA_VERSION
from src.settings import derive_seed
from src.sim_eval import (
    METRICS_COLUMNS,
    OutcomeModel,
    calibrate_outcome_model,
    collect_required,
    collect_samples,
    parse_task,
    run_task,
    run_task_async,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
STAGES = ["calibrate", "gen-dataset", "train", "active-learn", "simulate", "report"]

OUTCOME_PATH = "calibration/outcome_model.json"
DATASET_PATH = "dataset/samples.jsonl"
INIT_PATH = "dataset/init.jsonl"
POOL_PATH = "dataset/pool.jsonl"
EVAL_PATH = "dataset/eval.jsonl"
INITIAL_MODEL_PATH = "models/initial.json"
FINAL_MODEL_PATH = "models/final.json"
STATS_PATH = "active_learning/stats.csv"
METRICS_PATH = "evaluation/metrics.csv"


def artifact_versions() -> Dict[str, Any]:
    return {
        "config": CONFIG_VERSION,
        "scene_schema": SCENE_SCHEMA_VERSION,
        "model_format": MODEL_FORMAT,
        "feature_version": FEATURE_VERSION,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class StageRecord:
    outputs: List[str]
    seed: int
    finished_at: str

    def to_dict(self) -> Dict[str, Any]:
        return {"outputs": self.outputs, "seed": self.seed, "finished_at": self.finished_at}


@dataclass
class RunManifest:
    """What each stage produced, under which config."""
    config_hash: str
    versions: Dict[str, Any] = field(default_factory=artifact_versions)
    stages: Dict[str, StageRecord] = field(default_factory=dict)
    created_at: str = field(default_factory=_now)
    updated_at: str = ""

    def is_current(self, stage: str, root: Path) -> bool:
        record = self.stages.get(stage)
        if record is None:
            return False
        missing = [p for p in record.outputs if not (root / p).exists()]
        if missing:
            logger.info(f"Stage {stage}: {len(missing)} listed output(s) missing, re-running")
            return False
        return True

    def record(self, stage: str, root: Path, written: Sequence[Path], seed: int) -> None:
        outputs = sorted({Path(p).resolve().relative_to(root.resolve()).as_posix() for p in written})
        self.stages[stage] = StageRecord(outputs, seed, _now())

    def invalidate_from(self, stage: str) -> None:
        for later in STAGES[STAGES.index(stage):]:
            self.stages.pop(later, None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "versions": self.versions,
            "stages": {k: v.to_dict() for k, v in self.stages.items()},
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunManifest":
        return cls(
            config_hash=d["config_hash"],
            versions=dict(d.get("versions", {})),
            stages={k: StageRecord(**v) for k, v in d.get("stages", {}).items()},
            created_at=d.get("created_at", ""),
            updated_at=d.get("updated_at", ""),
        )

    def save(self, root: Path) -> Path:
        self.updated_at = _now()
        return atomic_write_text(root / MANIFEST_NAME, dumps_json(self.to_dict()))

    @classmethod
    def load(cls, root: Path) -> Optional["RunManifest"]:
        path = root / MANIFEST_NAME
        if not path.exists():
            return None
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            logger.warning(f"Ignoring unreadable manifest {path}: {e}")
            return None


# ---------------------------------------------------------------------------
# stages


def write_dataset(writer: ArtifactWriter, rel: str, samples: Sequence[Sample]) -> Path:
    path = save_dataset(samples, writer.root / rel)
    writer.record(path)
    for s in samples:
        writer.record(path.parent / s.image_path)
    return path


def stage_calibrate(cfg: PipelineConfig, writer: ArtifactWriter, seed: int) -> OutcomeModel:
    """Use the configured outcome model, or fit one over calibration scenes."""
    om = cfg.outcome_model(seed)
    if om is None:
        env = cfg.sim_env()
        required = collect_required(env, cfg.dataset.object_counts, cfg.outcome.calibration_scenes,
                                    seed, cfg.dataset.grasp_choice)
        om = calibrate_outcome_model(required, **cfg.outcome_kwargs(seed))
    writer.json(OUTCOME_PATH, om.to_dict())
    return om


def stage_gen_dataset(cfg: PipelineConfig, om: OutcomeModel, writer: ArtifactWriter, seed: int) -> List[Sample]:
    samples = collect_samples(cfg.sim_env(), om, cfg.dataset.total, cfg.dataset.object_counts, seed,
                              grasp_choice=cfg.dataset.grasp_choice)
    write_dataset(writer, DATASET_PATH, samples)
    counts = action_counts(samples)
    logger.info(f"Per-action sample counts: {counts}")
    return samples


def make_trainer(cfg: PipelineConfig) -> Callable:
    hyper = cfg.model.hyper()
    hidden = tuple(cfg.model.hidden)

    def trainer(samples, init_model, lr_scale, seed):
        return train(samples, hyper, seed=seed, init_model=init_model, hidden=hidden, lr_scale=lr_scale)

    return trainer


def stage_train(cfg: PipelineConfig, samples: Sequence[Sample], writer: ArtifactWriter, seed: int) -> AspModel:
    """Split off the frozen evaluation pool, pick the initial set and fit the initial model."""
    held, rest = split_samples(list(samples), cfg.dataset.eval_fraction, derive_seed(seed, "eval-split"))
    init, pool = select_initial_training(rest, cfg.dataset.initial_per_action, derive_seed(seed, "initial-set"))
    if not init:
        raise DataError("no sample qualifies for the initial training set")
    write_dataset(writer, INIT_PATH, init)
    write_dataset(writer, POOL_PATH, pool)
    write_dataset(writer, EVAL_PATH, held)
    model = make_trainer(cfg)(init, None, 1.0, seed)
    writer.text(INITIAL_MODEL_PATH, model.to_json())
    return model


def stage_active_learn(
    cfg: PipelineConfig,
    init: Sequence[Sample],
    pool: Sequence[Sample],
    eval_pool: Sequence[Sample],
    writer: ArtifactWriter,
    seed: int,
) -> AspModel:
    al_cfg = cfg.active_learn_config(seed)
    inferencer = make_inferencer(cfg.inference_config())
    checkpoints = writer.root / "active_learning" / "checkpoints"
    model, stats = active_learn(pool, init, al_cfg, make_trainer(cfg), inferencer,
                                eval_pool=eval_pool or None, checkpoint_dir=checkpoints)
    for st in stats:
        if st.checkpoint_path:
            writer.record(Path(st.checkpoint_path))
            # manifest-relative in the CSV
            st.checkpoint_path = Path(st.checkpoint_path).resolve().relative_to(writer.root.resolve()).as_posix()
    writer.csv(STATS_PATH, STATS_COLUMNS, [st.to_row() for st in stats])
    writer.text(FINAL_MODEL_PATH, model.to_json())
    if eval_pool:
        writer.json("active_learning/mean_scores.json", mean_scores_by_action(model, eval_pool))
    return model


def evaluate_policies(
    cfg: PipelineConfig,
    om: OutcomeModel,
    models: Dict[str, AspModel],
    writer: ArtifactWriter,
    seed: int,
    policies: Optional[Sequence[str]] = None,
    tasks: Optional[Sequence[str]] = None,
    episodes: Optional[int] = None,
    harness_length: Optional[float] = None,
    metrics_path: str = METRICS_PATH,
) -> Path:
    """Every policy on every task, matched seeds per task; one metrics CSV."""
    env = cfg.sim_env(harness_length=harness_length)
    n_episodes = episodes or cfg.evaluation.episodes
    rand_weights = cfg.inference.rand_weights
    rows = []
    for task_text in tasks or cfg.evaluation.tasks:
        task = parse_task(task_text)
        task_seed = derive_seed(seed, task.name)
        for policy in policies or cfg.evaluation.policies:
            if cfg.evaluation.concurrent:
                metrics, logs = asyncio.run(run_task_async(policy, task, n_episodes, task_seed, om, env,
                                                           models, cfg.inference_config(), rand_weights))
            else:
                metrics, logs = run_task(policy, task, n_episodes, task_seed, om, env,
                                         models, cfg.inference_config(), rand_weights)
            name = logs[0].policy if logs else policy
            safe_task = task.name.replace(":", "_")
            writer.jsonl(f"evaluation/logs/{name}_{safe_task}.jsonl", [log.to_dict() for log in logs])
            rows.append(metrics.to_row(name, task.name, n_episodes))
    return writer.csv(metrics_path, METRICS_COLUMNS, rows)


def run_all(cfg: PipelineConfig, root: Optional[Path] = None, force: bool = False) -> RunManifest:
    """Run every stage, skipping those already complete for this config."""
    root = Path(root or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    config_hash = cfg.config_hash()
    manifest = RunManifest.load(root)
    if manifest is None or manifest.config_hash != config_hash or force:
        if manifest is not None and manifest.config_hash != config_hash:
            logger.info("Config changed since the last run, starting a fresh manifest")
        manifest = RunManifest(config_hash)
    atomic_write_text(root / "config.json", dumps_json(cfg.canonical()))

    dirty = False
    for stage in STAGES:
        seed = derive_seed(cfg.seed, stage)
        if not dirty and manifest.is_current(stage, root):
            logger.info(f"Stage {stage}: up to date, skipping")
            continue
        if not dirty:
            manifest.invalidate_from(stage)
        dirty = True
        logger.info(f"Stage {stage}: running (seed {seed})")
        writer = ArtifactWriter(root)
        if stage == "calibrate":
            stage_calibrate(cfg, writer, seed)
        elif stage == "gen-dataset":
            om = OutcomeModel.from_dict(json.loads((root / OUTCOME_PATH).read_text()))
            stage_gen_dataset(cfg, om, writer, seed)
        elif stage == "train":
            stage_train(cfg, load_dataset(root / DATASET_PATH), writer, seed)
        elif stage == "active-learn":
            stage_active_learn(cfg, load_dataset(root / INIT_PATH), load_dataset(root / POOL_PATH),
                               load_dataset(root / EVAL_PATH), writer, seed)
        elif stage == "simulate":
            om = OutcomeModel.from_dict(json.loads((root / OUTCOME_PATH).read_text()))
            models = {
                "initial": AspModel.load(root / INITIAL_MODEL_PATH),
                "final": AspModel.load(root / FINAL_MODEL_PATH),
            }
            evaluate_policies(cfg, om, models, writer, seed)
        elif stage == "report":
            for path in write_report([root / METRICS_PATH], root / "report"):
                writer.record(path)
        manifest.record(stage, root, writer.written, seed)
        manifest.save(root)
    logger.info(f"Pipeline complete under {root}")
    return manifest
