"""Pipeline configuration.

A JSON document validated by strict pydantic models: unknown keys are
rejected, and the oracle and outcome-model constants have no defaults so every
run states them explicitly. Older documents are upgraded through a chain of
migrations before validation.
"""
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.active_learning import ActiveLearnConfig
from src.asp_model import TrainHyper
from src.errors import ConfigError
from src.grasp_fge import GripperTemplate
from src.inference import InferenceConfig
from src.motion_primitives import ACTION_IDS
from src.scene_gen import BinBounds, OracleWeights, SceneSpec
from src.sim_eval import OutcomeModel, SimEnv

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BinSection(_Section):
    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 0.48
    y_max: float = 0.48
    floor_height: float = 0.01


class OracleSection(_Section):
    """Required-complexity constants. All required."""
    crossing: int
    connector: int
    near_end: int
    offset: int
    near_end_fraction: float = Field(ge=0.0, le=0.5)


class SceneSection(_Section):
    n_objects: int = Field(default=10, ge=0)
    harness_length: float = Field(default=0.74, gt=0)
    bin_bounds: BinSection = BinSection()
    control_points: Tuple[int, int] = (11, 31)
    turn_range: Tuple[float, float] = (0.15, 0.6)
    p_above: float = 0.8
    drop_spread: float = 0.12
    cable_radius: float = 0.004
    connector_extent: float = 0.015
    connector_height: float = 0.010
    connector_length: float = 0.03
    mid_branch_probability: float = 0.3
    oracle: OracleSection


class RenderSection(_Section):
    resolution: Tuple[int, int] = (160, 160)
    mm_per_pixel: float = Field(default=3.0, gt=0)
    dropout: float = Field(default=0.0, ge=0.0, le=1.0)


class GraspSection(_Section):
    template: str = "gripper_template.json"
    n_orientations: int = Field(default=8, ge=1)
    top_k: int = Field(default=10, ge=1)


class DatasetSection(_Section):
    total: int = Field(default=722, ge=0)
    object_counts: List[int] = [6, 10, 12, 18]
    grasp_choice: str = "random_top_k"
    initial_per_action: int = Field(default=40, ge=1)
    eval_fraction: float = Field(default=0.13, ge=0.0, lt=1.0)

    @field_validator("grasp_choice")
    @classmethod
    def _known_choice(cls, v: str) -> str:
        if v not in ("random_top_k", "top"):
            raise ValueError(f"grasp_choice must be 'random_top_k' or 'top', got {v!r}")
        return v

    @field_validator("object_counts")
    @classmethod
    def _non_empty(cls, v: List[int]) -> List[int]:
        if not v or any(n < 1 for n in v):
            raise ValueError("object_counts must be a non-empty list of positive counts")
        return v


class ModelSection(_Section):
    hidden: List[int] = [256, 64]
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=300, ge=1)
    patience: int = Field(default=20, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)

    def hyper(self) -> TrainHyper:
        return TrainHyper(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
        )


class ActiveLearningSection(_Section):
    transfer_ratio: float = 0.4
    max_iterations: int = 3
    max_pool_scans_per_iteration: int = 3
    fine_tune_lr_scale: float = 0.1
    validation_fraction: float = 0.1
    early_stop_rises: int = 2


class InferenceSection(_Section):
    p_thld: float = 0.5
    rand_weights: Optional[List[float]] = None

    @field_validator("rand_weights")
    @classmethod
    def _seven_weights(cls, v):
        if v is not None and (len(v) != len(ACTION_IDS) or any(w < 0 for w in v) or sum(v) <= 0):
            raise ValueError(f"rand_weights needs {len(ACTION_IDS)} non-negative weights with a positive sum")
        return v


class OutcomeSection(_Section):
    """Outcome-model constants. All required; slope/offsets null means calibrate."""
    slope: Optional[float]
    offsets: Optional[Dict[str, float]]
    noise_enabled: bool
    recovery_tp: float = Field(ge=0.0, le=1.0)
    recovery_fp: float = Field(ge=0.0, le=1.0)
    t_overhead: float = Field(ge=0.0)
    put_back_penalty: float = Field(ge=0.0)
    calibration_scenes: int = Field(default=2000, ge=1)

    @model_validator(mode="after")
    def _offsets_complete(self):
        if (self.slope is None) != (self.offsets is None):
            raise ValueError("slope and offsets must both be given or both be null")
        if self.offsets is not None:
            missing = sorted(set(ACTION_IDS) - set(self.offsets))
            unknown = sorted(set(self.offsets) - set(ACTION_IDS))
            if missing or unknown:
                raise ValueError(f"offsets missing {missing}, unknown {unknown}")
        return self

    @property
    def calibrated(self) -> bool:
        return self.offsets is not None


class EvaluationSection(_Section):
    policies: List[str] = ["DL", "RAND", "TFS", "Ours-IM", "Ours-FM", "Ours-FM-R"]
    tasks: List[str] = ["consecutive:5", "consecutive:10", "consecutive:15"]
    episodes: int = Field(default=50, ge=1)
    concurrent: bool = False


class PipelineConfig(_Section):
    version: int = CONFIG_VERSION
    seed: int = Field(default=1, ge=0, lt=2**64)
    output_dir: str = "runs"
    scene: SceneSection
    render: RenderSection = RenderSection()
    grasp: GraspSection = GraspSection()
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    active_learning: ActiveLearningSection = ActiveLearningSection()
    inference: InferenceSection = InferenceSection()
    outcome: OutcomeSection
    evaluation: EvaluationSection = EvaluationSection()

    # resolved at load time, not part of the document
    _base_dir: Path = Path(".")

    # -- conversions into domain types ------------------------------------

    def oracle_weights(self) -> OracleWeights:
        return OracleWeights(**self.scene.oracle.model_dump())

    def scene_spec(self, n_objects: Optional[int] = None, harness_length: Optional[float] = None) -> SceneSpec:
        d = self.scene.model_dump(exclude={"oracle"})
        d["bin_bounds"] = BinBounds(**d["bin_bounds"])
        if n_objects is not None:
            d["n_objects"] = n_objects
        if harness_length is not None:
            d["harness_length"] = harness_length
        spec = SceneSpec(**d)
        spec.validate()
        return spec

    def template_path(self) -> Path:
        path = Path(self.grasp.template)
        return path if path.is_absolute() else self._base_dir / path

    def template(self) -> GripperTemplate:
        return GripperTemplate.load(self.template_path())

    def sim_env(self, harness_length: Optional[float] = None) -> SimEnv:
        return SimEnv(
            scene_spec=self.scene_spec(harness_length=harness_length),
            template=self.template(),
            resolution=tuple(self.render.resolution),
            mm_per_pixel=self.render.mm_per_pixel,
            dropout=self.render.dropout,
            n_orientations=self.grasp.n_orientations,
            top_k=self.grasp.top_k,
            oracle=self.oracle_weights(),
        )

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(p_thld=self.inference.p_thld)

    def active_learn_config(self, seed: int) -> ActiveLearnConfig:
        return ActiveLearnConfig(seed=seed, **self.active_learning.model_dump())

    def outcome_kwargs(self, seed: int) -> Dict[str, Any]:
        o = self.outcome
        return {
            "noise_enabled": o.noise_enabled,
            "recovery_tp": o.recovery_tp,
            "recovery_fp": o.recovery_fp,
            "t_overhead": o.t_overhead,
            "put_back_penalty": o.put_back_penalty,
            "seed": seed,
        }

    def outcome_model(self, seed: int) -> Optional[OutcomeModel]:
        """The configured outcome model, or None when it must be calibrated."""
        if not self.outcome.calibrated:
            if not self.outcome.noise_enabled:
                return OutcomeModel.noiseless(**{k: v for k, v in self.outcome_kwargs(seed).items() if k != "noise_enabled"})
            return None
        return OutcomeModel(offsets=dict(self.outcome.offsets), slope=self.outcome.slope, **self.outcome_kwargs(seed))

    def canonical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON; independent of key order in the source."""
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# migrations


def _rename(d: Dict[str, Any], section: str, old: str, new: str) -> None:
    body = d.get(section)
    if isinstance(body, dict) and old in body:
        body[new] = body.pop(old)


def _migrate_0_to_1(d: Dict[str, Any]) -> Dict[str, Any]:
    _rename(d, "active_learning", "ratio", "transfer_ratio")
    _rename(d, "inference", "threshold", "p_thld")
    d["version"] = 1
    return d


MIGRATIONS: Dict[int, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
    0: _migrate_0_to_1,
}


def migrate(d: Dict[str, Any]) -> Dict[str, Any]:
    """Upgrade a raw document to CONFIG_VERSION."""
    d = json.loads(json.dumps(d))
    version = d.get("version", 0)
    if not isinstance(version, int) or version > CONFIG_VERSION or version < 0:
        raise ConfigError(f"unsupported config version {version!r}")
    while version < CONFIG_VERSION:
        logger.info(f"Migrating config from version {version} to {version + 1}")
        d = MIGRATIONS[version](d)
        version = d["version"]
    return d


def _format_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(d: Dict[str, Any], base_dir: Union[str, Path] = ".") -> PipelineConfig:
    """Validate a raw document; referenced files are resolved against base_dir."""
    try:
        cfg = PipelineConfig.model_validate(migrate(d))
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_format_validation(e)}")
    cfg._base_dir = Path(base_dir)
    if not cfg.template_path().is_file():
        raise ConfigError(f"gripper template not found: {cfg.template_path()}")
    # surfaces domain range errors at load time
    cfg.scene_spec()
    cfg.inference_config()
    cfg.active_learn_config(cfg.seed)
    return cfg


def load_config(path: Union[str, Path]) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    cfg = parse_config(raw, base_dir=path.parent)
    logger.info(f"Loaded config {path} (hash {cfg.config_hash()[:12]})")
    return cfg
