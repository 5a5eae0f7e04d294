"""Action success prediction: p = f(o, g, a).

A small multilayer perceptron over a dual-patch depth descriptor stands in for
an image backbone. Training uses binary cross-entropy and Adam, both written
out in numpy so the whole model serializes to plain JSON.
"""
import json
import math
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.special import expit

from src.depth_image import DepthImage
from src.errors import (
    DataError,
    EmptyInputError,
    ModelCompatibilityError,
    PreconditionError,
    TrainingDivergenceError,
)
from src.motion_primitives import ACTION_IDS, ActionSpec

logger = logging.getLogger(__name__)

FEATURE_VERSION = "dual-patch-32-v1"
PATCH = 32
HEIGHT_SCALE_MM = 100.0
MODEL_FORMAT = 1


@dataclass
class FeatureVector:
    global_patch: np.ndarray
    local_patch: np.ndarray
    grasp_norm: Tuple[float, float]
    action_onehot: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([
            self.global_patch.ravel(),
            self.local_patch.ravel(),
            np.asarray(self.grasp_norm, dtype=np.float64),
            self.action_onehot,
        ])


FEATURE_DIM = 2 * PATCH * PATCH + 2 + len(ACTION_IDS)


def _action_index(a: Union[str, ActionSpec]) -> int:
    action_id = a.id if isinstance(a, ActionSpec) else a
    try:
        return ACTION_IDS.index(action_id)
    except ValueError:
        raise DataError(f"unknown action {action_id!r}")


def normalized_heights(o: DepthImage) -> np.ndarray:
    """Height above floor scaled to [0, 1]; invalid pixels map to 0."""
    data = o.data.astype(np.float64)
    return np.clip((data - o.floor_mm) / HEIGHT_SCALE_MM, 0.0, 1.0)


def _global_patch(norm: np.ndarray) -> np.ndarray:
    h, w = norm.shape
    if h % PATCH == 0 and w % PATCH == 0:
        return norm.reshape(PATCH, h // PATCH, PATCH, w // PATCH).mean(axis=(1, 3))
    return ndimage.zoom(norm, (PATCH / h, PATCH / w), order=1, mode="nearest", grid_mode=True)


def _local_patch(norm: np.ndarray, u: int, v: int) -> np.ndarray:
    """PATCH x PATCH window around (u, v), zero outside the image.

    The window is even-sized, so the grasp pixel lands at [PATCH // 2, PATCH // 2],
    half a pixel below and right of the geometric centre.
    """
    half = PATCH // 2
    padded = np.pad(norm, half, mode="constant", constant_values=0.0)
    return padded[v:v + PATCH, u:u + PATCH]


def featurize(o: DepthImage, g, a: Union[str, ActionSpec]) -> FeatureVector:
    """Descriptor of (image, grasp pixel, action)."""
    u, v = int(g.u), int(g.v)
    if not o.contains(u, v):
        raise PreconditionError(f"grasp ({u}, {v}) lies outside the {o.width}x{o.height} image")
    norm = normalized_heights(o)
    onehot = np.zeros(len(ACTION_IDS))
    onehot[_action_index(a)] = 1.0
    return FeatureVector(
        global_patch=_global_patch(norm),
        local_patch=_local_patch(norm, u, v),
        grasp_norm=(u / o.width, v / o.height),
        action_onehot=onehot,
    )


def _image_rows(o: DepthImage, grasps: Sequence, actions: Sequence) -> np.ndarray:
    """Feature rows for every (grasp, action) pair, image terms computed once."""
    norm = normalized_heights(o)
    gp = _global_patch(norm).ravel()
    rows = []
    for g in grasps:
        u, v = int(g.u), int(g.v)
        if not o.contains(u, v):
            raise PreconditionError(f"grasp ({u}, {v}) lies outside the {o.width}x{o.height} image")
        lp = _local_patch(norm, u, v).ravel()
        for a in actions:
            onehot = np.zeros(len(ACTION_IDS))
            onehot[_action_index(a)] = 1.0
            rows.append(np.concatenate([gp, lp, [u / o.width, v / o.height], onehot]))
    return np.array(rows)


@dataclass
class TrainHyper:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 300
    patience: int = 20
    validation_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    allow_single_class: bool = False


@dataclass
class AspModel:
    """MLP with tanh hidden layers and a sigmoid output."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: int = 0
    feature_version: str = FEATURE_VERSION
    hyper: Dict[str, Any] = field(default_factory=dict)
    curve: List[Dict[str, float]] = field(default_factory=list)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def initialize(
        cls,
        layer_sizes: Sequence[int] = (FEATURE_DIM, 256, 64, 1),
        seed: int = 0,
        zero_output: bool = False,
        feature_version: str = FEATURE_VERSION,
    ) -> "AspModel":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        if zero_output:
            weights[-1][:] = 0.0
            biases[-1][:] = 0.0
        return cls(weights=weights, biases=biases, seed=seed, feature_version=feature_version)

    # -- forward / backward -------------------------------------------------

    def _forward(self, X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        logits = (h @ self.weights[-1] + self.biases[-1])[:, 0]
        return logits, acts

    def loss_and_gradients(
        self, X: np.ndarray, y: np.ndarray
    ) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        """Mean binary cross-entropy and its gradients."""
        logits, acts = self._forward(X)
        loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
        delta = ((expit(logits) - y) / len(y))[:, None]
        gw: List[np.ndarray] = [None] * len(self.weights)
        gb: List[np.ndarray] = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            gw[layer] = acts[layer].T @ delta
            gb[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return loss, gw, gb

    def check_features(self, dim: int) -> None:
        if dim != self.layer_sizes[0]:
            raise ModelCompatibilityError(
                f"feature dimension {dim} does not match model input {self.layer_sizes[0]}"
            )

    def _predict_row(self, row: np.ndarray) -> float:
        logits, _ = self._forward(row[None, :])
        return float(expit(logits[0]))

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        self.check_features(X.shape[1])
        return np.array([self._predict_row(row) for row in X])

    # -- feature-level API ---------------------------------------------------

    def _check_version(self) -> None:
        if self.feature_version != FEATURE_VERSION:
            raise ModelCompatibilityError(
                f"model expects features {self.feature_version!r}, extractor is {FEATURE_VERSION!r}"
            )

    def predict(self, o: DepthImage, g, a) -> float:
        self._check_version()
        row = featurize(o, g, a).as_array()
        self.check_features(len(row))
        return self._predict_row(row)

    def predict_batch(self, o: DepthImage, G, M: Sequence) -> np.ndarray:
        """|G| x |M| success probabilities, one row per grasp."""
        grasps = list(G)
        if not grasps:
            raise EmptyInputError("predict_batch needs at least one grasp")
        self._check_version()
        X = _image_rows(o, grasps, M)
        return self.predict_rows(X).reshape(len(grasps), len(M))

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "kind": "mlp-tanh-sigmoid",
            "layer_sizes": self.layer_sizes,
            "feature_version": self.feature_version,
            "seed": self.seed,
            "hyper": self.hyper,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "curve": self.curve,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AspModel":
        if d.get("format") != MODEL_FORMAT:
            raise ModelCompatibilityError(f"unsupported model format {d.get('format')!r}")
        try:
            model = cls(
                weights=[np.array(w, dtype=np.float64) for w in d["weights"]],
                biases=[np.array(b, dtype=np.float64) for b in d["biases"]],
                seed=int(d["seed"]),
                feature_version=d["feature_version"],
                hyper=dict(d.get("hyper", {})),
                curve=list(d.get("curve", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed model document: {e}")
        if model.layer_sizes != list(d["layer_sizes"]):
            raise ModelCompatibilityError("layer_sizes do not match the stored weights")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AspModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as e:
            raise DataError(f"cannot read model {path}: {e}")
        except json.JSONDecodeError as e:
            raise DataError(f"model {path} is not valid JSON: {e}")

    def copy(self) -> "AspModel":
        return AspModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
            feature_version=self.feature_version,
            hyper=dict(self.hyper),
            curve=list(self.curve),
        )


def predict(model: AspModel, o: DepthImage, g, a) -> float:
    return model.predict(o, g, a)


def predict_batch(model: AspModel, o: DepthImage, G, M: Sequence) -> np.ndarray:
    return model.predict_batch(o, G, M)


def sample_matrix(samples: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    """Feature matrix and label vector for a list of samples."""
    if not samples:
        raise EmptyInputError("no samples")
    X = np.array([featurize(s.image, s, s.action).as_array() for s in samples])
    y = np.array([float(s.label) for s in samples])
    return X, y


def evaluate(model: AspModel, samples: Sequence) -> Dict[str, float]:
    """BCE and accuracy at threshold 0.5."""
    X, y = sample_matrix(samples)
    return evaluate_rows(model, X, y)


def evaluate_rows(model: AspModel, X: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    model.check_features(X.shape[1])
    logits, _ = model._forward(X)
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    acc = float(np.mean((expit(logits) >= 0.5) == (y >= 0.5)))
    return {"loss": loss, "accuracy": acc}


def train_rows(
    X: np.ndarray,
    y: np.ndarray,
    hyper: TrainHyper = TrainHyper(),
    seed: int = 0,
    init_model: Optional[AspModel] = None,
    hidden: Sequence[int] = (256, 64),
    lr_scale: float = 1.0,
    zero_output: bool = False,
) -> AspModel:
    """Adam on mean BCE over a prepared feature matrix."""
    if len(y) == 0:
        raise EmptyInputError("training set is empty")
    if not hyper.allow_single_class and len(np.unique(y)) < 2:
        raise DataError("training set contains a single label; both 0 and 1 are required")

    rng = np.random.default_rng(seed)
    if init_model is not None:
        model = init_model.copy()
        model.check_features(X.shape[1])
    else:
        model = AspModel.initialize([X.shape[1], *hidden, 1], seed=seed, zero_output=zero_output)
    model.seed = seed
    model.hyper = {**asdict(hyper), "hidden": list(hidden), "lr_scale": lr_scale}

    n = len(y)
    n_val = int(math.ceil(hyper.validation_fraction * n)) if hyper.validation_fraction > 0 and n >= 10 else 0
    perm = rng.permutation(n)
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    X_fit, y_fit = X[fit_idx], y[fit_idx]

    lr = hyper.learning_rate * lr_scale
    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    best_val, best_params, stale = math.inf, None, 0
    curve: List[Dict[str, float]] = []

    init = evaluate_rows(model, X_fit, y_fit)
    curve.append({"epoch": 0, "loss": init["loss"], "accuracy": init["accuracy"]})

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(y_fit))
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, gw, gb = model.loss_and_gradients(X_fit[idx], y_fit[idx])
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch, loss)
            step += 1
            for i, (p, g) in enumerate(zip(params, gw + gb)):
                m[i] = hyper.beta1 * m[i] + (1 - hyper.beta1) * g
                v[i] = hyper.beta2 * v[i] + (1 - hyper.beta2) * g * g
                m_hat = m[i] / (1 - hyper.beta1 ** step)
                v_hat = v[i] / (1 - hyper.beta2 ** step)
                p -= lr * m_hat / (np.sqrt(v_hat) + hyper.eps)

        stats = evaluate_rows(model, X_fit, y_fit)
        if not math.isfinite(stats["loss"]):
            raise TrainingDivergenceError(epoch, stats["loss"])
        row = {"epoch": epoch, "loss": stats["loss"], "accuracy": stats["accuracy"]}
        if n_val:
            val = evaluate_rows(model, X[val_idx], y[val_idx])
            row["val_loss"] = val["loss"]
            if val["loss"] < best_val:
                best_val, stale = val["loss"], 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
        curve.append(row)
        if n_val and stale >= hyper.patience:
            logger.debug(f"Early stop at epoch {epoch} (best val_loss={best_val:.4f})")
            break

    if best_params is not None:
        k = len(model.weights)
        model.weights = best_params[:k]
        model.biases = best_params[k:]
    model.curve = curve
    logger.debug(f"Trained on {len(y_fit)} samples, final loss {curve[-1]['loss']:.4f}")
    return model


def train(
    data: Sequence,
    hyper: TrainHyper = TrainHyper(),
    seed: int = 0,
    init_model: Optional[AspModel] = None,
    hidden: Sequence[int] = (256, 64),
    lr_scale: float = 1.0,
) -> AspModel:
    """Fit an AspModel on labeled samples."""
    X, y = sample_matrix(data)
    return train_rows(X, y, hyper, seed=seed, init_model=init_model, hidden=hidden, lr_scale=lr_scale)


def mean_scores_by_action(model: AspModel, samples: Sequence) -> Dict[str, Dict[str, float]]:
    """Mean predicted score per action, split by label ("success" / "failure")."""
    out: Dict[str, Dict[str, float]] = {}
    for action_id in ACTION_IDS:
        row = {}
        for name, label in (("success", 1), ("failure", 0)):
            group = [s for s in samples if s.action == action_id and int(s.label) == label]
            row[name] = float(np.mean([model.predict(s.image, s, s.action) for s in group])) if group else float("nan")
        out[action_id] = row
    return out
