"""Labeled picking samples and their JSONL store.

Each line holds one Sample; the depth image lives next to the JSONL file as a
16-bit PGM and is referenced by relative path. Images shared between samples
are written once, named by content hash.
"""
import json
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from src.artifacts import atomic_write_bytes, atomic_write_text
from src.depth_image import DepthImage
from src.errors import DataError, PreconditionError
from src.motion_primitives import ACTION_IDS, get_action

logger = logging.getLogger(__name__)

IMAGE_DIR = "images"


@dataclass
class Sample:
    """One labeled attempt (o, g, a, S)."""
    image: DepthImage
    u: int
    v: int
    action: str
    label: int
    required: Optional[int] = None  # oracle value, kept for analysis
    scene_seed: Optional[int] = None
    target: Optional[int] = None
    image_path: str = ""
    id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.action not in ACTION_IDS:
            raise DataError(f"unknown action {self.action!r}")
        if not self.image.contains(self.u, self.v):
            raise PreconditionError(f"grasp ({self.u}, {self.v}) lies outside the image")
        if not self.id:
            self.id = sample_id(self.image, self.u, self.v, self.action)

    @property
    def complexity(self) -> int:
        return get_action(self.action).complexity

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "o": self.image_path,
            "u": self.u,
            "v": self.v,
            "a": self.action,
            "S": self.label,
            "required": self.required,
            "scene_seed": self.scene_seed,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any], image: DepthImage) -> "Sample":
        return cls(
            image=image,
            u=int(d["u"]),
            v=int(d["v"]),
            action=str(d["a"]),
            label=int(d["S"]),
            required=d.get("required"),
            scene_seed=d.get("scene_seed"),
            target=d.get("target"),
            image_path=str(d["o"]),
            id=str(d.get("id", "")),
        )


def image_digest(image: DepthImage) -> str:
    return hashlib.sha256(image.to_bytes()).hexdigest()[:16]


def sample_id(image: DepthImage, u: int, v: int, action: str) -> str:
    raw = f"{image_digest(image)}:{u}:{v}:{action}"
    return hashlib.md5(raw.encode()).hexdigest()[:12]


def save_dataset(samples: Sequence[Sample], path: Union[str, Path]) -> Path:
    """Write samples as JSONL plus one PGM per distinct image."""
    path = Path(path)
    image_dir = path.parent / IMAGE_DIR
    written = set()
    lines = []
    for s in samples:
        name = f"{image_digest(s.image)}.pgm"
        rel = f"{IMAGE_DIR}/{name}"
        if name not in written:
            atomic_write_bytes(image_dir / name, s.image.to_bytes())
            written.add(name)
        s.image_path = rel
        lines.append(json.dumps(s.to_dict(), sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
    logger.info(f"Saved {len(samples)} samples ({len(written)} images) to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> List[Sample]:
    """Read a JSONL dataset; errors name the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}")
    images: Dict[str, DepthImage] = {}
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            rel = d["o"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"malformed sample: {e}", line=lineno)
        if rel not in images:
            images[rel] = DepthImage.load(path.parent / rel)
        try:
            samples.append(Sample.from_dict(d, images[rel]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed sample: {e}", line=lineno)
        except DataError as e:
            raise DataError(str(e), line=lineno)
    return samples


def action_counts(samples: Sequence[Sample]) -> Dict[str, int]:
    counts = Counter(s.action for s in samples)
    return {a: counts.get(a, 0) for a in ACTION_IDS}


def split_samples(samples: Sequence[Sample], fraction: float, seed: int):
    """Seeded split into (held_out, rest) with ceil(fraction * n) held out."""
    rng = np.random.default_rng(seed)
    n = len(samples)
    k = int(np.ceil(fraction * n)) if fraction > 0 else 0
    perm = rng.permutation(n)
    held = [samples[i] for i in sorted(perm[:k])]
    rest = [samples[i] for i in sorted(perm[k:])]
    return held, rest
