"""Top-down depth images and their 16-bit PGM encoding.

Pixels hold surface heights in integer millimeters; 0 marks a sensor-invalid
reading. The PGM header carries one comment with the pixel pitch and the floor
height so files are self-describing.
"""
import re
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from src.artifacts import atomic_write_bytes
from src.errors import DataError

logger = logging.getLogger(__name__)

_META_RE = re.compile(r"mm_per_pixel=([0-9.eE+-]+)\s+floor_mm=(\d+)")


@dataclass(frozen=True)
class DepthImage:
    """Height map of the bin seen from above."""
    data: np.ndarray  # uint16, shape (H, W), millimeters
    mm_per_pixel: float
    floor_mm: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.uint16)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def contains(self, u: int, v: int) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height

    def at(self, u: int, v: int) -> int:
        return int(self.data[v, u])

    def object_mask(self) -> np.ndarray:
        """Pixels standing above the bin floor."""
        return self.data.astype(np.int32) > self.floor_mm

    def to_bytes(self) -> bytes:
        """Encode as binary PGM (P5, maxval 65535, big-endian)."""
        header = (
            f"P5\n# mm_per_pixel={self.mm_per_pixel!r} floor_mm={self.floor_mm}\n"
            f"{self.width} {self.height}\n65535\n"
        )
        return header.encode("ascii") + self.data.astype(">u2").tobytes()

    @classmethod
    def from_bytes(
        cls,
        raw: bytes,
        mm_per_pixel: Optional[float] = None,
        floor_mm: Optional[int] = None,
    ) -> "DepthImage":
        """Decode a 16-bit binary PGM."""
        tokens = []
        comments = []
        pos = 0
        while len(tokens) < 4:
            if pos >= len(raw):
                raise DataError("truncated PGM header")
            ch = raw[pos:pos + 1]
            if ch == b"#":
                end = raw.find(b"\n", pos)
                if end < 0:
                    raise DataError("truncated PGM header")
                comments.append(raw[pos + 1:end].decode("ascii", "replace"))
                pos = end + 1
            elif ch.isspace():
                pos += 1
            else:
                start = pos
                while pos < len(raw) and not raw[pos:pos + 1].isspace():
                    pos += 1
                tokens.append(raw[start:pos].decode("ascii", "replace"))
        pos += 1  # single whitespace after maxval

        magic, width, height, maxval = tokens
        if magic != "P5":
            raise DataError(f"unsupported PGM magic {magic!r}")
        try:
            w, h, maxv = int(width), int(height), int(maxval)
        except ValueError:
            raise DataError("non-numeric PGM header field")
        if maxv != 65535:
            raise DataError(f"expected 16-bit PGM (maxval 65535), got {maxv}")
        payload = raw[pos:pos + 2 * w * h]
        if len(payload) != 2 * w * h:
            raise DataError(f"PGM payload has {len(payload)} bytes, expected {2 * w * h}")
        data = np.frombuffer(payload, dtype=">u2").reshape(h, w).astype(np.uint16)

        for comment in comments:
            match = _META_RE.search(comment)
            if match:
                mm_per_pixel = mm_per_pixel or float(match.group(1))
                floor_mm = floor_mm if floor_mm is not None else int(match.group(2))
        if mm_per_pixel is None:
            raise DataError("PGM lacks mm_per_pixel metadata and none was supplied")
        if floor_mm is None:
            valid = data[data > 0]
            floor_mm = int(valid.min()) if valid.size else 0
            logger.warning(f"PGM has no floor metadata, assuming floor_mm={floor_mm}")
        return cls(data=data, mm_per_pixel=float(mm_per_pixel), floor_mm=int(floor_mm))

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_bytes(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path], mm_per_pixel: Optional[float] = None) -> "DepthImage":
        try:
            raw = Path(path).read_bytes()
        except OSError as e:
            raise DataError(f"cannot read depth image {path}: {e}")
        return cls.from_bytes(raw, mm_per_pixel=mm_per_pixel)
