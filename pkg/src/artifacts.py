"""Atomic artifact writes.

Every file is written to a temporary sibling and renamed into place, so a
crashed stage never leaves a half-written artifact behind.
"""
import os
import csv
import io
import json
import tempfile
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from src.errors import DataError

logger = logging.getLogger(__name__)


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}")
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def csv_text(columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


class ArtifactWriter:
    """Writes a stage's outputs under one root and remembers what it wrote."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: List[Path] = []

    def _target(self, rel: str) -> Path:
        return self.root / rel

    def bytes(self, rel: str, data: bytes) -> Path:
        path = atomic_write_bytes(self._target(rel), data)
        self.written.append(path)
        return path

    def text(self, rel: str, text: str) -> Path:
        return self.bytes(rel, text.encode("utf-8"))

    def json(self, rel: str, obj: Any) -> Path:
        return self.text(rel, dumps_json(obj))

    def jsonl(self, rel: str, records: Iterable[Dict[str, Any]]) -> Path:
        lines = [json.dumps(r, sort_keys=True) for r in records]
        return self.text(rel, "\n".join(lines) + ("\n" if lines else ""))

    def csv(self, rel: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
        return self.text(rel, csv_text(columns, rows))

    def record(self, path: Path) -> Path:
        """Track a file written by someone else (e.g. a dataset's images)."""
        self.written.append(Path(path))
        return Path(path)
