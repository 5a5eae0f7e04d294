"""Summary table and per-task bar charts from metrics CSVs."""
import io
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.artifacts import ArtifactWriter  # noqa: E402
from src.errors import DataError, EmptyInputError  # noqa: E402
from src.policies import POLICY_ORDER  # noqa: E402
from src.sim_eval import METRICS_COLUMNS  # noqa: E402

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["task", "policy", "episodes", "success_rate", "pph", "avg_A"]
_PANELS = [("success_rate", "Success rate (%)", 100.0), ("pph", "PPH", 1.0), ("avg_A", "Avg. complexity", 1.0)]

matplotlib.rcParams["svg.hashsalt"] = "harness-picking"


@dataclass(frozen=True)
class MetricsRow:
    policy: str
    task: str
    episodes: int
    success_rate: float
    pph: float
    avg_A: float

    def to_row(self) -> Dict[str, object]:
        return {
            "task": self.task,
            "policy": self.policy,
            "episodes": self.episodes,
            "success_rate": f"{self.success_rate:.6f}",
            "pph": f"{self.pph:.4f}",
            "avg_A": f"{self.avg_A:.4f}",
        }


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    """Parse one metrics CSV; errors carry the offending line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read metrics {path}: {e}")
    if not text.strip():
        raise EmptyInputError(f"metrics file {path} is empty")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != METRICS_COLUMNS:
        raise DataError(f"{path}: expected header {','.join(METRICS_COLUMNS)}", line=1)
    rows = []
    for raw in reader:
        if None in raw or any(v is None for v in raw.values()):
            raise DataError(f"{path}: wrong number of fields", line=reader.line_num)
        try:
            rows.append(MetricsRow(
                policy=raw["policy"],
                task=raw["task"],
                episodes=int(raw["episodes"]),
                success_rate=float(raw["success_rate"]),
                pph=float(raw["pph"]),
                avg_A=float(raw["avg_A"]),
            ))
        except ValueError as e:
            raise DataError(f"{path}: {e}", line=reader.line_num)
    if not rows:
        raise EmptyInputError(f"metrics file {path} has no rows")
    return rows


def _policy_key(name: str):
    return (POLICY_ORDER.index(name), name) if name in POLICY_ORDER else (len(POLICY_ORDER), name)


def order_rows(rows: Sequence[MetricsRow]) -> List[MetricsRow]:
    """Tasks in first-seen order, policies in table order within a task."""
    tasks: List[str] = []
    for r in rows:
        if r.task not in tasks:
            tasks.append(r.task)
    return sorted(rows, key=lambda r: (tasks.index(r.task), _policy_key(r.policy)))


def task_chart(task: str, rows: Sequence[MetricsRow]) -> bytes:
    """SVG with one bar group per metric, one bar per policy."""
    fig, axes = plt.subplots(1, len(_PANELS), figsize=(12, 3.6))
    names = [r.policy for r in rows]
    for ax, (attr, label, scale) in zip(axes, _PANELS):
        values = [getattr(r, attr) * scale for r in rows]
        ax.bar(range(len(rows)), values, color="#4c72b0")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_title(label)
    fig.suptitle(task)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_report(metrics_paths: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> List[Path]:
    """summary.csv plus one <task>.svg per task; returns the written paths."""
    if not metrics_paths:
        raise EmptyInputError("report needs at least one metrics CSV")
    rows: List[MetricsRow] = []
    for path in metrics_paths:
        rows.extend(read_metrics(path))
    rows = order_rows(rows)

    writer = ArtifactWriter(Path(out_dir))
    writer.csv("summary.csv", SUMMARY_COLUMNS, [r.to_row() for r in rows])
    for task in dict.fromkeys(r.task for r in rows):
        task_rows = [r for r in rows if r.task == task]
        writer.bytes(f"{task.replace(':', '_')}.svg", task_chart(task, task_rows))
    logger.info(f"Report: {len(rows)} rows, {len(writer.written) - 1} chart(s) in {out_dir}")
    return writer.written
