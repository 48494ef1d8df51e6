"""
Base Run for synth-eval
Provides report assembly, aggregation and deterministic CSV/JSON output for
all runs.
"""

import csv
import hashlib
import io
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field

import numpy as np

from .. import __app_name__, __version__
from ..errors import InvariantViolation, IoError
from ..metrics import MetricContext, SsimMode
from ..process_manager import ProcessManager
from ..settings import SettingsManager

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
AGGREGATE_TOLERANCE = 1e-12


def file_digest(path: Path) -> str:
    """sha256 of a file's bytes."""
    h = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}")
    return h.hexdigest()


def jsonable(value: Any) -> Any:
    """Plain JSON value: +-inf become strings, NaN becomes null."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return value.as_posix()
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def dumps(payload: Any) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_cell(value: Any) -> str:
    value = jsonable(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([csv_cell(row.get(c)) for c in columns])
    write_text(path, buf.getvalue())


def write_text(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")


def summarize(values: Sequence[Optional[float]]) -> Dict[str, Any]:
    """mean, sample std (ddof=1, 0.0 for one value) and count over finite values.

    ``infinite`` and ``undefined`` count the values left out.
    """
    defined = [float(v) for v in values if v is not None and not math.isnan(float(v))]
    finite = [v for v in defined if math.isfinite(v)]
    stats: Dict[str, Any] = {
        "count": len(finite),
        "infinite": len(defined) - len(finite),
        "undefined": len(values) - len(defined),
        "mean": None,
        "std": None,
    }
    if finite:
        stats["mean"] = float(np.mean(finite))
        stats["std"] = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
    return stats


def group_label(row: Dict[str, Any], group_by: Sequence[str]) -> str:
    return "/".join(str(jsonable(row[g])) for g in group_by) if group_by else "all"


def compute_aggregates(rows: Sequence[Dict[str, Any]], group_by: Sequence[str],
                       metrics: Sequence[str]) -> Dict[str, Dict[str, Dict[str, Any]]]:
    groups: Dict[str, List[Dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault(group_label(row, group_by), []).append(row)
    return {label: {m: summarize([r.get(m) for r in members]) for m in metrics}
            for label, members in groups.items()}


def _close(a: Any, b: Any) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return abs(a - b) <= AGGREGATE_TOLERANCE * max(1.0, abs(a), abs(b))
    return a == b


@dataclass
class RunResult:
    """One run's report: rows, aggregates over them, and provenance."""
    kind: str
    config: Dict[str, Any]
    columns: Tuple[str, ...]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    group_by: Tuple[str, ...] = ()
    metrics: Tuple[str, ...] = ()
    inputs: Dict[str, str] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)
    aggregates: Dict[str, Dict[str, Dict[str, Any]]] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)

    def finalize(self) -> "RunResult":
        self.aggregates = compute_aggregates(self.rows, self.group_by, self.metrics)
        return self

    def verify_aggregates(self):
        """Recompute aggregates from rows; InvariantViolation on any mismatch."""
        expected = compute_aggregates(self.rows, self.group_by, self.metrics)
        if expected.keys() != self.aggregates.keys():
            raise InvariantViolation(f"{self.kind}: aggregate groups do not match rows")
        for label, per_metric in expected.items():
            for metric, stats in per_metric.items():
                got = self.aggregates[label].get(metric, {})
                for key, value in stats.items():
                    if not _close(value, got.get(key)):
                        raise InvariantViolation(
                            f"{self.kind}: aggregate {label}.{metric}.{key} is {got.get(key)!r}, "
                            f"rows give {value!r}")

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "tool": {"name": __app_name__, "version": __version__},
            "kind": self.kind,
            "config": self.config,
            "inputs": self.inputs,
            "rows": self.rows,
            "aggregates": self.aggregates,
        }
        payload.update(self.extras)
        return payload

    def write(self, out_dir: Path, output_format: str = "both") -> List[Path]:
        """Verify aggregates, then write ``<kind>.json`` and/or ``<kind>.csv``."""
        self.verify_aggregates()
        written = []
        if output_format in ("json", "both"):
            path = out_dir / f"{self.kind}.json"
            write_text(path, dumps(self.to_dict()))
            written.append(path)
        if output_format in ("csv", "both"):
            path = out_dir / f"{self.kind}.csv"
            write_csv(path, self.columns, self.rows)
            written.append(path)
        for path in written:
            logger.info("wrote %s", path)
        return written + list(self.files)

    def summary_line(self) -> str:
        return f"{self.kind}: {len(self.rows)} rows, {len(self.aggregates)} groups"


class BaseRun:
    """Base class for the CLI subcommands."""

    kind = "base"

    def __init__(self, settings: SettingsManager, process_manager: Optional[ProcessManager] = None):
        self.settings = settings
        self.process_manager = process_manager or ProcessManager(
            settings.global_settings.effective_threads())

    @property
    def seed(self) -> int:
        return self.settings.global_settings.seed

    @property
    def out_dir(self) -> Path:
        return self.settings.get_out_dir()

    def metric_context(self) -> MetricContext:
        m = self.settings.metrics
        return MetricContext(L=m.L, k1=m.k1, k2=m.k2, ssim_mode=SsimMode(m.ssim_mode),
                             window=m.window, gaussian_sigma=m.gaussian_sigma)

    def new_result(self, columns: Sequence[str], group_by: Sequence[str] = (),
                   metrics: Sequence[str] = ()) -> RunResult:
        return RunResult(kind=self.kind, config=self.settings.resolved(), columns=tuple(columns),
                         group_by=tuple(group_by), metrics=tuple(metrics))

    def digest_inputs(self, result: RunResult, paths: Iterable[Path]):
        for path in sorted(set(Path(p) for p in paths)):
            result.inputs[path.as_posix()] = file_digest(path)

    def run(self) -> RunResult:
        raise NotImplementedError
