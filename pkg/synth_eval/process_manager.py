"""
Background Process Manager for synth-eval
Runs keyed evaluation work items on a thread pool and hands results back in
key order, never completion order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Hashable, List, Optional, Sequence, Tuple
from dataclasses import dataclass
from enum import Enum

logger = logging.getLogger(__name__)


class TaskStatus(Enum):
    """Status of an evaluation task."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class EvaluationTask:
    """One keyed work item of a ``map_ordered`` batch."""
    name: str
    key: Any
    status: TaskStatus = TaskStatus.PENDING
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    result: Any = None
    error: Optional[BaseException] = None

    @property
    def elapsed(self) -> float:
        """Seconds between start and finish; 0.0 before the task has run."""
        if not (self.started_at and self.finished_at):
            return 0.0
        return (self.finished_at - self.started_at).total_seconds()


class ProcessManager:
    """Manages parallel evaluation tasks."""

    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, int(max_workers))

    @staticmethod
    def _run_task(task: EvaluationTask, func: Callable, item: Any):
        # Each task is touched by exactly one worker until the pool has settled
        task.status = TaskStatus.RUNNING
        task.started_at = datetime.now()
        try:
            task.result = func(item)
            task.status = TaskStatus.COMPLETED
        except Exception as e:
            task.error = e
            task.status = TaskStatus.FAILED
        finally:
            task.finished_at = datetime.now()

    def map_ordered(self, name: str, func: Callable[[Any], Any],
                    items: Sequence[Tuple[Hashable, Any]]) -> List[Any]:
        """Run ``func`` on every (key, item) pair and return results sorted by key.

        All tasks settle before the first failure (in key order) is re-raised.
        """
        tasks = [(EvaluationTask(name=f"{name}[{key}]", key=key), item) for key, item in items]

        if self.max_workers == 1 or len(tasks) <= 1:
            for task, item in tasks:
                self._run_task(task, func, item)
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                list(pool.map(lambda pair: self._run_task(pair[0], func, pair[1]), tasks))

        ordered = sorted((t for t, _ in tasks), key=lambda t: t.key)
        self._report(name, ordered)
        failed = [t for t in ordered if t.status is TaskStatus.FAILED]
        if failed:
            raise failed[0].error
        return [t.result for t in ordered]

    @staticmethod
    def _report(name: str, tasks: List[EvaluationTask]):
        failed = [t for t in tasks if t.status is TaskStatus.FAILED]
        for task in failed:
            logger.warning("%s failed after %.3fs: %s", task.name, task.elapsed, task.error)
        if tasks:
            slowest = max(tasks, key=lambda t: t.elapsed)
            logger.debug("%s: %d tasks, %d failed, %.3fs total, slowest %s (%.3fs)", name,
                         len(tasks), len(failed), sum(t.elapsed for t in tasks),
                         slowest.name, slowest.elapsed)
