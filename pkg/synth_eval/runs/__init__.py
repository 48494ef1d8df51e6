"""Evaluation runs for synth-eval"""

from .base import BaseRun, RunResult
from .phantom import PhantomRun
from .corrupt import CorruptRun
from .metrics import MetricsRun
from .robustness import RobustnessRun
from .dice import DiceRun
from .losses import LossRun
from .embed import EmbedRun

# CLI subcommand -> run class
RUNS = {
    'phantom': PhantomRun,
    'corrupt': CorruptRun,
    'metrics': MetricsRun,
    'robustness': RobustnessRun,
    'dice': DiceRun,
    'losses': LossRun,
    'embed-analyze': EmbedRun,
}

__all__ = [
    'BaseRun',
    'RunResult',
    'PhantomRun',
    'CorruptRun',
    'MetricsRun',
    'RobustnessRun',
    'DiceRun',
    'LossRun',
    'EmbedRun',
    'RUNS',
]
