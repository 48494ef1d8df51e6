"""
Dice Run for synth-eval
Per-slice Dice between predicted and ground-truth mask stacks.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

from ..errors import ConfigError, DimError
from ..metrics import dice_or_none
from ..volume_model import read_mask_stack
from .base import BaseRun, RunResult

logger = logging.getLogger(__name__)

COLUMNS = ("slice", "dice", "pred_voxels", "gt_voxels")


def format_mean_std(mean: Optional[float], std: Optional[float]) -> Optional[str]:
    """Table style ``0.8657 ± 0.2900``."""
    if mean is None:
        return None
    return f"{mean:.4f} ± {std:.4f}"


class DiceRun(BaseRun):
    """The ``dice`` subcommand."""

    kind = "dice"

    def run(self) -> RunResult:
        d = self.settings.dice
        if not (d.pred and d.gt):
            raise ConfigError("dice needs --pred and --gt mask stacks")
        pred_path, gt_path = Path(d.pred), Path(d.gt)
        pred = read_mask_stack(pred_path, label_name="pred")
        gt = read_mask_stack(gt_path, label_name="gt")
        if len(pred) != len(gt):
            raise DimError(f"{pred_path} has {len(pred)} slices, {gt_path} has {len(gt)}")

        result = self.new_result(COLUMNS, metrics=("dice",))
        for z, (p, g) in enumerate(zip(pred, gt)):
            if p.dims != g.dims:
                raise DimError(f"Slice {z}: prediction {p.dims} vs ground truth {g.dims}")
            result.rows.append({"slice": z, "dice": dice_or_none(p, g),
                                "pred_voxels": p.count, "gt_voxels": g.count})
        self.digest_inputs(result, [pred_path, gt_path])
        result.finalize()

        stats: Dict[str, Any] = result.aggregates["all"]["dice"]
        if stats["undefined"]:
            logger.warning("%d slice(s) have empty prediction and ground truth; Dice undefined",
                           stats["undefined"])
        result.extras["dice"] = {"formatted": format_mean_std(stats["mean"], stats["std"]),
                                 "undefined_slices": stats["undefined"]}
        logger.info("dice: %s over %d slice(s)", result.extras["dice"]["formatted"], stats["count"])
        return result
