"""
Robustness Run for synth-eval
Scores corrupted inputs against their clean slices over the full
family x severity grid, optionally scores externally produced predictions
on those corrupted inputs, and optionally sweeps each family's parameter.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..corruption import (
    SEVERITY_TABLE, CorruptionSpec, Family, Severity, apply, gaussian_sigma_for_psnr,
    severity_sweep,
)
from ..errors import DimError
from ..metrics import evaluate_pair
from ..phantom import generate_phantom, standard_phantom
from ..preprocess import ResampleSpec, prepare_slices
from ..volume_model import Modality, Slice2D, read_nifti
from .base import BaseRun, RunResult, write_csv
from .metrics import PairKey, discover_volumes, pair_sort_key

logger = logging.getLogger(__name__)

COLUMNS = ("source", "family", "severity", "subject", "modality", "slice",
           "mse", "mae", "psnr", "ssim")
METRICS = ("mse", "mae", "psnr", "ssim")
SWEEP_COLUMNS = ("family", "param", "value", "n_slices", "mean_psnr", "mean_ssim", "infinite_psnr")

SWEEP_VALUES: Dict[Family, List[float]] = {
    Family.GAUSSIAN: [0.01, 0.02, 0.035, 0.05, 0.075, 0.10, 0.15, 0.19, 0.25],
    Family.RICIAN: [0.01, 0.02, 0.03, 0.05, 0.075, 0.10, 0.15, 0.22, 0.30],
    Family.DOWNSAMPLING: [1, 2, 3, 4, 6, 8],
    Family.MOTION: [0.0, 0.05, 0.10, 0.15, 0.20, 0.30],
}

PREDICTION_NAME = re.compile(
    r"^(?P<subject>.+)_(?P<modality>" + "|".join(m.value for m in Modality) + r")_"
    r"(?P<family>" + "|".join(f.value for f in Family) + r")_"
    r"(?P<severity>" + "|".join(s.value for s in Severity) + r")\.nii(\.gz)?$")

Cell = Tuple[Family, Severity]


def grid_cells() -> List[Cell]:
    return [(family, severity) for family in Family for severity in Severity]


def cell_key(cell: Cell) -> Tuple[int, int]:
    return (list(Family).index(cell[0]), list(Severity).index(cell[1]))


def _db(value: Optional[float]) -> str:
    return "inf dB" if value is None else f"{value:.2f} dB"


class RobustnessRun(BaseRun):
    """The ``robustness`` subcommand."""

    kind = "robustness"

    def clean_slices(self) -> Tuple[Dict[PairKey, List[Slice2D]], List[Path]]:
        """Clean normalized slices per (subject, modality), and the files they came from."""
        input_dir = self.settings.corruption.input_dir
        if not input_dir:
            phantom = generate_phantom(standard_phantom(self.seed))
            logger.info("no input dir; using the standard phantom (seed %d)", self.seed)
            return {(v.subject_id, m): list(v.slices()) for m, v in phantom.volumes.items()}, []
        found = discover_volumes(Path(input_dir))
        spacing = ResampleSpec(tuple(self.settings.preprocess.target_spacing))
        slices = {key: prepare_slices(read_nifti(path, modality=key[1], subject_id=key[0]),
                                      spacing, None)
                  for key, path in sorted(found.items(), key=lambda kv: pair_sort_key(kv[0]))}
        return slices, list(found.values())

    def cell_spec(self, cell: Cell) -> CorruptionSpec:
        overrides = self.settings.corruption.overrides.get(cell[0].value, {})
        return CorruptionSpec(family=cell[0], severity=cell[1], params=dict(overrides),
                              seed=self.seed)

    def _score_cell(self, cell: Cell, clean: Dict[PairKey, List[Slice2D]]) -> List[Dict]:
        spec = self.cell_spec(cell)
        ctx = self.metric_context()
        rows = []
        for key in sorted(clean, key=pair_sort_key):
            for s in clean[key]:
                rows.append({"source": "corrupted", "family": cell[0].value,
                             "severity": cell[1].value, "subject": key[0],
                             "modality": key[1].value, "slice": s.slice_index,
                             **evaluate_pair(s, apply(spec, s), ctx)})
        return rows

    def _score_predictions(self, clean: Dict[PairKey, List[Slice2D]], result: RunResult):
        directory = Path(self.settings.corruption.prediction_dir)
        ctx = self.metric_context()
        spacing = ResampleSpec(tuple(self.settings.preprocess.target_spacing))
        found = {}
        for path in sorted(directory.iterdir()):
            match = PREDICTION_NAME.match(path.name)
            if match:
                found[(match["subject"], Modality(match["modality"]),
                       Family(match["family"]), Severity(match["severity"]))] = path
        for key in sorted(clean, key=pair_sort_key):
            for cell in grid_cells():
                path = found.get((key[0], key[1], cell[0], cell[1]))
                if path is None:
                    continue
                predicted = prepare_slices(read_nifti(path, modality=key[1], subject_id=key[0]),
                                           spacing, None)
                if len(predicted) != len(clean[key]):
                    raise DimError(f"{path} has {len(predicted)} slices, expected {len(clean[key])}")
                for s, p in zip(clean[key], predicted):
                    result.rows.append({"source": "prediction", "family": cell[0].value,
                                        "severity": cell[1].value, "subject": key[0],
                                        "modality": key[1].value, "slice": s.slice_index,
                                        **evaluate_pair(s, p, ctx)})
        logger.info("scored %d prediction volume(s) from %s", len(found), directory)
        self.digest_inputs(result, found.values())

    def _sweep(self, clean: Dict[PairKey, List[Slice2D]]) -> List[Dict]:
        slices = [s for key in sorted(clean, key=pair_sort_key) for s in clean[key]]
        limit = min(min(s.dims) for s in slices) / 4
        rows = []
        for family, values in SWEEP_VALUES.items():
            if family is Family.DOWNSAMPLING:
                values = [v for v in values if v <= limit]
            rows.extend(r.to_dict() for r in severity_sweep(slices, family, values, self.seed,
                                                             ctx=self.metric_context()))
        return rows

    def run(self) -> RunResult:
        clean, sources = self.clean_slices()
        result = self.new_result(COLUMNS, group_by=("source", "family", "severity"), metrics=METRICS)
        self.digest_inputs(result, sources)

        per_cell = self.process_manager.map_ordered(
            "robustness", lambda cell: self._score_cell(cell, clean),
            [(cell_key(cell), cell) for cell in grid_cells()])
        for rows in per_cell:
            result.rows.extend(rows)

        if self.settings.corruption.prediction_dir:
            self._score_predictions(clean, result)

        result.finalize()
        grid: Dict[str, Dict[str, Dict]] = {}
        for family, severity in grid_cells():
            stats = result.aggregates[f"corrupted/{family.value}/{severity.value}"]
            grid.setdefault(family.value, {})[severity.value] = {
                "params": self.cell_spec((family, severity)).resolved_params(),
                "psnr": stats["psnr"]["mean"],
                "ssim": stats["ssim"]["mean"],
            }
        result.extras["grid"] = grid
        result.extras["calibration"] = {
            "gaussian_sigma_default": {s.value: SEVERITY_TABLE[Family.GAUSSIAN][s]["sigma"]
                                       for s in Severity},
            # sigma that would give the measured PSNR without clipping
            "gaussian_sigma_closed_form": {
                s.value: gaussian_sigma_for_psnr(psnr) if psnr is not None else None
                for s, psnr in ((s, grid[Family.GAUSSIAN.value][s.value]["psnr"]) for s in Severity)},
        }

        if self.settings.corruption.sweep:
            sweep = self._sweep(clean)
            result.extras["sweep"] = sweep
            sweep_path = self.out_dir / "robustness_sweep.csv"
            write_csv(sweep_path, SWEEP_COLUMNS, sweep)
            result.files.append(sweep_path)

        if self.settings.global_settings.plots:
            from ..plots import render_severity_curves, plots_available
            if plots_available():
                path = self.out_dir / "robustness_severity.svg"
                render_severity_curves(grid, path)
                result.files.append(path)

        for family, by_severity in grid.items():
            logger.info("%s: %s", family, ", ".join(f"{s} {_db(v['psnr'])}"
                                                   for s, v in by_severity.items()))
        return result
