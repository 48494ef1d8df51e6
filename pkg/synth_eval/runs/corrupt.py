"""
Corrupt Run for synth-eval
Applies one corruption family at one severity to every axial slice of a
volume and writes the corrupted volume with a manifest of resolved
parameters.
"""

import logging
from pathlib import Path
from typing import Dict

import numpy as np

from ..corruption import CorruptionSpec, Family, Severity, apply, slice_seed
from ..errors import ConfigError
from ..metrics import evaluate_pair
from ..preprocess import normalize
from ..volume_model import Slice2D, read_nifti, write_nifti
from .base import SCHEMA_VERSION, BaseRun, RunResult, dumps, file_digest, write_text

logger = logging.getLogger(__name__)

COLUMNS = ("slice", "seed", "mse", "mae", "psnr", "ssim")
METRICS = ("mse", "mae", "psnr", "ssim")


def volume_stem(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


class CorruptRun(BaseRun):
    """The ``corrupt`` subcommand."""

    kind = "corrupt"

    def corruption_spec(self) -> CorruptionSpec:
        c = self.settings.corruption
        family = Family.parse(c.family)
        params = dict(c.overrides.get(family.value, {}))
        params.update(c.params)
        return CorruptionSpec(family=family, severity=Severity.parse(c.severity),
                              params=params, seed=self.seed)

    def run(self) -> RunResult:
        c = self.settings.corruption
        if not c.input:
            raise ConfigError("corrupt needs an input volume (--input or corruption.input)")
        input_path = Path(c.input)
        spec = self.corruption_spec()
        ctx = self.metric_context()

        volume = normalize(read_nifti(input_path))
        logger.info("corrupting %s with %s/%s %s", input_path, spec.family.value,
                    spec.severity.value, spec.resolved_params())

        def corrupt_slice(s: Slice2D) -> Dict:
            corrupted = apply(spec, s)
            return {"slice": s.slice_index, "corrupted": corrupted,
                    "seed": slice_seed(spec.seed, s), **evaluate_pair(s, corrupted, ctx)}

        rows = self.process_manager.map_ordered(
            "corrupt", corrupt_slice, [(s.slice_index, s) for s in volume.slices()])

        data = np.stack([row.pop("corrupted").data for row in rows], axis=2)
        out_name = f"{volume_stem(input_path)}_{spec.family.value}_{spec.severity.value}.nii.gz"
        out_path = self.out_dir / out_name
        write_nifti(volume.with_data(data), out_path)

        result = self.new_result(COLUMNS, metrics=METRICS)
        result.rows.extend(rows)
        self.digest_inputs(result, [input_path])
        result.extras["corruption"] = spec.describe()
        result.extras["output"] = {"file": out_name, "sha256": file_digest(out_path)}

        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "corrupt-manifest",
            "input": {"file": input_path.as_posix(), "sha256": result.inputs[input_path.as_posix()]},
            "output": result.extras["output"],
            "corruption": spec.describe(),
            "slice_seeds": {str(r["slice"]): r["seed"] for r in rows},
            "stage": "normalized 2-D axial slices",
        }
        manifest_path = self.out_dir / "manifest.json"
        write_text(manifest_path, dumps(manifest))
        result.files.extend([out_path, manifest_path])
        return result.finalize()
