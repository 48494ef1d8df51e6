"""
Phantom Run for synth-eval
Writes seeded phantom subjects as NIfTI volumes with sidecars, their lesion
mask stacks and a matching embedding file.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

from ..phantom import PhantomSpec, generate_embeddings, generate_phantom
from ..rng import split_seed
from ..volume_model import write_embeddings, write_mask_stack, write_nifti
from .base import BaseRun, RunResult, file_digest

logger = logging.getLogger(__name__)

COLUMNS = ("subject", "modality", "file", "dims", "lesion_voxels", "sha256")


def subject_ids(n: int) -> List[str]:
    return [f"sub{i:03d}" for i in range(n)]


class PhantomRun(BaseRun):
    """The ``phantom`` subcommand."""

    kind = "phantom"

    def _spec(self, seed: int) -> PhantomSpec:
        p = self.settings.phantom
        return PhantomSpec(dims=tuple(p.dims), spacing=tuple(p.spacing), seed=seed,
                           n_structures=p.n_structures, lesion=p.lesion)

    def _write_subject(self, item: Tuple[int, str]) -> List[Dict]:
        index, subject = item
        spec = self._spec(split_seed(self.seed, index))
        phantom = generate_phantom(spec, subject_id=subject)
        rows = []
        lesion_voxels = sum(m.count for m in phantom.masks)
        for modality, volume in phantom.volumes.items():
            path = self.out_dir / f"{subject}_{modality.value}.nii.gz"
            write_nifti(volume, path)
            rows.append({"subject": subject, "modality": modality.value, "file": path.name,
                         "dims": "x".join(str(d) for d in volume.dims),
                         "lesion_voxels": lesion_voxels, "path": path})
        mask_path = self.out_dir / f"{subject}_lesion_mask.nii.gz"
        write_mask_stack(phantom.masks, mask_path, spacing=spec.spacing, subject_id=subject)
        rows.append({"subject": subject, "modality": "mask", "file": mask_path.name,
                     "dims": "x".join(str(d) for d in spec.dims),
                     "lesion_voxels": lesion_voxels, "path": mask_path})
        return rows

    def run(self) -> RunResult:
        p = self.settings.phantom
        subjects = subject_ids(p.subjects)
        logger.info("generating %d phantom subject(s) into %s", len(subjects), self.out_dir)
        result = self.new_result(COLUMNS)

        per_subject = self.process_manager.map_ordered(
            "phantom", self._write_subject, [(i, (i, s)) for i, s in enumerate(subjects)])

        paths: List[Path] = []
        for rows in per_subject:
            for row in rows:
                path = row.pop("path")
                row["sha256"] = file_digest(path)
                result.rows.append(row)
                paths.extend([path, path.with_name(path.name[:-len(".nii.gz")] + ".json")])

        batch = generate_embeddings(self._spec(self.seed), p.embedding_dim, p.slice_signal_scale,
                                    p.modality_offset_scale, p.noise_scale, subjects=subjects)
        embeddings_path = self.out_dir / "embeddings.json"
        write_embeddings(batch, embeddings_path)
        paths.append(embeddings_path)

        result.extras["embeddings"] = {"file": embeddings_path.name, "items": len(batch),
                                       "dim": batch.dim,
                                       "sha256": file_digest(embeddings_path)}
        result.files.extend(paths)
        logger.info("phantom: %d volumes, %d embedding items", len(result.rows), len(batch))
        return result.finalize()
