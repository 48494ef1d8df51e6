"""
Embedding Analysis Run for synth-eval
PCA projections, modality-pair similarity summary and prototype
classification of an embedding file.
"""

import logging
from pathlib import Path
from typing import List

from ..embed_analysis import (
    class_mean_prototypes, classify_modality, pca_fit, pca_project, prototypes_from_batch,
    similarity_summary,
)
from ..phantom import PhantomSpec, generate_embeddings
from ..volume_model import EmbeddingBatch, read_embeddings
from .base import BaseRun, RunResult, dumps, write_csv, write_text

logger = logging.getLogger(__name__)

COLUMNS = ("subject", "slice", "modality", "predicted", "correct")
ITEM_COLUMNS = ("subject", "slice", "modality")


class EmbedRun(BaseRun):
    """The ``embed-analyze`` subcommand."""

    kind = "embed"

    def _embeddings(self) -> EmbeddingBatch:
        path = self.settings.embed.embeddings
        if path:
            return read_embeddings(path)
        p = self.settings.phantom
        spec = PhantomSpec(dims=tuple(p.dims), spacing=tuple(p.spacing), seed=self.seed,
                           n_structures=p.n_structures, lesion=p.lesion)
        logger.info("no embedding file; using phantom embeddings (seed %d)", self.seed)
        return generate_embeddings(spec, p.embedding_dim, p.slice_signal_scale,
                                   p.modality_offset_scale, p.noise_scale)

    def run(self) -> RunResult:
        e = self.settings.embed
        batch = self._embeddings()
        result = self.new_result(COLUMNS, group_by=("modality",), metrics=("correct",))
        self.digest_inputs(result, [Path(p) for p in (e.embeddings, e.prototypes) if p])

        if e.prototypes:
            clf = prototypes_from_batch(read_embeddings(e.prototypes), e.temperature)
        else:
            clf = class_mean_prototypes(batch, e.temperature)

        model = pca_fit(batch, e.k)
        projections = pca_project(model, batch)
        summary = similarity_summary(batch)
        classification = classify_modality(clf, batch)

        items = [{"subject": it.subject_id, "slice": it.slice_index, "modality": it.modality.value}
                 for it in batch.items]
        for item, predicted, truth in zip(items, classification.predictions, classification.truth):
            result.rows.append({**item, "predicted": predicted.value,
                                "correct": 1.0 if predicted is truth else 0.0})

        pc_columns = [f"pc{i + 1}" for i in range(model.k)]
        projection_path = self.out_dir / "embed_projections.csv"
        write_csv(projection_path, ITEM_COLUMNS + tuple(pc_columns),
                  [{**item, **dict(zip(pc_columns, row))} for item, row in zip(items, projections)])

        p_columns = [f"p_{m.value}" for m in classification.classes]
        probability_path = self.out_dir / "embed_probabilities.csv"
        write_csv(probability_path, COLUMNS[:4] + tuple(p_columns),
                  [{**row, **dict(zip(p_columns, probs))}
                   for row, probs in zip(result.rows, classification.probabilities)])

        similarity_path = self.out_dir / "embed_similarity.json"
        write_text(similarity_path, dumps(summary.to_dict()))
        files: List[Path] = [projection_path, probability_path, similarity_path]

        if self.settings.global_settings.plots:
            from ..plots import plots_available, render_pca_scatter, render_probability_heatmap
            if plots_available():
                scatter = self.out_dir / "embed_pca.svg"
                heatmap = self.out_dir / "embed_probabilities.svg"
                render_pca_scatter(projections, [it.modality for it in batch.items], scatter)
                render_probability_heatmap(classification.probabilities, classification.classes,
                                           [r["modality"] for r in result.rows], heatmap)
                files.extend([scatter, heatmap])

        result.files.extend(files)
        result.extras["pca"] = model.describe()
        result.extras["similarity"] = summary.to_dict()
        result.extras["classification"] = {
            "accuracy": classification.accuracy,
            "classes": [m.value for m in classification.classes],
            "temperature": clf.temperature,
            "prototypes": "file" if e.prototypes else "class_means",
        }
        logger.info("embed: %d items, accuracy %.4f, intra %s vs inter %s", len(batch),
                    classification.accuracy, summary.intra_slice_mean, summary.inter_slice_mean)
        return result.finalize()
