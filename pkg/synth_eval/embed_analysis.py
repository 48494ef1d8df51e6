"""
Embedding-space diagnostics

PCA projection, pairwise cosine-similarity summaries by modality, and
prototype-based modality classification.
"""

import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .errors import DegenerateVector, DimError, DuplicateItem, MissingPrototype, ParamError
from .metrics import accuracy, confusion_counts
from .volume_model import EmbeddingBatch, Modality

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.07


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateVector("Cannot normalize a zero vector")
    return matrix / norms


# ============ PCA ============

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    requested_k: int
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        return int(self.components.shape[0])

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def describe(self) -> Dict:
        return {
            "k": self.k,
            "requested_k": self.requested_k,
            "dim": self.dim,
            "rank_deficient": self.rank_deficient,
            "explained_variance_ratio": [float(r) for r in self.explained_variance_ratio],
        }


def pca_fit(batch: EmbeddingBatch, k: int) -> PcaModel:
    """Principal components of the batch from the sample covariance (divisor n-1).

    Components are sorted by descending eigenvalue and signed so that each
    row's largest-magnitude entry is positive. When the data has rank below
    ``k``, only ``rank`` components are returned and ``rank_deficient`` is set.
    """
    x = batch.matrix()
    n, d = x.shape
    if n < 3:
        raise ParamError(f"PCA needs at least 3 items, got {n}")
    if not 1 <= k <= min(d, n - 1):
        raise ParamError(f"k must be in [1, {min(d, n - 1)}], got {k}")

    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]

    total = float(eigvals.sum())
    if total == 0:
        raise ParamError("PCA of data with zero variance")
    rank = int(np.sum(eigvals > eigvals[0] * max(n, d) * np.finfo(np.float64).eps))
    keep = min(k, rank)
    if keep < k:
        logger.warning("PCA data has rank %d < k=%d; returning %d components", rank, k, keep)

    components = eigvecs[:, :keep].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components,
                    explained_variance=eigvals[:keep].copy(),
                    explained_variance_ratio=eigvals[:keep] / total,
                    requested_k=k, rank_deficient=keep < k)


def pca_project(model: PcaModel, batch: EmbeddingBatch) -> np.ndarray:
    """(n, k) projections in item order."""
    if batch.dim != model.dim:
        raise DimError(f"Batch dim {batch.dim} does not match model dim {model.dim}")
    return (batch.matrix() - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, projections: np.ndarray) -> np.ndarray:
    projections = np.atleast_2d(np.asarray(projections, dtype=np.float64))
    if projections.shape[1] != model.k:
        raise DimError(f"Projections have {projections.shape[1]} columns, model has {model.k}")
    return projections @ model.components + model.mean


# ============ Similarity ============

ModalityPair = Tuple[Modality, Modality]


def pair_name(pair: ModalityPair) -> str:
    return f"{pair[0].value}-{pair[1].value}"


@dataclass(frozen=True)
class SimilaritySummary:
    pair_means: Dict[ModalityPair, float]
    pair_counts: Dict[ModalityPair, int]
    intra_slice_mean: Optional[float]
    inter_slice_mean: Optional[float]
    intra_count: int = 0
    inter_count: int = 0
    missing_pairs: List[ModalityPair] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "pairs": {pair_name(p): {"mean": v, "count": self.pair_counts[p]}
                      for p, v in self.pair_means.items()},
            "intra_slice": {"mean": self.intra_slice_mean, "count": self.intra_count},
            "inter_slice": {"mean": self.inter_slice_mean, "count": self.inter_count},
            "missing_pairs": [pair_name(p) for p in self.missing_pairs],
        }


def similarity_summary(batch: EmbeddingBatch) -> SimilaritySummary:
    """Mean cosine similarity per modality pair over same-slice cross-modality pairs,
    plus intra-slice and inter-slice means over all item pairs."""
    modalities = batch.modalities()
    if len(modalities) < 2:
        raise ParamError("Similarity summary needs at least two modalities")
    sims = np.clip(_unit_rows(batch.matrix()) @ _unit_rows(batch.matrix()).T, -1.0, 1.0)

    pair_values: Dict[ModalityPair, List[float]] = {
        pair: [] for pair in itertools.combinations(modalities, 2)}
    intra: List[float] = []
    inter: List[float] = []
    items = batch.items
    for i, j in itertools.combinations(range(len(items)), 2):
        a, b = items[i], items[j]
        value = float(sims[i, j])
        if (a.subject_id, a.slice_index) != (b.subject_id, b.slice_index):
            inter.append(value)
            continue
        intra.append(value)
        pair = tuple(sorted((a.modality, b.modality), key=lambda m: m.index))
        pair_values[pair].append(value)

    missing = [pair for pair, values in pair_values.items() if not values]
    for pair in missing:
        logger.warning("No same-slice items for modality pair %s; omitted", pair_name(pair))
    present = {pair: values for pair, values in pair_values.items() if values}
    return SimilaritySummary(
        pair_means={pair: float(np.mean(values)) for pair, values in present.items()},
        pair_counts={pair: len(values) for pair, values in present.items()},
        intra_slice_mean=float(np.mean(intra)) if intra else None,
        inter_slice_mean=float(np.mean(inter)) if inter else None,
        intra_count=len(intra), inter_count=len(inter), missing_pairs=missing)


# ============ Prototype classification ============

@dataclass(frozen=True)
class PrototypeClassifier:
    prototypes: Dict[Modality, np.ndarray]
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if not self.temperature > 0:
            raise ParamError(f"temperature must be > 0, got {self.temperature}")
        if not self.prototypes:
            raise ParamError("Classifier needs at least one prototype")
        dims = {np.asarray(p).size for p in self.prototypes.values()}
        if len(dims) != 1:
            raise DimError(f"Prototypes have differing dims {sorted(dims)}")
        for modality, p in self.prototypes.items():
            if not np.any(p):
                raise DegenerateVector(f"Prototype for {modality.value} is a zero vector")

    @property
    def classes(self) -> List[Modality]:
        """Classes in declaration order; column order of every probability matrix."""
        return [m for m in Modality if m in self.prototypes]

    @property
    def dim(self) -> int:
        return int(np.asarray(next(iter(self.prototypes.values()))).size)

    def prototype_matrix(self) -> np.ndarray:
        return np.stack([np.asarray(self.prototypes[m], dtype=np.float64) for m in self.classes])

    def check_covers(self, batch: EmbeddingBatch):
        if batch.dim != self.dim:
            raise DimError(f"Batch dim {batch.dim} does not match prototype dim {self.dim}")
        missing = [m.value for m in batch.modalities() if m not in self.prototypes]
        if missing:
            raise MissingPrototype(f"No prototype for modalities {missing}")

    def cosine_scores(self, batch: EmbeddingBatch) -> np.ndarray:
        """(n, classes) cosine similarities."""
        return _unit_rows(batch.matrix()) @ _unit_rows(self.prototype_matrix()).T


def class_mean_prototypes(batch: EmbeddingBatch,
                          temperature: float = DEFAULT_TEMPERATURE) -> PrototypeClassifier:
    """Prototype per modality as the mean of its unit-normalized embeddings."""
    units = _unit_rows(batch.matrix())
    prototypes = {}
    for modality in batch.modalities():
        rows = [i for i, item in enumerate(batch.items) if item.modality is modality]
        prototypes[modality] = units[rows].mean(axis=0)
    return PrototypeClassifier(prototypes, temperature)


def prototypes_from_batch(batch: EmbeddingBatch,
                          temperature: float = DEFAULT_TEMPERATURE) -> PrototypeClassifier:
    """Read one prototype per modality from an embedding file's items."""
    prototypes: Dict[Modality, np.ndarray] = {}
    for item in batch.items:
        if item.modality in prototypes:
            raise DuplicateItem(f"More than one prototype for {item.modality.value}")
        prototypes[item.modality] = item.vector
    return PrototypeClassifier(prototypes, temperature)


@dataclass(frozen=True)
class Classification:
    classes: List[Modality]
    probabilities: np.ndarray
    predictions: List[Modality]
    truth: List[Modality]
    accuracy: float


def classify_modality(clf: PrototypeClassifier, batch: EmbeddingBatch) -> Classification:
    """Softmax over cosine/temperature per item; ties go to the earliest class."""
    clf.check_covers(batch)
    if len(batch) == 0:
        raise ParamError("Cannot classify an empty batch")
    logits = clf.cosine_scores(batch) / clf.temperature
    probabilities = softmax(logits, axis=1)
    classes = clf.classes
    # np.argmax returns the first maximum
    predictions = [classes[int(i)] for i in np.argmax(logits, axis=1)]
    truth = [item.modality for item in batch.items]
    acc = accuracy(confusion_counts(predictions, truth))
    logger.debug("classified %d items over %d classes, accuracy %.4f",
                 len(batch), len(classes), acc)
    return Classification(classes=classes, probabilities=probabilities,
                          predictions=predictions, truth=truth, accuracy=acc)
