"""
Synthetic phantoms for synth-eval

Multi-modal volumes built from nested ellipsoids with known tissue classes,
an optional lesion with its mask, and embeddings with controllable slice and
modality structure. Everything is a pure function of the PhantomSpec seed.
"""

import logging
from typing import Dict, List, Sequence, Tuple
from dataclasses import dataclass, field

import numpy as np

from .errors import ParamError
from .preprocess import normalize
from .rng import gaussian, make_rng, split_seed, unit_vector
from .volume_model import EmbeddingBatch, EmbeddingItem, Mask2D, Modality, Volume3D

logger = logging.getLogger(__name__)

PHANTOM_MODALITIES = (Modality.T1, Modality.T1c, Modality.T2)

# Mean class intensities before jitter and shading.
# fluid: T2 > T1; fat: T1 > T2; lesion: T1c > T1.
TISSUE_CLASSES: Dict[str, Dict[Modality, float]] = {
    "soft": {Modality.T1: 0.50, Modality.T1c: 0.55, Modality.T2: 0.50},
    "white": {Modality.T1: 0.62, Modality.T1c: 0.62, Modality.T2: 0.40},
    "gray": {Modality.T1: 0.45, Modality.T1c: 0.48, Modality.T2: 0.58},
    "fluid": {Modality.T1: 0.22, Modality.T1c: 0.26, Modality.T2: 0.85},
    "fat": {Modality.T1: 0.85, Modality.T1c: 0.85, Modality.T2: 0.40},
    "lesion": {Modality.T1: 0.42, Modality.T1c: 0.92, Modality.T2: 0.70},
}
INNER_CLASSES = ("white", "gray", "fluid", "fat")
JITTER = 0.04
SHADING_AMPLITUDE = 0.05

# Label 0 is background; structure i has label i + 1; the lesion gets the next label.
BACKGROUND = 0


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (64, 64, 24)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    n_structures: int = 6
    lesion: bool = True

    def __post_init__(self):
        if len(self.dims) != 3 or self.dims[0] < 16 or self.dims[1] < 16 or self.dims[2] < 4:
            raise ParamError(f"Phantom dims must be at least (16, 16, 4), got {self.dims}")
        if not 1 <= self.n_structures <= 16:
            raise ParamError(f"n_structures must be in [1, 16], got {self.n_structures}")
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise ParamError(f"spacing must be three positive values, got {self.spacing}")


def standard_phantom(seed: int = 0) -> PhantomSpec:
    """The fixed phantom used by the robustness and calibration checks."""
    return PhantomSpec(dims=(64, 64, 24), spacing=(1.0, 1.0, 1.0), seed=seed,
                       n_structures=6, lesion=True)


@dataclass(frozen=True)
class TissueTable:
    """Per-structure mean intensity per modality, plus each structure's class."""
    intensities: Dict[str, Dict[Modality, float]]
    classes: Dict[str, str]

    def structures_of(self, tissue_class: str) -> List[str]:
        return [name for name, cls in self.classes.items() if cls == tissue_class]

    def check(self):
        """Raise ParamError if a contrast ordering is broken."""
        for name, cls in self.classes.items():
            row = self.intensities[name]
            if cls == "fluid" and not row[Modality.T2] > row[Modality.T1]:
                raise ParamError(f"{name}: fluid needs T2 > T1")
            if cls == "fat" and not row[Modality.T1] > row[Modality.T2]:
                raise ParamError(f"{name}: fat needs T1 > T2")
            if cls == "lesion" and not row[Modality.T1c] > row[Modality.T1]:
                raise ParamError(f"{name}: lesion needs T1c > T1")


@dataclass(frozen=True)
class Phantom:
    volumes: Dict[Modality, Volume3D]
    masks: List[Mask2D]
    tissue_table: TissueTable
    labels: np.ndarray
    label_names: Dict[int, str] = field(default_factory=dict)

    def unshaded(self, modality: Modality) -> np.ndarray:
        """Piecewise-constant tissue intensities before shading and normalization."""
        out = np.zeros(self.labels.shape)
        for label, name in self.label_names.items():
            out[self.labels == label] = self.tissue_table.intensities[name][modality]
        return out

    def lesion_voxels(self) -> np.ndarray:
        lesion_labels = [k for k, n in self.label_names.items()
                         if self.tissue_table.classes.get(n) == "lesion"]
        return np.isin(self.labels, lesion_labels)


def _grid(dims: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-center coordinates normalized to [-0.5, 0.5) per axis."""
    axes = [(np.arange(n) + 0.5) / n - 0.5 for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def _ellipsoid(grid, center, radii) -> np.ndarray:
    x, y, z = grid
    return (((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2
            + ((z - center[2]) / radii[2]) ** 2) <= 1.0


def _tissue_row(tissue_class: str, rng: np.random.Generator) -> Dict[Modality, float]:
    base = TISSUE_CLASSES[tissue_class]
    return {m: float(base[m] + rng.uniform(-JITTER, JITTER)) for m in PHANTOM_MODALITIES}


def _shading(grid, rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative field 1 + A * (sum of two low-frequency sinusoids) / 2."""
    x, y, z = grid
    field_ = np.zeros(x.shape)
    for _ in range(2):
        fx, fy, fz = rng.uniform(0.5, 1.5, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        field_ += np.sin(2 * np.pi * (fx * x + fy * y + 0.5 * fz * z) + phase)
    return 1.0 + SHADING_AMPLITUDE * field_ / 2.0


def generate_phantom(spec: PhantomSpec, subject_id: str = "phantom") -> Phantom:
    """Volumes for T1, T1c and T2 sharing one geometry, plus the lesion mask stack."""
    rng = make_rng(spec.seed)
    grid = _grid(spec.dims)
    labels = np.zeros(spec.dims, dtype=np.int32)
    intensities: Dict[str, Dict[Modality, float]] = {}
    classes: Dict[str, str] = {}
    label_names: Dict[int, str] = {}

    # Structure 0 is the head: wide in-plane so the background stays a small
    # fraction of every slice, long in z so end slices are covered too.
    head_radii = (0.55, 0.55, 2.0)
    labels[_ellipsoid(grid, (0.0, 0.0, 0.0), head_radii)] = 1
    intensities["head"] = _tissue_row("soft", rng)
    classes["head"] = "soft"
    label_names[1] = "head"

    for i in range(1, spec.n_structures):
        tissue_class = INNER_CLASSES[(i - 1) % len(INNER_CLASSES)]
        center = (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15))
        radii = (rng.uniform(0.06, 0.18), rng.uniform(0.06, 0.18), rng.uniform(0.2, 0.45))
        name = f"s{i:02d}_{tissue_class}"
        labels[_ellipsoid(grid, center, radii)] = i + 1
        intensities[name] = _tissue_row(tissue_class, rng)
        classes[name] = tissue_class
        label_names[i + 1] = name

    if spec.lesion:
        label = spec.n_structures + 1
        center = (rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), 0.0)
        # At least ~2.5 voxels in-plane and 1.5 slices through-plane
        radii = (max(0.08, 2.5 / spec.dims[0]), max(0.08, 2.5 / spec.dims[1]),
                 max(0.2, 1.5 / spec.dims[2]))
        lesion = _ellipsoid(grid, center, radii)
        labels[lesion] = label
        intensities["lesion"] = _tissue_row("lesion", rng)
        classes["lesion"] = "lesion"
        label_names[label] = "lesion"

    table = TissueTable(intensities=intensities, classes=classes)
    table.check()

    phantom = Phantom(volumes={}, masks=[], tissue_table=table, labels=labels,
                      label_names=label_names)
    volumes = {}
    for modality in PHANTOM_MODALITIES:
        shaded = phantom.unshaded(modality) * _shading(grid, rng)
        raw = Volume3D(shaded, spacing=spec.spacing, modality=modality, subject_id=subject_id)
        volumes[modality] = normalize(raw)

    lesion_mask = phantom.lesion_voxels()
    masks = [Mask2D(lesion_mask[:, :, z].astype(np.uint8), label_name="lesion")
             for z in range(spec.dims[2])]
    logger.debug("phantom seed=%d dims=%s lesion voxels=%d", spec.seed, spec.dims,
                 int(lesion_mask.sum()))
    return Phantom(volumes=volumes, masks=masks, tissue_table=table, labels=labels,
                   label_names=label_names)


def generate_embeddings(spec: PhantomSpec, dim: int, slice_signal_scale: float,
                        modality_offset_scale: float, noise_scale: float = 0.01,
                        subjects: Sequence[str] = ("phantom",),
                        modalities: Sequence[Modality] = PHANTOM_MODALITIES) -> EmbeddingBatch:
    """Embeddings with a tunable mix of per-slice and per-modality directions.

    vector = slice_signal * slice_signal_scale + modality_offset * modality_offset_scale
             + noise_scale * N(0, I)
    Slice signals and modality offsets are seeded unit vectors.
    """
    if dim < 2:
        raise ParamError(f"Embedding dim must be >= 2, got {dim}")
    offsets = {m: unit_vector(make_rng(split_seed(spec.seed, 0x6D6F64 + m.index)), dim)
               for m in modalities}
    noise_rng = make_rng(split_seed(spec.seed, 0x6E6F6973))
    items = []
    for s_idx, subject in enumerate(subjects):
        for z in range(spec.dims[2]):
            signal_seed = split_seed(split_seed(spec.seed, (s_idx + 1) << 32), z + 1)
            signal = unit_vector(make_rng(signal_seed), dim)
            for m in modalities:
                vector = (signal * slice_signal_scale + offsets[m] * modality_offset_scale
                          + noise_scale * gaussian(noise_rng, (dim,)))
                items.append(EmbeddingItem(vector, m, subject, z))
    return EmbeddingBatch(dim, tuple(items))
