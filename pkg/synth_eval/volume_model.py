"""
Image, mask and embedding types for synth-eval, with their on-disk forms:
a NIfTI-1 subset (3-D; uint8, int16 or float32; little-endian; optionally
gzipped) plus a JSON sidecar for modality/subject metadata, and a JSON
embedding exchange format.

qform/sform orientation matrices are read and ignored; only spacing is kept.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field

import nibabel as nib
import numpy as np
from nibabel.filebasedimages import ImageFileError
from nibabel.openers import ImageOpener

from .errors import (
    DegenerateVector, DimensionError, DimError, DuplicateItem, FormatError,
    IoError, UnsupportedDatatype,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
NIFTI_MAGICS = (b"n+1\x00", b"ni1\x00")
SUPPORTED_DATATYPES = {2: "uint8", 4: "int16", 16: "float32"}


def _field_offset(name: str) -> int:
    """Byte offset of a NIfTI-1 header field."""
    return nib.Nifti1Header.template_dtype.fields[name][1]


class Modality(Enum):
    """MRI contrast, with the clinical prompt text used for vision-language matching."""
    T1 = "T1"
    T1c = "T1c"
    T2 = "T2"
    FLAIR = "FLAIR"
    PD = "PD"
    MRA = "MRA"

    @property
    def prompt_text(self) -> str:
        return MODALITY_PROMPTS[self]

    @property
    def index(self) -> int:
        """Position in declaration order (used for tie-breaks and column order)."""
        return list(Modality).index(self)

    @classmethod
    def parse(cls, tag: str) -> "Modality":
        try:
            return cls(tag)
        except ValueError:
            raise FormatError(f"Unknown modality {tag!r}; expected one of "
                              + ", ".join(m.value for m in cls))


MODALITY_PROMPTS: Dict[Modality, str] = {
    Modality.T1: (
        "T1-weighted (T1) images provide high-resolution anatomical detail, with fat "
        "appearing bright and water appearing dark, useful for visualizing normal tissue structure."
    ),
    Modality.T1c: (
        "T1 contrast-enhanced (T1c) images involve the administration of a contrast agent, "
        "enhancing vascular structures and providing better visualization of tumors and lesions."
    ),
    Modality.T2: (
        "T2-weighted (T2) images emphasize fluid-rich tissues, with water appearing bright and "
        "fat darker, making it ideal for detecting abnormalities like edema or inflammation."
    ),
    Modality.FLAIR: (
        "T2 Fluid-Attenuated Inversion Recovery MRI (FLAIR) suppresses cerebrospinal fluid (CSF) "
        "signals to better visualize pathological tissues with high water content, such as edema, "
        "tumors, or white matter lesions."
    ),
    Modality.PD: (
        "Proton density (PD) weighted MRI image highlights tissues with high hydrogen atom "
        "concentration, appearing brightest in areas like fat and fluid, while minimizing T1/T2 "
        "relaxation effects for enhanced tissue contrast."
    ),
    Modality.MRA: (
        "Magnetic Resonance Angiography (MRA) non-invasively images blood vessels by detecting "
        "flowing blood signals, aiding in diagnosing vascular abnormalities like stenosis, "
        "aneurysms, or malformations."
    ),
}


def _frozen(array: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ============ Images ============

@dataclass(frozen=True)
class Volume3D:
    """A 3-D scalar image indexed ``data[x, y, z]``.

    The flat voxel order (x fastest) is ``data.ravel(order='F')``, which is
    also the NIfTI on-disk order.
    """
    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: Modality = Modality.T1
    subject_id: str = "unknown"
    intensity_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionError(f"Volume3D needs three positive dimensions, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not s > 0 for s in spacing):
            raise DimensionError(f"Volume3D spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        if self.intensity_range is None:
            object.__setattr__(self, "intensity_range", (float(data.min()), float(data.max())))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def slice(self, z: int) -> "Slice2D":
        """Axial slice ``z`` (rows run along x, columns along y)."""
        return Slice2D(self.data[:, :, z], slice_index=z, modality=self.modality,
                       subject_id=self.subject_id)

    def slices(self) -> Iterator["Slice2D"]:
        for z in range(self.dims[2]):
            yield self.slice(z)

    def with_data(self, data: np.ndarray, spacing: Optional[Sequence[float]] = None,
                  intensity_range: Optional[Tuple[float, float]] = None) -> "Volume3D":
        """Copy carrying the same metadata over new voxels."""
        return Volume3D(data, spacing=tuple(spacing) if spacing is not None else self.spacing,
                        modality=self.modality, subject_id=self.subject_id,
                        intensity_range=intensity_range)


@dataclass(frozen=True)
class Slice2D:
    """A 2-D float image; the unit of metric and corruption computation."""
    data: np.ndarray
    slice_index: int = 0
    modality: Modality = Modality.T1
    subject_id: str = "unknown"

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2 or min(data.shape) < 1:
            raise DimError(f"Slice2D needs two positive dimensions, got shape {data.shape}")
        if self.slice_index < 0:
            raise DimError(f"slice_index must be >= 0, got {self.slice_index}")
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data: np.ndarray) -> "Slice2D":
        return Slice2D(data, slice_index=self.slice_index, modality=self.modality,
                       subject_id=self.subject_id)


@dataclass(frozen=True)
class Mask2D:
    """Binary segmentation mask."""
    data: np.ndarray
    label_name: str = "mask"

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 2:
            raise DimError(f"Mask2D needs two dimensions, got shape {raw.shape}")
        if not np.isin(raw, (0, 1)).all():
            raise FormatError(f"Mask {self.label_name!r} contains values other than 0 and 1")
        object.__setattr__(self, "data", _frozen(raw, dtype=np.uint8))

    @property
    def dims(self) -> Tuple[int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class FeatureMapSet:
    """Intermediate feature maps, each level shaped (c, h, w), ordered coarse-to-fine."""
    levels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = tuple(_frozen(level) for level in self.levels)
        for i, level in enumerate(levels):
            if level.ndim != 3:
                raise DimError(f"Feature level {i} must be (c, h, w), got shape {level.shape}")
        object.__setattr__(self, "levels", levels)

    def shapes(self) -> List[Tuple[int, ...]]:
        return [level.shape for level in self.levels]


# ============ Embeddings ============

@dataclass(frozen=True)
class EmbeddingItem:
    vector: np.ndarray
    modality: Modality
    subject_id: str
    slice_index: int

    def __post_init__(self):
        object.__setattr__(self, "vector", _frozen(self.vector))

    @property
    def key(self) -> Tuple[str, int, str]:
        return (self.subject_id, self.slice_index, self.modality.value)

    @property
    def label(self) -> str:
        return f"{self.subject_id}/{self.slice_index}/{self.modality.value}"


@dataclass(frozen=True)
class EmbeddingBatch:
    """Labeled feature vectors of a common dimension."""
    dim: int
    items: Tuple[EmbeddingItem, ...] = field(default_factory=tuple)

    def __post_init__(self):
        items = tuple(self.items)
        if self.dim < 1:
            raise FormatError(f"Embedding dim must be positive, got {self.dim}")
        seen = set()
        for i, item in enumerate(items):
            if item.vector.shape != (self.dim,):
                raise FormatError(f"Item {i} ({item.label}) has vector length "
                                  f"{item.vector.size}, expected {self.dim}")
            if not np.any(item.vector):
                raise DegenerateVector(f"Item {i} ({item.label}) is an all-zero vector")
            if item.key in seen:
                raise DuplicateItem(f"Duplicate embedding item {item.label}")
            seen.add(item.key)
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)

    def matrix(self) -> np.ndarray:
        """(n, dim) array of the vectors in item order."""
        if not self.items:
            return np.zeros((0, self.dim))
        return np.stack([item.vector for item in self.items])

    def modalities(self) -> List[Modality]:
        """Distinct modalities present, in declaration order."""
        present = {item.modality for item in self.items}
        return [m for m in Modality if m in present]

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingBatch":
        """Same labels over new vectors."""
        vectors = np.asarray(vectors, dtype=np.float64)
        return EmbeddingBatch(vectors.shape[1], tuple(
            EmbeddingItem(v, item.modality, item.subject_id, item.slice_index)
            for v, item in zip(vectors, self.items)))

    @classmethod
    def from_arrays(cls, vectors: np.ndarray, modalities: Sequence[Modality],
                    subject_ids: Sequence[str], slice_indices: Sequence[int]) -> "EmbeddingBatch":
        vectors = np.asarray(vectors, dtype=np.float64)
        return cls(vectors.shape[1], tuple(
            EmbeddingItem(v, m, s, int(k))
            for v, m, s, k in zip(vectors, modalities, subject_ids, slice_indices)))


# ============ NIfTI I/O ============

def _sidecar_path(path: Path) -> Path:
    name = path.name
    for suffix in (".nii.gz", ".nii", ".hdr.gz", ".hdr"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)] + ".json")
    return path.with_suffix(".json")


def _check_header_bytes(raw: bytes):
    """Validate sizeof_hdr, byte order and magic before handing off to nibabel."""
    if len(raw) < NIFTI_HEADER_SIZE:
        raise FormatError(f"Truncated NIfTI header: {len(raw)} of {NIFTI_HEADER_SIZE} bytes",
                          offset=len(raw))
    sizeof_hdr = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if int(np.frombuffer(raw, dtype=">i4", count=1)[0]) == NIFTI_HEADER_SIZE:
            raise FormatError("Big-endian NIfTI headers are not supported",
                              offset=_field_offset("sizeof_hdr"))
        raise FormatError(f"sizeof_hdr is {sizeof_hdr}, expected {NIFTI_HEADER_SIZE}",
                          offset=_field_offset("sizeof_hdr"))
    magic_offset = _field_offset("magic")
    magic = raw[magic_offset:magic_offset + 4]
    if magic not in NIFTI_MAGICS:
        raise FormatError(f"Bad NIfTI magic {magic!r}", offset=magic_offset)


def read_nifti_header(path: PathLike) -> nib.Nifti1Header:
    """Read and validate the header of a NIfTI-1 file in the supported subset."""
    path = Path(path)
    try:
        with ImageOpener(str(path), "rb") as f:
            raw = f.read(NIFTI_HEADER_SIZE)
    except FileNotFoundError:
        raise IoError(f"No such file: {path}")
    except OSError as e:
        raise FormatError(f"Cannot read {path}: {e}", offset=0)

    _check_header_bytes(raw)
    header = nib.Nifti1Header(binaryblock=raw, endianness="<", check=False)

    ndim = int(header["dim"][0])
    if ndim != 3:
        raise DimensionError(f"{path}: dim[0] is {ndim}; only 3-D volumes are supported")
    datatype = int(header["datatype"])
    if datatype not in SUPPORTED_DATATYPES:
        raise UnsupportedDatatype(datatype)
    return header


def read_nifti(path: PathLike, modality: Optional[Modality] = None,
               subject_id: Optional[str] = None) -> Volume3D:
    """Load a volume.

    Metadata comes from the sidecar JSON next to the file when present;
    explicit ``modality``/``subject_id`` arguments take precedence, and the
    fallback is T1/"unknown".
    """
    path = Path(path)
    header = read_nifti_header(path)
    dims = tuple(int(n) for n in header["dim"][1:4])
    if min(dims) < 1:
        raise FormatError(f"Non-positive dimension in {dims}", offset=_field_offset("dim"))
    spacing = tuple(float(s) for s in header["pixdim"][1:4])
    if any(not s > 0 for s in spacing):
        raise FormatError(f"Non-positive pixdim in {spacing}", offset=_field_offset("pixdim"))

    try:
        img = nib.load(str(path))
        # scl_slope/scl_inter are applied when slope is finite and non-zero
        data = img.get_fdata(dtype=np.float64)
    except (ImageFileError, OSError, ValueError, EOFError) as e:
        raise FormatError(f"Cannot read voxel data of {path}: {e}",
                          offset=int(header["vox_offset"]))

    meta = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"Invalid sidecar JSON {sidecar}: {e}", offset=e.pos)

    if modality is None:
        modality = Modality.parse(meta.get("modality", Modality.T1.value))
    if subject_id is None:
        subject_id = str(meta.get("subject_id", "unknown"))

    logger.debug("read %s dims=%s spacing=%s datatype=%s", path, dims, spacing,
                 SUPPORTED_DATATYPES[int(header["datatype"])])
    return Volume3D(data, spacing=spacing, modality=modality, subject_id=subject_id)


def write_nifti(v: Volume3D, path: PathLike, sidecar: bool = True):
    """Write ``v`` as single-file float32 NIfTI-1 (vox_offset 352), gzipped for ``.gz`` paths."""
    path = Path(path)
    header = nib.Nifti1Header(endianness="<")
    header.set_data_dtype(np.float32)
    header.set_xyzt_units("mm")
    affine = np.diag([*v.spacing, 1.0])
    img = nib.Nifti1Image(v.data.astype("<f4"), affine, header=header)
    img.header.set_zooms(v.spacing)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        nib.save(img, str(path))
        if sidecar:
            _sidecar_path(path).write_text(
                json.dumps({"modality": v.modality.value, "subject_id": v.subject_id},
                           indent=2, sort_keys=True) + "\n",
                encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
    logger.debug("wrote %s dims=%s", path, v.dims)


def write_mask_stack(masks: Sequence[Mask2D], path: PathLike,
                     spacing: Sequence[float] = (1.0, 1.0, 1.0), subject_id: str = "unknown"):
    """Store a per-slice mask stack as a 0/1 volume (one mask per z)."""
    if not masks:
        raise DimError("Empty mask stack")
    data = np.stack([m.data for m in masks], axis=2).astype(np.float64)
    write_nifti(Volume3D(data, spacing=tuple(spacing), subject_id=subject_id), path)


def read_mask_stack(path: PathLike, label_name: str = "mask") -> List[Mask2D]:
    """Load a 0/1 volume as per-slice masks; voxels > 0.5 are foreground."""
    volume = read_nifti(path)
    binary = (volume.data > 0.5).astype(np.uint8)
    return [Mask2D(binary[:, :, z], label_name=label_name) for z in range(binary.shape[2])]


# ============ Embedding JSON ============

def read_embeddings(path: PathLike) -> EmbeddingBatch:
    """Load the JSON embedding exchange format, preserving item order."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IoError(f"No such file: {path}")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid embedding JSON {path}: {e.msg}", offset=e.pos)

    try:
        dim = int(payload["dim"])
        raw_items = payload["items"]
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{path}: embedding file needs integer 'dim' and list 'items'")

    items = []
    for i, raw in enumerate(raw_items):
        try:
            vector = np.asarray(raw["vector"], dtype=np.float64)
            item = EmbeddingItem(vector=vector, modality=Modality.parse(raw["modality"]),
                                 subject_id=str(raw["subject_id"]),
                                 slice_index=int(raw["slice_index"]))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: item {i} is malformed ({e})")
        if vector.ndim != 1 or vector.size != dim:
            raise FormatError(f"{path}: item {i} has vector length {vector.size}, expected {dim}")
        if not np.all(np.isfinite(vector)):
            raise FormatError(f"{path}: item {i} has non-finite vector values")
        items.append(item)
    return EmbeddingBatch(dim, tuple(items))


def embeddings_to_dict(batch: EmbeddingBatch) -> Dict:
    return {
        "dim": batch.dim,
        "items": [
            {
                "subject_id": item.subject_id,
                "slice_index": item.slice_index,
                "modality": item.modality.value,
                "vector": [float(x) for x in item.vector],
            }
            for item in batch.items
        ],
    }


def write_embeddings(batch: EmbeddingBatch, path: PathLike):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(embeddings_to_dict(batch), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}")
