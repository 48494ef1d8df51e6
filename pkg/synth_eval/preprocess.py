"""
Preprocessing for synth-eval
Isotropic resampling, per-slice resizing and min-max intensity normalization.

Interpolation is multilinear (``scipy.ndimage.affine_transform``, order 1)
with voxel-center alignment (output sample ``i`` reads input coordinate
``(i + 0.5) * scale - 0.5``) and edge clamping. Results are clipped to the
input range, so constants map to themselves exactly and affine intensity
fields are reproduced on interior samples.
"""

import logging
import math
from enum import Enum
from typing import List, Sequence, Tuple, TypeVar, Union
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateIntensity, ParamError
from .volume_model import Slice2D, Volume3D

logger = logging.getLogger(__name__)


class Interpolation(Enum):
    TRILINEAR = "trilinear"
    BILINEAR = "bilinear"


@dataclass(frozen=True)
class ResampleSpec:
    target_spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    interpolation: Interpolation = Interpolation.TRILINEAR

    def __post_init__(self):
        if len(self.target_spacing) != 3 or any(not s > 0 for s in self.target_spacing):
            raise ParamError(f"target_spacing must be three positive values, got {self.target_spacing}")


@dataclass(frozen=True)
class ResizeSpec:
    target_dims: Tuple[int, int] = (224, 224)
    interpolation: Interpolation = Interpolation.BILINEAR

    def __post_init__(self):
        if len(self.target_dims) != 2 or any(int(d) < 1 for d in self.target_dims):
            raise ParamError(f"target_dims must be two positive integers, got {self.target_dims}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resampled_dim(n: int, spacing: float, target: float) -> int:
    """Output length along one axis: round-half-up of the physical extent, at least 1."""
    return max(1, round_half_up(n * spacing / target))


def interpolate(data: np.ndarray, out_shape: Sequence[int], scales: Sequence[float]) -> np.ndarray:
    """Multilinear resampling with center alignment and edge clamping.

    Output index ``i`` on each axis reads input coordinate ``(i + 0.5) * scale - 0.5``.
    """
    data = np.asarray(data, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    out = ndimage.affine_transform(data, scales, offset=0.5 * scales - 0.5,
                                   output_shape=tuple(int(n) for n in out_shape),
                                   order=1, mode="nearest", prefilter=False)
    # Weights are convex: the output stays in the input range and constants stay exact
    return np.clip(out, data.min(), data.max())


def resize_array(data: np.ndarray, out_shape: Sequence[int]) -> np.ndarray:
    """Linear resize of an n-D array to ``out_shape`` (scale = in/out per axis)."""
    data = np.asarray(data, dtype=np.float64)
    if tuple(data.shape) == tuple(int(n) for n in out_shape):
        return data.copy()
    return interpolate(data, out_shape, [n / o for n, o in zip(data.shape, out_shape)])


def resample(v: Volume3D, spec: ResampleSpec = ResampleSpec()) -> Volume3D:
    """Trilinear resampling to ``spec.target_spacing``."""
    scales = [spec.target_spacing[axis] / v.spacing[axis] for axis in range(3)]
    out_dims = tuple(resampled_dim(v.dims[axis], v.spacing[axis], spec.target_spacing[axis])
                     for axis in range(3))
    if out_dims == v.dims and all(s == 1.0 for s in scales):
        out = np.asarray(v.data, dtype=np.float64)
    else:
        out = interpolate(v.data, out_dims, scales)
    logger.debug("resample %s -> %s (spacing %s -> %s)", v.dims, out_dims,
                 v.spacing, spec.target_spacing)
    return v.with_data(out, spacing=spec.target_spacing)


def resize_slice(s: Slice2D, spec: ResizeSpec = ResizeSpec()) -> Slice2D:
    """Bilinear resize to ``spec.target_dims`` (stretching, no aspect preservation)."""
    if s.dims == tuple(spec.target_dims):
        return s
    return s.with_data(resize_array(s.data, spec.target_dims))


Image = TypeVar("Image", Slice2D, Volume3D)


def normalize(image: Image, bounds: Union[Tuple[float, float], None] = None) -> Image:
    """Affine min-max mapping onto [0, 1].

    ``bounds`` overrides the image's own (min, max); slices cut from a volume
    pass the parent volume's bounds so all slices share one mapping.
    """
    lo, hi = bounds if bounds is not None else (float(image.data.min()), float(image.data.max()))
    if not hi > lo:
        raise DegenerateIntensity(f"Cannot normalize constant intensity {lo}")
    data = (np.asarray(image.data, dtype=np.float64) - lo) / (hi - lo)
    if isinstance(image, Volume3D):
        return image.with_data(data, intensity_range=(0.0, 1.0))
    return image.with_data(data)


def prepare_slices(v: Volume3D, resample_spec: ResampleSpec = ResampleSpec(),
                   resize_spec: Union[ResizeSpec, None] = ResizeSpec()) -> List[Slice2D]:
    """Full preprocessing contract: resample, normalize per volume, cut axial slices, resize."""
    volume = normalize(resample(v, resample_spec))
    slices = list(volume.slices())
    if resize_spec is not None:
        slices = [resize_slice(s, resize_spec) for s in slices]
    return slices
