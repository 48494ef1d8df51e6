"""
Input corruptions for robustness testing

Four families (motion, down-sampling, Gaussian and Rician noise) at three
named severities. Every corruption works on a normalized 2-D slice, is
deterministic given its seed, and clamps its output to [0, 1].
"""

import logging
import math
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ParamError
from .metrics import MetricContext, psnr, ssim
from .preprocess import resize_array, round_half_up
from .rng import gaussian, make_rng, split_seed
from .volume_model import Slice2D

logger = logging.getLogger(__name__)


class Family(Enum):
    MOTION = "MotionArtifact"
    DOWNSAMPLING = "DownSampling"
    GAUSSIAN = "GaussianNoise"
    RICIAN = "RicianNoise"

    @classmethod
    def parse(cls, name: str) -> "Family":
        for family in cls:
            if name in (family.value, family.name, family.name.lower()):
                return family
        raise ParamError(f"Unknown corruption family {name!r}; expected one of "
                         + ", ".join(f.value for f in cls))


class Severity(Enum):
    MINOR = "Minor"
    MODERATE = "Moderate"
    SEVERE = "Severe"

    @classmethod
    def parse(cls, name: str) -> "Severity":
        for severity in cls:
            if name in (severity.value, severity.name, severity.name.lower()):
                return severity
        raise ParamError(f"Unknown severity {name!r}; expected Minor, Moderate or Severe")


# Defaults are calibrated on the standard phantom so corrupted-input PSNR
# lands near the published corrupted-input magnitudes. See severity_sweep.
SEVERITY_TABLE: Dict[Family, Dict[Severity, Dict[str, float]]] = {
    Family.GAUSSIAN: {
        Severity.MINOR: {"sigma": 0.035},
        Severity.MODERATE: {"sigma": 0.10},
        Severity.SEVERE: {"sigma": 0.19},
    },
    Family.RICIAN: {
        Severity.MINOR: {"sigma": 0.03},
        Severity.MODERATE: {"sigma": 0.10},
        Severity.SEVERE: {"sigma": 0.22},
    },
    Family.DOWNSAMPLING: {
        Severity.MINOR: {"factor": 2},
        Severity.MODERATE: {"factor": 4},
        Severity.SEVERE: {"factor": 8},
    },
    Family.MOTION: {
        Severity.MINOR: {"line_fraction": 0.05, "max_shift_px": 1.0},
        Severity.MODERATE: {"line_fraction": 0.15, "max_shift_px": 3.0},
        Severity.SEVERE: {"line_fraction": 0.30, "max_shift_px": 6.0},
    },
}

PARAM_NAMES = {family: tuple(rows[Severity.MINOR]) for family, rows in SEVERITY_TABLE.items()}


def _check_params(family: Family, params: Dict[str, float]):
    unknown = set(params) - set(PARAM_NAMES[family])
    if unknown:
        raise ParamError(f"{family.value} has no parameter(s) {sorted(unknown)}; "
                         f"expected {list(PARAM_NAMES[family])}")
    if "sigma" in params and params["sigma"] < 0:
        raise ParamError(f"sigma must be >= 0, got {params['sigma']}")
    if "factor" in params and (params["factor"] < 1 or params["factor"] != int(params["factor"])):
        raise ParamError(f"factor must be an integer >= 1, got {params['factor']}")
    if "line_fraction" in params and not 0 <= params["line_fraction"] < 1:
        raise ParamError(f"line_fraction must be in [0, 1), got {params['line_fraction']}")
    if "max_shift_px" in params and params["max_shift_px"] < 0:
        raise ParamError(f"max_shift_px must be >= 0, got {params['max_shift_px']}")


@dataclass(frozen=True)
class CorruptionSpec:
    family: Family = Family.GAUSSIAN
    severity: Severity = Severity.MINOR
    params: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        _check_params(self.family, self.params)

    def resolved_params(self) -> Dict[str, float]:
        """Severity defaults with any overrides applied."""
        resolved = dict(SEVERITY_TABLE[self.family][self.severity])
        resolved.update(self.params)
        _check_params(self.family, resolved)
        return resolved

    def describe(self) -> Dict[str, Any]:
        return {"family": self.family.value, "severity": self.severity.value,
                "params": self.resolved_params(), "seed": self.seed}


# ============ Families ============

def corrupt_gaussian(s: Slice2D, sigma: float, seed: int) -> Slice2D:
    """Additive i.i.d. N(0, sigma^2) noise."""
    if sigma < 0:
        raise ParamError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return s
    noise = gaussian(make_rng(seed), s.dims)
    return s.with_data(np.clip(s.data + sigma * noise, 0.0, 1.0))


def corrupt_rician(s: Slice2D, sigma: float, seed: int) -> Slice2D:
    """Magnitude of the slice plus complex Gaussian noise."""
    if sigma < 0:
        raise ParamError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return s
    rng = make_rng(seed)
    n_re = gaussian(rng, s.dims)
    n_im = gaussian(rng, s.dims)
    out = np.hypot(s.data + sigma * n_re, sigma * n_im)
    return s.with_data(np.clip(out, 0.0, 1.0))


def corrupt_downsample(s: Slice2D, factor: int) -> Slice2D:
    """Bilinear decimation by ``factor`` followed by bilinear upsampling back."""
    h, w = s.dims
    factor = int(factor)
    if factor < 1:
        raise ParamError(f"factor must be >= 1, got {factor}")
    if factor > min(h, w) / 4:
        raise ParamError(f"factor {factor} too large for a {h}x{w} slice "
                         f"(at most {min(h, w) // 4})")
    if factor == 1:
        return s
    small = resize_array(s.data, (max(1, round_half_up(h / factor)),
                                  max(1, round_half_up(w / factor))))
    return s.with_data(np.clip(resize_array(small, (h, w)), 0.0, 1.0))


def corrupt_motion(s: Slice2D, line_fraction: float, max_shift_px: float, seed: int) -> Slice2D:
    """Replace random phase-encode rows of k-space with rows of translated copies.

    Rows (axis 0) are phase-encode lines. Row 0 holds DC and is never replaced.
    """
    if not 0 <= line_fraction < 1:
        raise ParamError(f"line_fraction must be in [0, 1), got {line_fraction}")
    h, w = s.dims
    n_rows = int(math.floor(line_fraction * h))
    n_rows = min(n_rows, h - 1)
    if n_rows == 0 or max_shift_px == 0:
        return s

    rng = make_rng(seed)
    rows = np.sort(rng.choice(np.arange(1, h), size=n_rows, replace=False))
    shifts = rng.uniform(-max_shift_px, max_shift_px, size=(n_rows, 2))

    kspace = np.fft.fft2(s.data)
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    for row, (dy, dx) in zip(rows, shifts):
        # Row of the FFT of the image translated by (dy, dx)
        kspace[row, :] *= np.exp(-2j * np.pi * (fy[row] * dy + fx * dx))
    out = np.real(np.fft.ifft2(kspace))
    logger.debug("motion rows=%s", rows.tolist())
    return s.with_data(np.clip(out, 0.0, 1.0))


# ============ Dispatch ============

def apply_params(family: Family, params: Dict[str, float], s: Slice2D, seed: int) -> Slice2D:
    if family is Family.GAUSSIAN:
        return corrupt_gaussian(s, params["sigma"], seed)
    if family is Family.RICIAN:
        return corrupt_rician(s, params["sigma"], seed)
    if family is Family.DOWNSAMPLING:
        return corrupt_downsample(s, int(params["factor"]))
    return corrupt_motion(s, params["line_fraction"], params["max_shift_px"], seed)


def slice_seed(seed: int, s: Slice2D) -> int:
    return split_seed(seed, s.slice_index)


def apply(spec: CorruptionSpec, s: Slice2D) -> Slice2D:
    """Corrupt one slice; the slice's seed is ``spec.seed XOR slice_index``."""
    params = spec.resolved_params()
    logger.debug("apply %s %s %s to slice %d", spec.family.value, spec.severity.value,
                 params, s.slice_index)
    return apply_params(spec.family, params, s, slice_seed(spec.seed, s))


# ============ Calibration ============

def gaussian_sigma_for_psnr(psnr_db: float) -> float:
    """Noise level giving ``psnr_db`` on an unclipped [0, 1] image."""
    return 10.0 ** (-psnr_db / 20.0)


@dataclass(frozen=True)
class SweepRow:
    family: Family
    param: str
    value: float
    n_slices: int
    mean_psnr: float
    mean_ssim: float
    infinite_psnr: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "param": self.param, "value": self.value,
                "n_slices": self.n_slices, "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim, "infinite_psnr": self.infinite_psnr}


def severity_sweep(slices: Sequence[Slice2D], family: Family, values: Sequence[float],
                   seed: int, param: Optional[str] = None,
                   ctx: MetricContext = MetricContext()) -> List[SweepRow]:
    """Mean corrupted-input PSNR and SSIM for each value of one family parameter.

    ``param`` defaults to the family's first parameter; the rest keep their
    Minor defaults. Infinite PSNRs are counted and left out of the mean.
    """
    if not slices:
        raise ParamError("severity_sweep needs at least one slice")
    param = param or PARAM_NAMES[family][0]
    rows = []
    for value in values:
        params = dict(SEVERITY_TABLE[family][Severity.MINOR])
        params[param] = value
        _check_params(family, params)
        psnrs, ssims = [], []
        for s in slices:
            corrupted = apply_params(family, params, s, slice_seed(seed, s))
            psnrs.append(psnr(s, corrupted, ctx))
            ssims.append(ssim(s, corrupted, ctx))
        finite = [p for p in psnrs if math.isfinite(p)]
        rows.append(SweepRow(
            family=family, param=param, value=float(value), n_slices=len(slices),
            mean_psnr=float(np.mean(finite)) if finite else math.inf,
            mean_ssim=float(np.mean(ssims)), infinite_psnr=len(psnrs) - len(finite)))
        logger.debug("sweep %s %s=%s psnr=%.3f", family.value, param, value, rows[-1].mean_psnr)
    return rows
