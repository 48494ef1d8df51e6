"""
Image-quality and agreement metrics for synth-eval.

All functions are pure. Variances and covariances use the unbiased N-1
divisor in global SSIM; windowed SSIM uses Gaussian-weighted local moments
(weights sum to one) averaged over the valid region of the image.
"""

import logging
import math
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence, Union
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .errors import DegenerateVector, DimError, ParamError, UndefinedAccuracy, UndefinedDice
from .volume_model import Mask2D, Slice2D

logger = logging.getLogger(__name__)

ArrayLike = Union[Slice2D, Mask2D, np.ndarray]


class SsimMode(Enum):
    GLOBAL = "global"
    WINDOWED = "windowed"


@dataclass(frozen=True)
class MetricContext:
    """Dynamic range and SSIM stabilizers."""
    L: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    ssim_mode: SsimMode = SsimMode.GLOBAL
    window: int = 11
    gaussian_sigma: float = 1.5

    def __post_init__(self):
        if not self.L > 0:
            raise ParamError(f"L must be > 0, got {self.L}")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ParamError("k1 and k2 must be > 0")
        if self.window < 1 or self.window % 2 == 0:
            raise ParamError(f"SSIM window must be a positive odd size, got {self.window}")

    @property
    def C1(self) -> float:
        return (self.k1 * self.L) ** 2

    @property
    def C2(self) -> float:
        return (self.k2 * self.L) ** 2

    def describe(self) -> Dict:
        return {"L": self.L, "k1": self.k1, "k2": self.k2, "C1": self.C1, "C2": self.C2,
                "ssim_mode": self.ssim_mode.value, "window": self.window,
                "gaussian_sigma": self.gaussian_sigma}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ParamError("Confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _pair(ref: ArrayLike, syn: ArrayLike):
    a = np.asarray(getattr(ref, "data", ref), dtype=np.float64)
    b = np.asarray(getattr(syn, "data", syn), dtype=np.float64)
    if a.shape != b.shape:
        raise DimError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return a, b


# ============ Pixel fidelity ============

def mse(ref: ArrayLike, syn: ArrayLike) -> float:
    a, b = _pair(ref, syn)
    return float(np.mean((a - b) ** 2))


def mae(ref: ArrayLike, syn: ArrayLike) -> float:
    a, b = _pair(ref, syn)
    return float(np.mean(np.abs(a - b)))


def psnr_from_mse(value: float, L: float = 1.0) -> float:
    """10*log10(L^2 / mse); ``math.inf`` when mse is zero."""
    if value == 0:
        return math.inf
    return 10.0 * math.log10(L * L / value)


def psnr(ref: ArrayLike, syn: ArrayLike, ctx: MetricContext = MetricContext()) -> float:
    return psnr_from_mse(mse(ref, syn), ctx.L)


# ============ Structural similarity ============

def _ssim_formula(mu_a, mu_b, var_a, var_b, cov_ab, C1: float, C2: float):
    return ((2 * mu_a * mu_b + C1) * (2 * cov_ab + C2)) / \
           ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))


def _cov(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum((x - x.mean()) * (y - y.mean())) / (x.size - 1))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian weights."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(ref: ArrayLike, syn: ArrayLike, ctx: MetricContext = MetricContext()) -> np.ndarray:
    """Local SSIM over every full window position (valid region)."""
    a, b = _pair(ref, syn)
    w = ctx.window
    if min(a.shape) < w:
        raise ParamError(f"SSIM window {w} is larger than image {a.shape}")
    kernel = gaussian_window(w, ctx.gaussian_sigma)
    half = w // 2
    valid = (slice(half, a.shape[0] - half), slice(half, a.shape[1] - half))

    def local_mean(x):
        return ndimage.correlate(x, kernel, mode="constant")[valid]

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov_ab = local_mean(a * b) - mu_a * mu_b
    return _ssim_formula(mu_a, mu_b, var_a, var_b, cov_ab, ctx.C1, ctx.C2)


def ssim(ref: ArrayLike, syn: ArrayLike, ctx: MetricContext = MetricContext()) -> float:
    """SSIM in the context's mode; result lies in [-1, 1]."""
    a, b = _pair(ref, syn)
    if ctx.ssim_mode is SsimMode.WINDOWED:
        return float(np.mean(ssim_map(a, b, ctx)))
    if a.size < 2:
        raise ParamError("Global SSIM needs at least two pixels")
    value = _ssim_formula(float(a.mean()), float(b.mean()), _cov(a, a), _cov(b, b), _cov(a, b),
                          ctx.C1, ctx.C2)
    return float(value)


# ============ Segmentation and classification ============

def dice(p: ArrayLike, g: ArrayLike) -> float:
    """2|P and G| / (|P| + |G|); raises UndefinedDice when both masks are empty."""
    a, b = _pair(p, g)
    a = a > 0.5
    b = b > 0.5
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        raise UndefinedDice("Dice is undefined for two empty masks")
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


def dice_or_none(p: ArrayLike, g: ArrayLike) -> Optional[float]:
    try:
        return dice(p, g)
    except UndefinedDice:
        return None


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedAccuracy("Accuracy is undefined with no samples")
    return (c.tp + c.tn) / c.total


def confusion_counts(pred: Sequence, truth: Sequence, positive=None) -> ConfusionCounts:
    """Counts for label sequences.

    With ``positive`` set, one-vs-rest counts for that class. Without it,
    correct predictions count as tp and wrong ones as fn, so ``accuracy``
    gives overall multi-class accuracy.
    """
    if len(pred) != len(truth):
        raise DimError(f"{len(pred)} predictions for {len(truth)} labels")
    if positive is None:
        correct = sum(1 for p, t in zip(pred, truth) if p == t)
        return ConfusionCounts(tp=correct, fn=len(pred) - correct)
    tp = tn = fp = fn = 0
    for p, t in zip(pred, truth):
        if t == positive:
            if p == positive:
                tp += 1
            else:
                fn += 1
        elif p == positive:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def cosine_similarity(a: Iterable[float], b: Iterable[float]) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimError(f"Vector lengths differ: {a.size} vs {b.size}")
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    if aa == 0 or bb == 0:
        raise DegenerateVector("Cosine similarity of a zero vector")
    # sqrt(aa * aa) == aa exactly, so identical vectors give exactly 1
    return float(np.clip(np.dot(a, b) / math.sqrt(aa * bb), -1.0, 1.0))


# ============ Evaluation helpers ============

def evaluate_pair(ref: ArrayLike, syn: ArrayLike, ctx: MetricContext = MetricContext()) -> Dict[str, float]:
    """MSE, MAE, PSNR and SSIM of one slice pair."""
    m = mse(ref, syn)
    return {
        "mse": m,
        "mae": mae(ref, syn),
        "psnr": psnr_from_mse(m, ctx.L),
        "ssim": ssim(ref, syn, ctx),
    }


def paired_significance(a: Sequence[float], b: Sequence[float]) -> Dict[str, Optional[float]]:
    """Paired two-sided t-test of per-slice values of two methods on the same references.

    Pairs where either value is non-finite are dropped.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimError(f"Paired samples differ in length: {x.size} vs {y.size}")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    n = int(x.size)
    result: Dict[str, Optional[float]] = {"n": n, "mean_diff": None, "t": None, "p": None}
    if n == 0:
        return result
    result["mean_diff"] = float(np.mean(x - y))
    if n < 2 or np.all(x - y == (x - y)[0]):
        # t is undefined for zero-variance differences
        return result
    t, p = stats.ttest_rel(x, y)
    result["t"] = float(t)
    result["p"] = float(p)
    return result
