"""
Training objectives with analytic gradients

Encoder losses (vector cosine, feature-map MSE + L1, supervised InfoNCE),
decoder losses (pixel MSE + L1, semantic cosine) and the prototype
cross-entropy, each returning its value together with gradients keyed by
input name. ``gradient_check`` verifies any of them by central differences.

The L1 subgradient at an exact tie is 0.
"""

import itertools
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .embed_analysis import PrototypeClassifier
from .errors import BatchTooSmall, DegenerateVector, DimError, NoPositiveError, ParamError
from .volume_model import EmbeddingBatch, FeatureMapSet, Slice2D

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.07
    normalize: bool = True
    l1_weight: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ParamError(f"tau must be > 0, got {self.tau}")
        if self.l1_weight < 0:
            raise ParamError(f"l1_weight must be >= 0, got {self.l1_weight}")


@dataclass(frozen=True)
class DecoderLossConfig:
    w_pixel: float = 1.0
    w_semantic: float = 1.0

    def __post_init__(self):
        if self.w_pixel < 0 or self.w_semantic < 0 or not self.w_pixel + self.w_semantic > 0:
            raise ParamError("Decoder weights must be >= 0 with a positive sum, got "
                             f"({self.w_pixel}, {self.w_semantic})")


@dataclass
class LossValueGrad:
    value: float
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, other: "LossValueGrad", weight: float = 1.0, rename: Optional[Dict[str, str]] = None):
        """Accumulate ``weight * other`` in place, mapping other's gradient keys through ``rename``."""
        self.value += weight * other.value
        for key, grad in other.gradients.items():
            key = (rename or {}).get(key, key)
            if key in self.gradients:
                self.gradients[key] = self.gradients[key] + weight * grad
            else:
                self.gradients[key] = weight * grad
        return self


def _vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if not np.any(v):
        raise DegenerateVector(f"{name} is a zero vector")
    return v


def _cosine_and_grads(a: np.ndarray, b: np.ndarray):
    aa = float(np.dot(a, a))
    bb = float(np.dot(b, b))
    na = np.sqrt(aa)
    nb = np.sqrt(bb)
    # sqrt(aa * aa) == aa, so a == b gives exactly 1
    c = float(np.clip(np.dot(a, b) / np.sqrt(aa * bb), -1.0, 1.0))
    grad_a = b / (na * nb) - c * a / (na * na)
    grad_b = a / (na * nb) - c * b / (nb * nb)
    return c, grad_a, grad_b


def _l1_grad(diff: np.ndarray) -> np.ndarray:
    return np.sign(diff)


# ============ Encoder ============

def loss_vector(a, b) -> LossValueGrad:
    """Negative cosine similarity of two embedding vectors."""
    a = _vector(a, "a")
    b = _vector(b, "b")
    if a.shape != b.shape:
        raise DimError(f"Vector lengths differ: {a.size} vs {b.size}")
    c, grad_a, grad_b = _cosine_and_grads(a, b)
    return LossValueGrad(-c, {"a": -grad_a, "b": -grad_b})


def loss_featuremap(f1: FeatureMapSet, f2: FeatureMapSet, l1_weight: float = 1.0) -> LossValueGrad:
    """Sum over levels of MSE + l1_weight * L1; l1_weight=0 gives the MSE-only form."""
    if len(f1.levels) != len(f2.levels):
        raise DimError(f"Feature sets have {len(f1.levels)} and {len(f2.levels)} levels")
    out = LossValueGrad(0.0)
    for level, (x, y) in enumerate(zip(f1.levels, f2.levels)):
        if x.shape != y.shape:
            raise DimError(f"Level {level} shapes differ: {x.shape} vs {y.shape}")
        d = x - y
        n = d.size
        value = float(np.mean(d * d))
        grad = 2.0 * d / n
        if l1_weight:
            value += l1_weight * float(np.mean(np.abs(d)))
            grad = grad + l1_weight * _l1_grad(d) / n
        out.value += value
        out.gradients[f"f1[{level}]"] = grad
        out.gradients[f"f2[{level}]"] = -grad
    return out


def positive_sets(batch: EmbeddingBatch) -> List[List[int]]:
    """Indices sharing each item's (subject, slice) with a different modality."""
    groups: Dict[Tuple[str, int], List[int]] = {}
    for i, item in enumerate(batch.items):
        groups.setdefault((item.subject_id, item.slice_index), []).append(i)
    positives = []
    for i, item in enumerate(batch.items):
        group = groups[(item.subject_id, item.slice_index)]
        positives.append([j for j in group if j != i and batch.items[j].modality is not item.modality])
    return positives


def loss_infonce(batch: EmbeddingBatch, cfg: ContrastiveConfig = ContrastiveConfig()) -> LossValueGrad:
    """Supervised InfoNCE summed over anchors.

    term(i) = logsumexp_{a != i}(s_ia) - mean_{p in P(i)} s_ip, with
    s = z_i . z_a / tau over (optionally) unit-normalized vectors.
    The gradient is with respect to the raw vectors, key ``vectors``.
    """
    n = len(batch)
    if n < 2:
        raise BatchTooSmall(f"InfoNCE needs at least 2 items, got {n}")
    positives = positive_sets(batch)
    for i, pos in enumerate(positives):
        if not pos:
            raise NoPositiveError(batch.items[i].label)

    z = batch.matrix()
    if cfg.normalize:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        u = z / norms
    else:
        u = z
    s = (u @ u.T) / cfg.tau

    off_diag = ~np.eye(n, dtype=bool)
    masked = np.where(off_diag, s, -np.inf)
    lse = logsumexp(masked, axis=1)
    weights = np.zeros((n, n))
    for i, pos in enumerate(positives):
        weights[i, pos] = 1.0 / len(pos)
    value = float(np.sum(lse - np.sum(weights * s, axis=1)))

    g = softmax(masked, axis=1) - weights
    grad_u = (g + g.T) @ u / cfg.tau
    if cfg.normalize:
        grad_z = (grad_u - u * np.sum(u * grad_u, axis=1, keepdims=True)) / norms
    else:
        grad_z = grad_u
    return LossValueGrad(value, {"vectors": grad_z})


def intra_pairs(batch: EmbeddingBatch) -> List[Tuple[int, int]]:
    """All unordered item pairs sharing (subject, slice)."""
    return [(i, j) for i, j in itertools.combinations(range(len(batch)), 2)
            if (batch.items[i].subject_id, batch.items[i].slice_index)
            == (batch.items[j].subject_id, batch.items[j].slice_index)]


def loss_encoder_total(batch: EmbeddingBatch, featuremaps: Optional[Sequence[FeatureMapSet]] = None,
                       cfg: ContrastiveConfig = ContrastiveConfig()) -> LossValueGrad:
    """Intra-subject consistency (vector + feature-map terms over same-slice pairs) plus InfoNCE.

    ``featuremaps`` holds one set per batch item; gradient keys are
    ``vectors`` and ``maps[i][level]``.
    """
    if featuremaps is not None and len(featuremaps) != len(batch):
        raise DimError(f"{len(featuremaps)} feature sets for {len(batch)} items")
    z = batch.matrix()
    total = LossValueGrad(0.0, {"vectors": np.zeros_like(z)})
    if featuremaps is not None:
        for i, fm in enumerate(featuremaps):
            for level, x in enumerate(fm.levels):
                total.gradients[f"maps[{i}][{level}]"] = np.zeros_like(x)

    for i, j in intra_pairs(batch):
        pair = loss_vector(z[i], z[j])
        total.value += pair.value
        total.gradients["vectors"][i] += pair.gradients["a"]
        total.gradients["vectors"][j] += pair.gradients["b"]
        if featuremaps is not None:
            maps = loss_featuremap(featuremaps[i], featuremaps[j], cfg.l1_weight)
            rename = {}
            for level in range(len(featuremaps[i].levels)):
                rename[f"f1[{level}]"] = f"maps[{i}][{level}]"
                rename[f"f2[{level}]"] = f"maps[{j}][{level}]"
            total.add(maps, rename=rename)

    return total.add(loss_infonce(batch, cfg))


# ============ Decoder ============

def loss_pixel(syn: Slice2D, gt: Slice2D) -> LossValueGrad:
    """MSE + L1 between synthesized and ground-truth slices; gradient w.r.t. ``syn``."""
    a = np.asarray(getattr(syn, "data", syn), dtype=np.float64)
    b = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if a.shape != b.shape:
        raise DimError(f"Shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    n = d.size
    value = float(np.mean(d * d) + np.mean(np.abs(d)))
    return LossValueGrad(value, {"syn": (2.0 * d + _l1_grad(d)) / n})


def loss_semantic(e_v, e_t) -> LossValueGrad:
    """1 - cos(e_v, e_t); e_t is a fixed target, so only ``e_v`` gets a gradient."""
    a = _vector(e_v, "e_v")
    b = _vector(e_t, "e_t")
    if a.shape != b.shape:
        raise DimError(f"Vector lengths differ: {a.size} vs {b.size}")
    c, grad_a, _ = _cosine_and_grads(a, b)
    return LossValueGrad(1.0 - c, {"e_v": -grad_a})


def loss_decoder_total(syn: Slice2D, gt: Slice2D, e_v, e_t,
                       cfg: DecoderLossConfig = DecoderLossConfig()) -> LossValueGrad:
    total = LossValueGrad(0.0)
    total.add(loss_pixel(syn, gt), cfg.w_pixel)
    total.add(loss_semantic(e_v, e_t), cfg.w_semantic)
    return total


# ============ Classification ============

def loss_modality_ce(batch: EmbeddingBatch, clf: PrototypeClassifier) -> LossValueGrad:
    """Mean cross-entropy of the prototype softmax against true modalities.

    Gradient is with respect to the raw embedding vectors (key ``vectors``);
    prototypes are fixed.
    """
    clf.check_covers(batch)
    n = len(batch)
    if n == 0:
        raise BatchTooSmall("Cross-entropy needs at least one item")
    z = batch.matrix()
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    u = z / norms
    p = clf.prototype_matrix()
    p_hat = p / np.linalg.norm(p, axis=1, keepdims=True)
    cos = u @ p_hat.T
    logits = cos / clf.temperature

    classes = clf.classes
    targets = np.array([classes.index(item.modality) for item in batch.items])
    rows = np.arange(n)
    value = float(np.mean(logsumexp(logits, axis=1) - logits[rows, targets]))

    g = softmax(logits, axis=1)
    g[rows, targets] -= 1.0
    g /= n * clf.temperature
    # d cos_ic / d z_i = (p_hat_c - cos_ic * u_i) / |z_i|
    grad = (g @ p_hat - np.sum(g * cos, axis=1, keepdims=True) * u) / norms
    return LossValueGrad(value, {"vectors": grad})


# ============ Verification ============

@dataclass(frozen=True)
class GradientCheck:
    max_rel_error: float
    tolerance: float
    n_checked: int
    n_masked: int
    per_input: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> Dict:
        return {"max_rel_error": self.max_rel_error, "tolerance": self.tolerance,
                "n_checked": self.n_checked, "n_masked": self.n_masked,
                "passed": self.passed, "per_input": dict(self.per_input)}


def l1_tie_mask(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """Elements whose difference is close enough to 0 for a step of ``h`` to cross the kink."""
    return np.abs(np.asarray(a) - np.asarray(b)) <= 10 * h


def gradient_check(fn: Callable[[Dict[str, np.ndarray]], LossValueGrad],
                   inputs: Dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-4,
                   exclude: Optional[Dict[str, np.ndarray]] = None) -> GradientCheck:
    """Compare ``fn``'s analytic gradients with central differences.

    Every element of every input that ``fn`` reports a gradient for is
    perturbed by +-h. ``exclude`` masks elements (e.g. L1 ties) per input.
    Relative error per input is max|num - ana| / max(max|ana|, max|num|, 1e-3).
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    analytic = fn(inputs).gradients
    per_input: Dict[str, float] = {}
    checked = masked = 0
    for key, grad in analytic.items():
        if key not in inputs:
            continue
        x = inputs[key]
        if grad.shape != x.shape:
            raise DimError(f"Gradient for {key} has shape {grad.shape}, input has {x.shape}")
        skip = np.zeros(x.shape, dtype=bool) if exclude is None or key not in exclude \
            else np.asarray(exclude[key], dtype=bool)
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            if skip[idx]:
                continue
            orig = x[idx]
            x[idx] = orig + h
            plus = fn(inputs).value
            x[idx] = orig - h
            minus = fn(inputs).value
            x[idx] = orig
            numeric[idx] = (plus - minus) / (2 * h)
        keep = ~skip
        checked += int(keep.sum())
        masked += int(skip.sum())
        if not keep.any():
            per_input[key] = 0.0
            continue
        ana, num = grad[keep], numeric[keep]
        scale = max(float(np.max(np.abs(ana))), float(np.max(np.abs(num))), 1e-3)
        per_input[key] = float(np.max(np.abs(num - ana)) / scale)
    worst = max(per_input.values()) if per_input else 0.0
    return GradientCheck(max_rel_error=worst, tolerance=tol, n_checked=checked,
                         n_masked=masked, per_input=per_input)
