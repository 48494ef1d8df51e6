"""
Loss Diagnostics Run for synth-eval
Evaluates every loss on real inputs, checks each analytic gradient against
central differences on seeded random instances, and records the values
reached on identical inputs.
"""

import logging
import math
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..corruption import corrupt_gaussian
from ..embed_analysis import PrototypeClassifier, class_mean_prototypes
from ..errors import InvariantViolation
from ..losses import (
    ContrastiveConfig, DecoderLossConfig, GradientCheck, LossValueGrad, gradient_check,
    intra_pairs, l1_tie_mask, loss_decoder_total, loss_encoder_total, loss_featuremap,
    loss_infonce, loss_modality_ce, loss_pixel, loss_semantic, loss_vector,
)
from ..phantom import PHANTOM_MODALITIES, PhantomSpec, generate_embeddings, generate_phantom
from ..rng import gaussian, make_rng, split_seed
from ..volume_model import EmbeddingBatch, FeatureMapSet, Modality, read_embeddings
from .base import BaseRun, RunResult

logger = logging.getLogger(__name__)

COLUMNS = ("loss", "value", "identity_value", "identity_expected", "instances", "max_rel_error", "passed")

Instance = Tuple[Callable[[Dict[str, np.ndarray]], LossValueGrad], Dict[str, np.ndarray],
                 Optional[Dict[str, np.ndarray]]]

# Two slices of one subject in three modalities; every item has two positives.
_LAYOUT = [(m, "s0", z) for z in range(2) for m in PHANTOM_MODALITIES]
_DIM = 8
_SIDE = 6


def _batch(vectors: np.ndarray) -> EmbeddingBatch:
    return EmbeddingBatch.from_arrays(vectors, [m for m, _, _ in _LAYOUT],
                                      [s for _, s, _ in _LAYOUT], [z for _, _, z in _LAYOUT])


def _vector_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    inputs = {"a": gaussian(rng, (_DIM,)), "b": gaussian(rng, (_DIM,))}
    return lambda x: loss_vector(x["a"], x["b"]), inputs, None


def _featuremap_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    shapes = [(2, 4, 4), (3, 2, 2)]
    inputs = {}
    for level, shape in enumerate(shapes):
        inputs[f"f1[{level}]"] = gaussian(rng, shape)
        inputs[f"f2[{level}]"] = gaussian(rng, shape)

    def fn(x):
        f1 = FeatureMapSet(tuple(x[f"f1[{l}]"] for l in range(len(shapes))))
        f2 = FeatureMapSet(tuple(x[f"f2[{l}]"] for l in range(len(shapes))))
        return loss_featuremap(f1, f2, cfg.l1_weight)

    exclude = {}
    for level in range(len(shapes)):
        tie = l1_tie_mask(inputs[f"f1[{level}]"], inputs[f"f2[{level}]"], h)
        exclude[f"f1[{level}]"] = tie
        exclude[f"f2[{level}]"] = tie
    return fn, inputs, exclude


def _infonce_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    inputs = {"vectors": gaussian(rng, (len(_LAYOUT), _DIM))}
    return lambda x: loss_infonce(_batch(x["vectors"]), cfg), inputs, None


def _encoder_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    n = len(_LAYOUT)
    shape = (2, 3, 3)
    inputs = {"vectors": gaussian(rng, (n, _DIM))}
    for i in range(n):
        inputs[f"maps[{i}][0]"] = gaussian(rng, shape)

    def fn(x):
        maps = [FeatureMapSet((x[f"maps[{i}][0]"],)) for i in range(n)]
        return loss_encoder_total(_batch(x["vectors"]), maps, cfg)

    exclude = {f"maps[{i}][0]": np.zeros(shape, dtype=bool) for i in range(n)}
    for i, j in intra_pairs(_batch(inputs["vectors"])):
        tie = l1_tie_mask(inputs[f"maps[{i}][0]"], inputs[f"maps[{j}][0]"], h)
        exclude[f"maps[{i}][0]"] |= tie
        exclude[f"maps[{j}][0]"] |= tie
    return fn, inputs, exclude


def _pixel_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    gt = rng.random((_SIDE, _SIDE))
    inputs = {"syn": rng.random((_SIDE, _SIDE))}
    return lambda x: loss_pixel(x["syn"], gt), inputs, {"syn": l1_tie_mask(inputs["syn"], gt, h)}


def _semantic_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    e_t = gaussian(rng, (_DIM,))
    inputs = {"e_v": gaussian(rng, (_DIM,))}
    return lambda x: loss_semantic(x["e_v"], e_t), inputs, None


def _decoder_instance(rng, cfg: ContrastiveConfig, h: float, weights=DecoderLossConfig()) -> Instance:
    gt = rng.random((_SIDE, _SIDE))
    e_t = gaussian(rng, (_DIM,))
    inputs = {"syn": rng.random((_SIDE, _SIDE)), "e_v": gaussian(rng, (_DIM,))}
    return (lambda x: loss_decoder_total(x["syn"], gt, x["e_v"], e_t, weights), inputs,
            {"syn": l1_tie_mask(inputs["syn"], gt, h)})


def _modality_ce_instance(rng, cfg: ContrastiveConfig, h: float) -> Instance:
    clf = PrototypeClassifier({m: gaussian(rng, (_DIM,)) for m in PHANTOM_MODALITIES},
                              temperature=0.5)
    inputs = {"vectors": gaussian(rng, (len(_LAYOUT), _DIM))}
    return lambda x: loss_modality_ce(_batch(x["vectors"]), clf), inputs, None


GRADIENT_SUITE: Dict[str, Callable[..., Instance]] = {
    "vector": _vector_instance,
    "featuremap": _featuremap_instance,
    "infonce": _infonce_instance,
    "encoder_total": _encoder_instance,
    "pixel": _pixel_instance,
    "semantic": _semantic_instance,
    "decoder_total": _decoder_instance,
    "modality_ce": _modality_ce_instance,
}


def run_gradient_suite(name: str, instances: int, seed: int, cfg: ContrastiveConfig,
                       h: float, tol: float) -> GradientCheck:
    """Worst gradient check of one loss over ``instances`` seeded random inputs."""
    build = GRADIENT_SUITE[name]
    worst: Optional[GradientCheck] = None
    checked = masked = 0
    for index in range(instances):
        rng = make_rng(split_seed(seed, index))
        fn, inputs, exclude = build(rng, cfg, h)
        check = gradient_check(fn, inputs, h=h, tol=tol, exclude=exclude)
        checked += check.n_checked
        masked += check.n_masked
        if worst is None or check.max_rel_error > worst.max_rel_error:
            worst = check
    return GradientCheck(max_rel_error=worst.max_rel_error, tolerance=tol, n_checked=checked,
                         n_masked=masked, per_input=worst.per_input)


def identity_values(cfg: ContrastiveConfig, dcfg: DecoderLossConfig) -> Dict[str, Dict[str, float]]:
    """Loss values on identical inputs next to their expected closed-form values."""
    v = np.linspace(1.0, 2.0, _DIM)
    same = _batch(np.tile(v, (len(_LAYOUT), 1)))
    fm = FeatureMapSet((np.ones((2, 3, 3)),))
    img = np.full((_SIDE, _SIDE), 0.5)
    n_pairs = len(intra_pairs(same))
    # Identical vectors: every similarity is equal, so each anchor contributes log(n - 1)
    infonce_min = len(_LAYOUT) * math.log(len(_LAYOUT) - 1)
    return {
        "vector": {"value": loss_vector(v, v).value, "expected": -1.0},
        "featuremap": {"value": loss_featuremap(fm, fm, cfg.l1_weight).value, "expected": 0.0},
        "infonce": {"value": loss_infonce(same, cfg).value, "expected": infonce_min},
        "encoder_total": {"value": loss_encoder_total(same, [fm] * len(same), cfg).value,
                          "expected": -n_pairs + infonce_min},
        "pixel": {"value": loss_pixel(img, img).value, "expected": 0.0},
        "semantic": {"value": loss_semantic(v, v).value, "expected": 0.0},
        "decoder_total": {"value": loss_decoder_total(img, img, v, v, dcfg).value, "expected": 0.0},
    }


class LossRun(BaseRun):
    """The ``losses`` subcommand."""

    kind = "losses"

    def contrastive_config(self) -> ContrastiveConfig:
        s = self.settings.losses
        return ContrastiveConfig(tau=s.tau, normalize=s.normalize, l1_weight=s.l1_weight)

    def decoder_config(self) -> DecoderLossConfig:
        s = self.settings.losses
        return DecoderLossConfig(w_pixel=s.w_pixel, w_semantic=s.w_semantic)

    def _embeddings(self, result: RunResult) -> EmbeddingBatch:
        path = self.settings.losses.embeddings
        if path:
            self.digest_inputs(result, [Path(path)])
            return read_embeddings(path)
        p = self.settings.phantom
        spec = PhantomSpec(dims=tuple(p.dims), spacing=tuple(p.spacing), seed=self.seed,
                           n_structures=p.n_structures, lesion=p.lesion)
        return generate_embeddings(spec, p.embedding_dim, p.slice_signal_scale,
                                   p.modality_offset_scale, p.noise_scale)

    def evaluate_values(self, batch: EmbeddingBatch) -> Dict[str, float]:
        """Every loss on the run's actual inputs."""
        cfg = self.contrastive_config()
        p = self.settings.phantom
        spec = PhantomSpec(dims=tuple(p.dims), spacing=tuple(p.spacing), seed=self.seed,
                           n_structures=p.n_structures, lesion=p.lesion)
        phantom = generate_phantom(spec)
        z = spec.dims[2] // 2
        gt = phantom.volumes[Modality.T2].slice(z)
        syn = corrupt_gaussian(gt, 0.05, split_seed(self.seed, z))
        features = [FeatureMapSet((phantom.volumes[m].slice(z).data[None, ::4, ::4],))
                    for m in PHANTOM_MODALITIES]

        first, second = intra_pairs(batch)[0] if intra_pairs(batch) else (0, 1)
        e_v = batch.items[first].vector
        e_t = batch.items[second].vector
        return {
            "vector": loss_vector(e_v, e_t).value,
            "featuremap": loss_featuremap(features[0], features[1], cfg.l1_weight).value,
            "infonce": loss_infonce(batch, cfg).value,
            "encoder_total": loss_encoder_total(batch, None, cfg).value,
            "pixel": loss_pixel(syn, gt).value,
            "semantic": loss_semantic(e_v, e_t).value,
            "decoder_total": loss_decoder_total(syn, gt, e_v, e_t, self.decoder_config()).value,
            "modality_ce": loss_modality_ce(batch, class_mean_prototypes(batch)).value,
        }

    def run(self) -> RunResult:
        s = self.settings.losses
        cfg = self.contrastive_config()
        result = self.new_result(COLUMNS)
        batch = self._embeddings(result)
        values = self.evaluate_values(batch)
        minima = identity_values(cfg, self.decoder_config())

        names = list(GRADIENT_SUITE)
        checks = self.process_manager.map_ordered(
            "gradient-check",
            lambda name: run_gradient_suite(name, s.instances, split_seed(self.seed, names.index(name)),
                                            cfg, s.fd_step, s.fd_tolerance),
            [(i, name) for i, name in enumerate(names)])

        for name, check in zip(names, checks):
            result.rows.append({
                "loss": name, "value": values[name],
                "identity_value": minima.get(name, {}).get("value"),
                "identity_expected": minima.get(name, {}).get("expected"),
                "instances": s.instances, "max_rel_error": check.max_rel_error,
                "passed": check.passed,
            })
            logger.info("%s: value %.6g, max rel error %.2e (%s)", name, values[name],
                        check.max_rel_error, "pass" if check.passed else "FAIL")
        result.extras["gradient_checks"] = {name: c.to_dict() for name, c in zip(names, checks)}
        result.extras["identity"] = minima
        result.extras["fd"] = {"step": s.fd_step, "tolerance": s.fd_tolerance}
        result.finalize()

        failed = [r["loss"] for r in result.rows if not r["passed"]]
        if failed:
            result.write(self.out_dir, self.settings.global_settings.output_format)
            raise InvariantViolation(f"Gradient check failed for {', '.join(failed)}")
        return result
