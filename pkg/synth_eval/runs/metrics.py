"""
Metrics Run for synth-eval
Pairs reference and synthesized volumes by ``<subject>_<modality>.nii[.gz]``
(or an explicit manifest), preprocesses both and scores every axial slice.
"""

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..errors import ConfigError, DimError, FormatError, IoError, PairingError
from ..metrics import evaluate_pair, paired_significance
from ..preprocess import ResampleSpec, ResizeSpec, prepare_slices
from ..volume_model import Modality, Slice2D, read_nifti
from .base import BaseRun, RunResult

logger = logging.getLogger(__name__)

COLUMNS = ("subject", "modality", "direction", "slice", "mse", "mae", "psnr", "ssim")
METRICS = ("mse", "mae", "psnr", "ssim")

VOLUME_NAME = re.compile(
    r"^(?P<subject>.+)_(?P<modality>" + "|".join(m.value for m in Modality) + r")\.nii(\.gz)?$")

PairKey = Tuple[str, Modality]


def pair_sort_key(key: PairKey):
    return (key[0], key[1].index)


def discover_volumes(directory: Path) -> Dict[PairKey, Path]:
    """Map (subject, modality) to file for every conventionally named volume in ``directory``."""
    if not directory.is_dir():
        raise IoError(f"Not a directory: {directory}")
    found: Dict[PairKey, Path] = {}
    for path in sorted(directory.iterdir()):
        match = VOLUME_NAME.match(path.name)
        if not match:
            continue
        key = (match["subject"], Modality(match["modality"]))
        if key in found:
            raise PairingError([found[key].as_posix(), path.as_posix()])
        found[key] = path
    return found


def pair_directories(ref: Dict[PairKey, Path], syn: Dict[PairKey, Path]) -> List[Tuple[PairKey, Path, Path]]:
    orphans = [ref[k].as_posix() for k in ref.keys() - syn.keys()]
    orphans += [syn[k].as_posix() for k in syn.keys() - ref.keys()]
    if orphans:
        raise PairingError(orphans)
    return [(k, ref[k], syn[k]) for k in sorted(ref, key=pair_sort_key)]


def read_manifest(path: Path) -> List[Tuple[PairKey, Path, Path]]:
    """Explicit pairs: ``{"pairs": [{"subject", "modality", "ref", "syn"}]}``.

    Relative paths resolve against the manifest's directory.
    """
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IoError(f"No such manifest: {path}")
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid manifest JSON {path}: {e.msg}", offset=e.pos)
    pairs = []
    seen = set()
    try:
        for entry in payload["pairs"]:
            key = (str(entry["subject"]), Modality.parse(entry["modality"]))
            if key in seen:
                raise FormatError(f"{path}: duplicate pair {key[0]}/{key[1].value}")
            seen.add(key)
            pairs.append((key, path.parent / entry["ref"], path.parent / entry["syn"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed manifest entry ({e})")
    missing = [p.as_posix() for _, r, s in pairs for p in (r, s) if not p.exists()]
    if missing:
        raise PairingError(missing)
    return sorted(pairs, key=lambda p: pair_sort_key(p[0]))


class MetricsRun(BaseRun):
    """The ``metrics`` subcommand."""

    kind = "metrics"

    def _slices(self, path: Path, key: PairKey) -> List[Slice2D]:
        pre = self.settings.preprocess
        volume = read_nifti(path, modality=key[1], subject_id=key[0])
        resize = ResizeSpec(tuple(pre.target_dims)) if pre.resize else None
        return prepare_slices(volume, ResampleSpec(tuple(pre.target_spacing)), resize)

    def pairs(self) -> List[Tuple[PairKey, Path, Path]]:
        m = self.settings.metrics
        if m.manifest:
            return read_manifest(Path(m.manifest))
        if not (m.ref_dir and m.syn_dir):
            raise ConfigError("metrics needs --ref-dir and --syn-dir, or --manifest")
        return pair_directories(discover_volumes(Path(m.ref_dir)), discover_volumes(Path(m.syn_dir)))

    def _score(self, item: Tuple[PairKey, Path, Path]) -> List[Dict]:
        key, ref_path, syn_path = item
        ctx = self.metric_context()
        ref = self._slices(ref_path, key)
        syn = self._slices(syn_path, key)
        if len(ref) != len(syn):
            raise DimError(f"{ref_path} has {len(ref)} slices, {syn_path} has {len(syn)}")
        direction = self.settings.metrics.direction or key[1].value
        return [{"subject": key[0], "modality": key[1].value, "direction": direction,
                 "slice": r.slice_index, **evaluate_pair(r, s, ctx)}
                for r, s in zip(ref, syn)]

    def _score_all(self, pairs) -> List[Dict]:
        per_pair = self.process_manager.map_ordered(
            "metrics", self._score, [(pair_sort_key(p[0]), p) for p in pairs])
        return [row for rows in per_pair for row in rows]

    def run(self) -> RunResult:
        pairs = self.pairs()
        logger.info("scoring %d volume pair(s)", len(pairs))
        result = self.new_result(COLUMNS, group_by=("direction",), metrics=METRICS)
        result.rows.extend(self._score_all(pairs))
        self.digest_inputs(result, [p for _, r, s in pairs for p in (r, s)])
        result.extras["metric_context"] = self.metric_context().describe()

        compare_dir = self.settings.metrics.compare_dir
        if compare_dir:
            result.extras["significance"] = self._significance(pairs, Path(compare_dir), result)
        logger.info("metrics: %d slice rows", len(result.rows))
        return result.finalize()

    def _significance(self, pairs, compare_dir: Path, result: RunResult) -> Dict:
        """Paired t-test per metric between the synthesized and comparison outputs."""
        ref = {key: r for key, r, _ in pairs}
        compare_pairs = pair_directories(ref, discover_volumes(compare_dir))
        other = self._score_all(compare_pairs)
        self.digest_inputs(result, [s for _, _, s in compare_pairs])
        return {"compare_dir": compare_dir.as_posix(),
                **{metric: paired_significance([r[metric] for r in result.rows],
                                               [r[metric] for r in other])
                   for metric in METRICS}}
