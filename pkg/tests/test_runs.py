import csv
import json
import math

import numpy as np
import pytest

from synth_eval.corruption import CorruptionSpec, Family, Severity, apply
from synth_eval.errors import ConfigError, DimError, InvariantViolation, PairingError
from synth_eval.metrics import evaluate_pair
from synth_eval.phantom import PhantomSpec, generate_phantom
from synth_eval.preprocess import normalize
from synth_eval.process_manager import ProcessManager
from synth_eval.runs import (
    CorruptRun, DiceRun, EmbedRun, LossRun, MetricsRun, PhantomRun, RobustnessRun, RunResult,
)
from synth_eval.runs.base import compute_aggregates, dumps, jsonable, summarize
from synth_eval.runs.dice import format_mean_std
from synth_eval.volume_model import (
    EmbeddingBatch, Mask2D, Modality, read_embeddings, read_nifti, write_embeddings,
    write_mask_stack, write_nifti,
)

SMALL = {"dims": [16, 16, 4], "embedding_dim": 8}


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def small():
    return generate_phantom(PhantomSpec(dims=(32, 32, 6), seed=8), subject_id="p")


@pytest.fixture
def volume_dir(tmp_path, small):
    directory = tmp_path / "clean"
    for modality in (Modality.T1, Modality.T2):
        write_nifti(small.volumes[modality], directory / f"p_{modality.value}.nii.gz")
    return directory


# ============ Report plumbing ============

class TestReports:
    def test_summarize(self):
        stats = summarize([1.0, 3.0, math.inf, None, float("nan")])
        assert stats == {"count": 2, "infinite": 1, "undefined": 2, "mean": 2.0,
                         "std": pytest.approx(math.sqrt(2))}
        assert summarize([4.0])["std"] == 0.0
        assert summarize([])["mean"] is None

    def test_jsonable(self):
        assert jsonable({"a": math.inf, "b": float("nan"), "c": np.float64(0.5),
                         "d": Modality.T1, "e": np.array([1, 2])}) == \
            {"a": "inf", "b": None, "c": 0.5, "d": "T1", "e": [1, 2]}

    def test_dumps_is_sorted_and_strict(self):
        text = dumps({"b": 1, "a": [math.inf]})
        assert text.index('"a"') < text.index('"b"')
        assert '"inf"' in text

    def test_grouped_aggregates(self):
        rows = [{"g": "x", "v": 1.0}, {"g": "x", "v": 2.0}, {"g": "y", "v": 5.0}]
        aggregates = compute_aggregates(rows, ("g",), ("v",))
        assert aggregates["x"]["v"]["mean"] == 1.5
        assert aggregates["y"]["v"]["count"] == 1

    def test_tampered_aggregates_are_caught(self, tmp_path):
        result = RunResult(kind="t", config={}, columns=("v",), rows=[{"v": 1.0}, {"v": 2.0}],
                           metrics=("v",)).finalize()
        result.aggregates["all"]["v"]["mean"] = 1.7
        with pytest.raises(InvariantViolation):
            result.write(tmp_path)

    def test_write_formats(self, tmp_path):
        result = RunResult(kind="t", config={"global": {"seed": 0}}, columns=("v", "w"),
                           rows=[{"v": 1.0, "w": None}], metrics=("v",)).finalize()
        written = result.write(tmp_path, "csv")
        assert [p.name for p in written] == ["t.csv"]
        assert (tmp_path / "t.csv").read_text() == "v,w\n1.0,\n"
        assert not (tmp_path / "t.json").exists()
        result.write(tmp_path, "json")
        payload = json.loads((tmp_path / "t.json").read_text())
        assert payload["schema_version"] == "1.0"
        assert payload["tool"]["name"] == "synth-eval"
        assert payload["aggregates"]["all"]["v"]["mean"] == 1.0

    def test_format_mean_std(self):
        assert format_mean_std(0.86571, 0.29) == "0.8657 ± 0.2900"
        assert format_mean_std(None, None) is None


# ============ Runs ============

class TestPhantomRun:
    def test_writes_volumes_masks_and_embeddings(self, make_settings):
        settings = make_settings(phantom={**SMALL, "subjects": 2})
        result = PhantomRun(settings, ProcessManager(2)).run()
        out = settings.get_out_dir()
        assert len(result.rows) == 2 * 4
        assert [r["subject"] for r in result.rows[:4]] == ["sub000"] * 4
        assert (out / "sub001_T1c.nii.gz").exists()
        assert (out / "sub001_T1c.json").exists()
        assert (out / "sub000_lesion_mask.nii.gz").exists()
        batch = read_embeddings(out / "embeddings.json")
        assert len(batch) == 2 * 4 * 3
        volume = read_nifti(out / "sub000_T2.nii.gz")
        assert volume.modality is Modality.T2 and volume.subject_id == "sub000"
        assert volume.dims == (16, 16, 4)

    def test_reports_are_byte_identical(self, tmp_path):
        from synth_eval.settings import SettingsManager

        texts = []
        for name in ("a", "b"):
            settings = SettingsManager(overrides={"global": {"out_dir": str(tmp_path / name), "seed": 4},
                                                  "phantom": SMALL})
            PhantomRun(settings, ProcessManager(2)).run().write(settings.get_out_dir())
            texts.append((tmp_path / name / "phantom.json").read_bytes())
        assert texts[0] == texts[1]


class TestCorruptRun:
    def test_rows_match_direct_computation(self, make_settings, volume_dir, small):
        settings = make_settings(corruption={"input": str(volume_dir / "p_T1.nii.gz"),
                                             "family": "RicianNoise", "severity": "Moderate"},
                                 **{"global": {"seed": 11}})
        result = CorruptRun(settings, ProcessManager(2)).run()
        out = settings.get_out_dir()
        assert len(result.rows) == 6
        clean = normalize(read_nifti(volume_dir / "p_T1.nii.gz"))
        spec = CorruptionSpec(Family.RICIAN, Severity.MODERATE, seed=11)
        for row, s in zip(result.rows, clean.slices()):
            assert row["seed"] == 11 ^ s.slice_index
            expected = evaluate_pair(s, apply(spec, s))
            assert row["psnr"] == expected["psnr"]
            assert row["ssim"] == expected["ssim"]

        written = read_nifti(out / "p_T1_RicianNoise_Moderate.nii.gz")
        assert written.dims == (32, 32, 6)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["corruption"]["params"] == {"sigma": 0.1}
        assert manifest["slice_seeds"]["3"] == 11 ^ 3
        assert list(result.inputs) == [(volume_dir / "p_T1.nii.gz").as_posix()]

    def test_param_override(self, make_settings, volume_dir):
        settings = make_settings(corruption={"input": str(volume_dir / "p_T2.nii.gz"),
                                             "family": "MotionArtifact", "severity": "Minor",
                                             "params": {"max_shift_px": 2.0}})
        result = CorruptRun(settings, ProcessManager(1)).run()
        assert result.extras["corruption"]["params"] == {"line_fraction": 0.05, "max_shift_px": 2.0}

    def test_needs_input(self, make_settings):
        with pytest.raises(ConfigError):
            CorruptRun(make_settings(), ProcessManager(1)).run()


class TestMetricsRun:
    @pytest.fixture
    def dirs(self, tmp_path, small):
        ref, syn, other = tmp_path / "ref", tmp_path / "syn", tmp_path / "other"
        for modality in (Modality.T1, Modality.T2):
            v = small.volumes[modality]
            write_nifti(v, ref / f"p_{modality.value}.nii.gz")
            noisy = np.stack([apply(CorruptionSpec(Family.GAUSSIAN, Severity.MINOR, seed=1), s).data
                              for s in v.slices()], axis=2)
            write_nifti(v.with_data(noisy), syn / f"p_{modality.value}.nii.gz")
            worse = np.stack([apply(CorruptionSpec(Family.GAUSSIAN, Severity.SEVERE, seed=2), s).data
                              for s in v.slices()], axis=2)
            write_nifti(v.with_data(worse), other / f"p_{modality.value}.nii")
        return ref, syn, other

    def test_scores_every_slice(self, make_settings, dirs):
        ref, syn, _ = dirs
        settings = make_settings(metrics={"ref_dir": str(ref), "syn_dir": str(syn)},
                                 preprocess={"resize": False})
        result = MetricsRun(settings, ProcessManager(2)).run()
        assert len(result.rows) == 2 * 6
        assert [r["modality"] for r in result.rows[:6]] == ["T1"] * 6
        assert set(result.aggregates) == {"T1", "T2"}
        assert all(math.isfinite(r["psnr"]) for r in result.rows)
        assert len(result.inputs) == 4

    def test_direction_label_and_resize(self, make_settings, dirs):
        ref, syn, _ = dirs
        settings = make_settings(metrics={"ref_dir": str(ref), "syn_dir": str(syn),
                                          "direction": "T1->T2"},
                                 preprocess={"target_dims": [48, 48]})
        result = MetricsRun(settings, ProcessManager(1)).run()
        assert set(result.aggregates) == {"T1->T2"}

    def test_identical_inputs_give_infinite_psnr(self, make_settings, dirs):
        ref, _, _ = dirs
        settings = make_settings(metrics={"ref_dir": str(ref), "syn_dir": str(ref)},
                                 preprocess={"resize": False})
        result = MetricsRun(settings, ProcessManager(1)).run()
        stats = result.aggregates["T1"]["psnr"]
        assert stats["infinite"] == 6 and stats["count"] == 0
        assert all(r["ssim"] == 1.0 for r in result.rows)
        result.write(settings.get_out_dir(), "json")
        payload = json.loads((settings.get_out_dir() / "metrics.json").read_text())
        assert payload["rows"][0]["psnr"] == "inf"

    def test_orphans(self, make_settings, dirs):
        ref, syn, _ = dirs
        (syn / "p_T2.nii.gz").unlink()
        settings = make_settings(metrics={"ref_dir": str(ref), "syn_dir": str(syn)})
        with pytest.raises(PairingError) as info:
            MetricsRun(settings, ProcessManager(1)).run()
        assert info.value.orphans == [(ref / "p_T2.nii.gz").as_posix()]

    def test_manifest(self, make_settings, dirs, tmp_path):
        ref, syn, _ = dirs
        manifest = tmp_path / "pairs.json"
        manifest.write_text(json.dumps({"pairs": [
            {"subject": "p", "modality": "T2", "ref": "ref/p_T2.nii.gz", "syn": "syn/p_T2.nii.gz"},
        ]}))
        settings = make_settings(metrics={"manifest": str(manifest)}, preprocess={"resize": False})
        result = MetricsRun(settings, ProcessManager(1)).run()
        assert {r["modality"] for r in result.rows} == {"T2"}

    def test_significance(self, make_settings, dirs):
        ref, syn, other = dirs
        settings = make_settings(metrics={"ref_dir": str(ref), "syn_dir": str(syn),
                                          "compare_dir": str(other)},
                                 preprocess={"resize": False})
        result = MetricsRun(settings, ProcessManager(2)).run()
        sig = result.extras["significance"]
        assert sig["psnr"]["n"] == 12
        assert sig["psnr"]["mean_diff"] > 0
        assert sig["psnr"]["p"] < 0.001

    def test_needs_inputs(self, make_settings):
        with pytest.raises(ConfigError):
            MetricsRun(make_settings(), ProcessManager(1)).run()


class TestRobustnessRun:
    def test_grid_from_input_dir(self, make_settings, volume_dir):
        settings = make_settings(corruption={"input_dir": str(volume_dir)})
        result = RobustnessRun(settings, ProcessManager(4)).run()
        assert len(result.rows) == 12 * 2 * 6
        grid = result.extras["grid"]
        assert list(grid) == [f.value for f in Family]
        for family, by_severity in grid.items():
            values = [by_severity[s.value]["psnr"] for s in Severity]
            assert values[0] > values[1] > values[2], family
        assert grid["GaussianNoise"]["Severe"]["params"] == {"sigma": 0.19}
        assert len(result.inputs) == 2

    def test_family_override(self, make_settings, volume_dir):
        settings = make_settings(corruption={"input_dir": str(volume_dir),
                                             "overrides": {"GaussianNoise": {"sigma": 0.05}}})
        grid = RobustnessRun(settings, ProcessManager(2)).run().extras["grid"]
        assert grid["GaussianNoise"]["Minor"]["params"] == {"sigma": 0.05}
        assert grid["GaussianNoise"]["Minor"]["psnr"] == pytest.approx(grid["GaussianNoise"]["Severe"]["psnr"])

    def test_predictions_and_sweep(self, make_settings, volume_dir, small, tmp_path):
        predictions = tmp_path / "pred"
        write_nifti(small.volumes[Modality.T1], predictions / "p_T1_GaussianNoise_Minor.nii.gz")
        settings = make_settings(corruption={"input_dir": str(volume_dir),
                                             "prediction_dir": str(predictions), "sweep": True})
        result = RobustnessRun(settings, ProcessManager(2)).run()
        predicted = [r for r in result.rows if r["source"] == "prediction"]
        assert len(predicted) == 6
        assert all(r["psnr"] == math.inf for r in predicted)
        assert "prediction/GaussianNoise/Minor" in result.aggregates
        sweep = _read_csv(settings.get_out_dir() / "robustness_sweep.csv")
        assert {row["family"] for row in sweep} == {f.value for f in Family}
        assert max(float(r["value"]) for r in sweep if r["family"] == "DownSampling") <= 8

    def test_prediction_slice_count_mismatch(self, make_settings, volume_dir, tmp_path):
        predictions = tmp_path / "pred"
        short = generate_phantom(PhantomSpec(dims=(32, 32, 4), seed=8), subject_id="p")
        write_nifti(short.volumes[Modality.T1], predictions / "p_T1_MotionArtifact_Severe.nii.gz")
        settings = make_settings(corruption={"input_dir": str(volume_dir),
                                             "prediction_dir": str(predictions)})
        with pytest.raises(DimError, match="4 slices, expected 6"):
            RobustnessRun(settings, ProcessManager(2)).run()

    @pytest.mark.slow
    def test_standard_phantom_default(self, make_settings):
        result = RobustnessRun(make_settings(), ProcessManager(4)).run()
        gaussian = result.extras["grid"]["GaussianNoise"]
        assert 13.5 <= gaussian["Severe"]["psnr"] <= 15.5
        assert result.inputs == {}


class TestDiceRun:
    def test_per_slice_dice(self, make_settings, tmp_path):
        gt = [Mask2D(np.pad(np.ones((4, 4), dtype=int), 2)), Mask2D(np.zeros((8, 8), dtype=int)),
              Mask2D(np.pad(np.ones((2, 2), dtype=int), 3))]
        pred = [Mask2D(np.pad(np.ones((4, 4), dtype=int), 2)), Mask2D(np.zeros((8, 8), dtype=int)),
                Mask2D(np.zeros((8, 8), dtype=int))]
        write_mask_stack(gt, tmp_path / "gt.nii.gz")
        write_mask_stack(pred, tmp_path / "pred.nii.gz")
        settings = make_settings(dice={"pred": str(tmp_path / "pred.nii.gz"),
                                       "gt": str(tmp_path / "gt.nii.gz")})
        result = DiceRun(settings, ProcessManager(1)).run()
        assert [r["dice"] for r in result.rows] == [1.0, None, 0.0]
        assert result.extras["dice"] == {"formatted": "0.5000 ± 0.7071", "undefined_slices": 1}
        assert result.rows[0]["gt_voxels"] == 16

    def test_needs_inputs(self, make_settings):
        with pytest.raises(ConfigError):
            DiceRun(make_settings(), ProcessManager(1)).run()


class TestLossRun:
    def test_all_losses_checked(self, make_settings):
        settings = make_settings(phantom=SMALL, losses={"instances": 2})
        result = LossRun(settings, ProcessManager(4)).run()
        assert [r["loss"] for r in result.rows] == [
            "vector", "featuremap", "infonce", "encoder_total", "pixel", "semantic",
            "decoder_total", "modality_ce"]
        assert all(r["passed"] for r in result.rows)
        infonce = next(r for r in result.rows if r["loss"] == "infonce")
        assert infonce["identity_value"] == pytest.approx(6 * math.log(5))
        modality_ce = next(r for r in result.rows if r["loss"] == "modality_ce")
        assert modality_ce["identity_value"] is None

    def test_failed_check_raises_after_writing(self, make_settings):
        settings = make_settings(phantom=SMALL, losses={"instances": 1, "fd_tolerance": 1e-30})
        with pytest.raises(InvariantViolation):
            LossRun(settings, ProcessManager(1)).run()
        assert (settings.get_out_dir() / "losses.json").exists()


class TestEmbedRun:
    def test_phantom_embeddings(self, make_settings):
        settings = make_settings(phantom=SMALL, embed={"k": 2})
        result = EmbedRun(settings, ProcessManager(1)).run()
        out = settings.get_out_dir()
        assert len(result.rows) == 4 * 3
        assert set(result.aggregates) == {"T1", "T1c", "T2"}
        assert result.extras["pca"]["k"] == 2
        similarity = result.extras["similarity"]
        assert similarity["intra_slice"]["mean"] > similarity["inter_slice"]["mean"]
        projections = _read_csv(out / "embed_projections.csv")
        assert list(projections[0]) == ["subject", "slice", "modality", "pc1", "pc2"]
        probabilities = _read_csv(out / "embed_probabilities.csv")
        assert list(probabilities[0])[-3:] == ["p_T1", "p_T1c", "p_T2"]
        assert json.loads((out / "embed_similarity.json").read_text()) == json.loads(dumps(similarity))

    def test_prototype_file(self, make_settings, tmp_path):
        rng = np.random.default_rng(3)
        prototypes = {m: rng.normal(size=6) for m in (Modality.T1, Modality.T2)}
        items = [prototypes[m] * (1 + 0.1 * i) for i in range(3) for m in prototypes]
        batch = EmbeddingBatch.from_arrays(np.array(items), [Modality.T1, Modality.T2] * 3,
                                           ["s"] * 6, [0, 0, 1, 1, 2, 2])
        write_embeddings(batch, tmp_path / "emb.json")
        write_embeddings(EmbeddingBatch.from_arrays(np.array(list(prototypes.values())),
                                                    list(prototypes), ["proto"] * 2, [0, 0]),
                         tmp_path / "proto.json")
        settings = make_settings(embed={"embeddings": str(tmp_path / "emb.json"),
                                        "prototypes": str(tmp_path / "proto.json"), "k": 2})
        result = EmbedRun(settings, ProcessManager(1)).run()
        assert result.extras["classification"]["accuracy"] == 1.0
        assert result.extras["classification"]["prototypes"] == "file"
        assert len(result.inputs) == 2
