import numpy as np
import pytest

pytest.importorskip("PySide6.QtSvg")

from synth_eval.plots import (  # noqa: E402
    plots_available, render_pca_scatter, render_probability_heatmap, render_severity_curves,
)
from synth_eval.volume_model import Modality  # noqa: E402


def _is_svg(path):
    text = path.read_text()
    return "<svg" in text and text.rstrip().endswith("</svg>")


def test_available():
    assert plots_available()


def test_severity_curves(tmp_path):
    grid = {
        "GaussianNoise": {"Minor": {"psnr": 29.1}, "Moderate": {"psnr": 20.0}, "Severe": {"psnr": 14.5}},
        "DownSampling": {"Minor": {"psnr": 31.0}, "Moderate": {"psnr": None}, "Severe": {"psnr": 18.2}},
    }
    path = tmp_path / "curves.svg"
    render_severity_curves(grid, path)
    assert _is_svg(path)


def test_pca_scatter(tmp_path):
    projections = np.array([[0.0, 1.0], [1.0, 0.5], [-1.0, -0.5]])
    path = tmp_path / "plots" / "pca.svg"
    render_pca_scatter(projections, [Modality.T1, Modality.T1c, Modality.T2], path)
    assert _is_svg(path)


def test_probability_heatmap(tmp_path):
    probabilities = np.array([[0.9, 0.05, 0.05], [0.2, 0.7, 0.1]])
    path = tmp_path / "heat.svg"
    render_probability_heatmap(probabilities, [Modality.T1, Modality.T1c, Modality.T2],
                               ["T1", "T1c"], path)
    assert _is_svg(path)


def test_runs_write_plots(make_settings):
    from synth_eval.process_manager import ProcessManager
    from synth_eval.runs import EmbedRun

    settings = make_settings(phantom={"dims": [16, 16, 4]}, **{"global": {"plots": True}})
    result = EmbedRun(settings, ProcessManager(1)).run()
    names = {p.name for p in result.files}
    assert {"embed_pca.svg", "embed_probabilities.svg"} <= names
