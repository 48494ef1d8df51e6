"""
Static SVG plots for synth-eval
Severity curves, PCA scatter and class-probability heatmap, drawn with
QPainter onto a QSvgGenerator. PySide6 is an optional extra; callers check
``plots_available()`` first.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

# Set environment defaults before importing Qt
os.environ.setdefault('QT_QPA_PLATFORM', 'offscreen')

try:
    from PySide6.QtCore import QPointF, QRectF, QSize, Qt
    from PySide6.QtGui import QBrush, QColor, QFont, QGuiApplication, QPainter, QPen
    from PySide6.QtSvg import QSvgGenerator
except ImportError:  # pragma: no cover - depends on the environment
    QGuiApplication = None

from .volume_model import Modality

logger = logging.getLogger(__name__)

WIDTH = 640
HEIGHT = 420
MARGIN = 56

MODALITY_COLORS = {
    Modality.T1: "#1f77b4",
    Modality.T1c: "#d62728",
    Modality.T2: "#2ca02c",
    Modality.FLAIR: "#9467bd",
    Modality.PD: "#ff7f0e",
    Modality.MRA: "#8c564b",
}
SERIES_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]

_app = None


def plots_available() -> bool:
    if QGuiApplication is None:
        logger.warning("PySide6 is not installed; skipping plots (pip install synth-eval[plots])")
        return False
    return True


def _ensure_app():
    global _app
    _app = QGuiApplication.instance() or QGuiApplication([])
    return _app


class _Canvas:
    """A QPainter on an SVG file with a linear data-to-pixel mapping."""

    def __init__(self, path: Path, title: str, width: int = WIDTH, height: int = HEIGHT):
        _ensure_app()
        path.parent.mkdir(parents=True, exist_ok=True)
        self.width = width
        self.height = height
        self.generator = QSvgGenerator()
        self.generator.setFileName(str(path))
        self.generator.setSize(QSize(width, height))
        self.generator.setViewBox(QRectF(0, 0, width, height))
        self.generator.setTitle(title)
        self.painter = QPainter()
        self.painter.begin(self.generator)
        self.painter.setRenderHint(QPainter.RenderHint.Antialiasing)
        self.painter.setFont(QFont("Sans", 9))
        self.painter.drawText(QRectF(0, 8, width, 20), Qt.AlignmentFlag.AlignHCenter, title)
        self.x_range = (0.0, 1.0)
        self.y_range = (0.0, 1.0)

    def set_ranges(self, x_range, y_range):
        def widen(lo, hi):
            if hi <= lo:
                return lo - 0.5, hi + 0.5
            pad = 0.05 * (hi - lo)
            return lo - pad, hi + pad
        self.x_range = widen(*x_range)
        self.y_range = widen(*y_range)

    def point(self, x: float, y: float):
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        px = MARGIN + (x - x0) / (x1 - x0) * (self.width - 2 * MARGIN)
        py = self.height - MARGIN - (y - y0) / (y1 - y0) * (self.height - 2 * MARGIN)
        return QPointF(px, py)

    def axes(self, x_label: str, y_label: str):
        p = self.painter
        p.setPen(QPen(QColor("#333333"), 1))
        p.drawLine(QPointF(MARGIN, self.height - MARGIN), QPointF(self.width - MARGIN, self.height - MARGIN))
        p.drawLine(QPointF(MARGIN, MARGIN), QPointF(MARGIN, self.height - MARGIN))
        p.drawText(QRectF(0, self.height - 28, self.width, 20), Qt.AlignmentFlag.AlignHCenter, x_label)
        p.drawText(QRectF(4, MARGIN - 24, 200, 20), Qt.AlignmentFlag.AlignLeft, y_label)
        for value, anchor in ((self.y_range[0], self.height - MARGIN), (self.y_range[1], MARGIN)):
            p.drawText(QRectF(0, anchor - 8, MARGIN - 4, 16), Qt.AlignmentFlag.AlignRight,
                       f"{value:.3g}")

    def legend(self, entries: Sequence[tuple]):
        p = self.painter
        for i, (label, color) in enumerate(entries):
            y = MARGIN + 16 * i
            p.fillRect(QRectF(self.width - MARGIN - 90, y, 10, 10), QColor(color))
            p.setPen(QPen(QColor("#333333"), 1))
            p.drawText(QPointF(self.width - MARGIN - 74, y + 9), label)

    def close(self):
        self.painter.end()


def render_severity_curves(grid: Dict[str, Dict[str, Dict]], path: Path, metric: str = "psnr"):
    """One line per corruption family: mean ``metric`` against severity."""
    families = list(grid)
    severities = list(next(iter(grid.values()))) if grid else []
    values = [v[metric] for f in families for v in grid[f].values() if v[metric] is not None]
    canvas = _Canvas(path, f"Corrupted-input {metric.upper()} by severity")
    canvas.set_ranges((0, max(len(severities) - 1, 1)),
                      (min(values, default=0.0), max(values, default=1.0)))
    canvas.axes(" / ".join(severities), metric.upper())
    p = canvas.painter
    for i, family in enumerate(families):
        color = QColor(SERIES_COLORS[i % len(SERIES_COLORS)])
        p.setPen(QPen(color, 2))
        points = [canvas.point(j, grid[family][s][metric])
                  for j, s in enumerate(severities) if grid[family][s][metric] is not None]
        for a, b in zip(points, points[1:]):
            p.drawLine(a, b)
        p.setBrush(QBrush(color))
        for pt in points:
            p.drawEllipse(pt, 3, 3)
    canvas.legend([(f, SERIES_COLORS[i % len(SERIES_COLORS)]) for i, f in enumerate(families)])
    canvas.close()
    logger.info("wrote %s", path)


def render_pca_scatter(projections: np.ndarray, modalities: Sequence[Modality], path: Path):
    """First two principal components, colored by modality."""
    projections = np.asarray(projections, dtype=np.float64)
    xs = projections[:, 0]
    ys = projections[:, 1] if projections.shape[1] > 1 else np.zeros_like(xs)
    canvas = _Canvas(path, "PCA projection")
    canvas.set_ranges((float(xs.min()), float(xs.max())), (float(ys.min()), float(ys.max())))
    canvas.axes("PC1", "PC2")
    p = canvas.painter
    p.setPen(Qt.PenStyle.NoPen)
    for x, y, m in zip(xs, ys, modalities):
        p.setBrush(QBrush(QColor(MODALITY_COLORS[m])))
        p.drawEllipse(canvas.point(x, y), 3, 3)
    present = [m for m in Modality if m in set(modalities)]
    canvas.legend([(m.value, MODALITY_COLORS[m]) for m in present])
    canvas.close()
    logger.info("wrote %s", path)


def render_probability_heatmap(probabilities: np.ndarray, classes: Sequence[Modality],
                               row_labels: Optional[List[str]], path: Path):
    """Items x classes probability matrix, darker for higher probability."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    n, k = probabilities.shape
    cell_h = max(2.0, min(16.0, (HEIGHT - 2 * MARGIN) / max(n, 1)))
    height = int(2 * MARGIN + cell_h * n)
    canvas = _Canvas(path, "Modality probability", height=height)
    cell_w = (WIDTH - 2 * MARGIN) / max(k, 1)
    p = canvas.painter
    for j, m in enumerate(classes):
        p.drawText(QRectF(MARGIN + j * cell_w, MARGIN - 20, cell_w, 16),
                   Qt.AlignmentFlag.AlignHCenter, m.value)
    for i in range(n):
        for j in range(k):
            shade = int(round(255 * (1.0 - probabilities[i, j])))
            p.fillRect(QRectF(MARGIN + j * cell_w, MARGIN + i * cell_h, cell_w, cell_h),
                       QColor(shade, shade, 255))
        if row_labels and cell_h >= 10:
            p.drawText(QRectF(0, MARGIN + i * cell_h, MARGIN - 4, cell_h),
                       Qt.AlignmentFlag.AlignRight, row_labels[i])
    canvas.close()
    logger.info("wrote %s", path)
