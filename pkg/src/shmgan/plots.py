"""Figure analogues as CSV data plus a self-contained SVG."""
from __future__ import annotations

import csv
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import svg
from .classifier import PredictionRecord
from .metrics import box_stats, histogram_pdf
from .wdcgan import GanTrainHistory


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _pair(directory, stem: str) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory / f"{stem}.csv", directory / f"{stem}.svg"


def loss_curves(history: GanTrainHistory, directory, stem: str, title: str) -> list[Path]:
    """Critic and generator loss per epoch."""
    if not history.records:
        raise ValueError("history is empty")
    c, s = _pair(directory, stem)
    ep = history.column("epoch")
    cl, gl = history.column("critic_loss"), history.column("generator_loss")
    _write_csv(c, ["epoch", "critic_loss", "generator_loss"], zip(ep.astype(int), cl, gl))
    svg.write_svg(svg.line_chart({"critic": (ep, cl), "generator": (ep, gl)}, title, "epoch", "loss"), s)
    return [c, s]


def fid_curve(history: GanTrainHistory, directory, stem: str, title: str) -> list[Path]:
    """Median per-pair FID at the evaluated epochs."""
    ep, fid = history.column("epoch"), history.column("fid_median")
    keep = np.isfinite(fid)
    if not keep.any():
        raise ValueError("history holds no FID evaluations")
    c, s = _pair(directory, stem)
    _write_csv(c, ["epoch", "fid_median"], zip(ep[keep].astype(int), fid[keep]))
    svg.write_svg(svg.line_chart({"fid": (ep[keep], fid[keep])}, title, "epoch", "median FID"), s)
    return [c, s]


def classifier_loss(losses: Sequence[float], directory, stem: str, title: str) -> list[Path]:
    if len(losses) == 0:
        raise ValueError("no losses to plot")
    c, s = _pair(directory, stem)
    ep = np.arange(1, len(losses) + 1)
    _write_csv(c, ["epoch", "loss"], zip(ep, losses))
    svg.write_svg(svg.line_chart({"bce": (ep, np.asarray(losses, float))}, title, "epoch", "BCE loss"), s)
    return [c, s]


def score_pdfs(sets: dict[str, Sequence[float]], directory, stem: str, title: str,
               xlabel: str, bins: int = 30) -> list[Path]:
    """Density histograms of one or more score sets on a shared chart."""
    if not sets or any(len(v) == 0 for v in sets.values()):
        raise ValueError("score sets must be non-empty")
    c, s = _pair(directory, stem)
    hists = {k: histogram_pdf(v, bins) for k, v in sets.items()}
    rows = [(k, lo, hi, d) for k, h in hists.items()
            for lo, hi, d in zip(h.edges[:-1], h.edges[1:], h.density)]
    _write_csv(c, ["set", "bin_lo", "bin_hi", "density"], rows)
    svg.write_svg(svg.histogram_chart({k: (h.edges, h.density) for k, h in hists.items()},
                                      title, xlabel), s)
    return [c, s]


def box_plots(sets: dict[str, Sequence[float]], directory, stem: str, title: str, ylabel: str) -> list[Path]:
    if not sets or any(len(v) == 0 for v in sets.values()):
        raise ValueError("score sets must be non-empty")
    c, s = _pair(directory, stem)
    stats = {k: asdict(box_stats(v)) for k, v in sets.items()}
    cols = ["min", "whisker_low", "q1", "median", "q3", "whisker_high", "max"]
    _write_csv(c, ["set"] + cols + ["n_outliers"],
               [[k] + [st[x] for x in cols] + [len(st["outliers"])] for k, st in stats.items()])
    svg.write_svg(svg.box_chart(stats, title, ylabel), s)
    return [c, s]


def prediction_bars(records: Sequence[PredictionRecord], directory, stem: str, title: str) -> list[Path]:
    """Prediction score next to the ground truth for every test segment."""
    if not records:
        raise ValueError("no prediction records")
    c, s = _pair(directory, stem)
    _write_csv(c, ["record_id", "score", "truth", "label", "source"],
               [(r.record_id, r.score, r.truth, r.label, r.source) for r in records])
    groups = [str(r.record_id + 1) for r in records]
    svg.write_svg(svg.bar_chart(groups, {"prediction": [r.score for r in records],
                                         "ground truth": [float(r.truth) for r in records]},
                                title, "score"), s)
    return [c, s]


def summary_bars(rows: Sequence[dict], directory, stem: str = "summary_metrics") -> list[Path]:
    """CA and MAE per case and scenario."""
    if not rows:
        raise ValueError("no summary rows")
    c, s = _pair(directory, stem)
    _write_csv(c, ["case", "scenario", "classification_accuracy", "mean_absolute_error"],
               [(r["case"], r["scenario"], r["classification_accuracy"], r["mean_absolute_error"]) for r in rows])
    groups = [f"{r['case']} S{r['scenario']}" for r in rows]
    svg.write_svg(svg.bar_chart(groups, {"CA": [r["classification_accuracy"] for r in rows],
                                         "MAE": [r["mean_absolute_error"] for r in rows]},
                                "Classification accuracy and MAE", "value"), s)
    return [c, s]
