"""Cross-validation report files: history.csv, summary.json, curves.svg, boxplot.svg."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .evaluation import CvSummary, FoldResult, summarize_performance
from .training import EpochRecord

HISTORY_COLUMNS = ("fold", "epoch", "train_loss", "train_acc", "val_loss", "val_acc")
TRAIN_COLOUR = "#1f77b4"
VAL_COLOUR = "#ff7f0e"


def fmt(value: float) -> str:
    return f"{value:.6g}"


def round6(value: float) -> float:
    return float(fmt(value))


def history_rows(results: Sequence[FoldResult]) -> list[list[str]]:
    rows = []
    for r in results:
        for epoch, rec in enumerate(r.history.records, start=1):
            rows.append([str(r.fold_index), str(epoch), fmt(rec.train_loss), fmt(rec.train_accuracy),
                         fmt(rec.val_loss), fmt(rec.val_accuracy)])
    return rows


def write_history_csv(results: Sequence[FoldResult], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        w.writerows(history_rows(results))


def read_history_csv(path: str | os.PathLike) -> dict[int, list[EpochRecord]]:
    """Parse history.csv back into per-fold epoch records (ordered by epoch)."""
    out: dict[int, list[EpochRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            fold = int(row["fold"])
            records = out.setdefault(fold, [])
            if int(row["epoch"]) != len(records) + 1:
                raise ValueError(f"{path}: epochs out of order for fold {fold}")
            records.append(EpochRecord(float(row["train_loss"]), float(row["train_acc"]),
                                       float(row["val_loss"]), float(row["val_acc"])))
    return out


def summary_dict(summary: CvSummary) -> dict:
    d = summary.to_dict()
    return {key: [round6(v) for v in val] if isinstance(val, list) else (val if key == "n" else round6(val))
            for key, val in d.items()}


def write_summary_json(summary: CvSummary, path: str | os.PathLike, extra: dict | None = None) -> None:
    payload = summary_dict(summary)
    if extra:
        payload.update(extra)
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- SVG -----------------------------------------------------------------------

class _Panel:
    """Maps data coordinates into a rectangle of the SVG canvas."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / ((hi - lo) or 1) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / ((hi - lo) or 1) * self.h


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def _axes(p: _Panel, title: str, xlabel: str, yticks: Sequence[float], xticks: Sequence[float]) -> list[str]:
    parts = [
        f'<rect x="{p.x0:.1f}" y="{p.y0:.1f}" width="{p.w:.1f}" height="{p.h:.1f}" fill="none" stroke="#333"/>',
        f'<text x="{p.x0 + p.w / 2:.1f}" y="{p.y0 - 10:.1f}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{p.x0 + p.w / 2:.1f}" y="{p.y0 + p.h + 36:.1f}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
    ]
    for t in yticks:
        y = p.py(t)
        parts.append(f'<line x1="{p.x0 - 4:.1f}" y1="{y:.1f}" x2="{p.x0:.1f}" y2="{y:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{p.x0 - 6:.1f}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{fmt(round(t, 4))}</text>')
    for t in xticks:
        x = p.px(t)
        parts.append(f'<line x1="{x:.1f}" y1="{p.y0 + p.h:.1f}" x2="{x:.1f}" y2="{p.y0 + p.h + 4:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{x:.1f}" y="{p.y0 + p.h + 16:.1f}" text-anchor="middle" font-size="10">{fmt(t)}</text>')
    return parts


def _polyline(p: _Panel, xs, ys, colour: str) -> str:
    pts = " ".join(f"{p.px(x):.2f},{p.py(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5" stroke-opacity="0.85"/>'


def _svg(width: int, height: int, body: list[str]) -> str:
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        *body,
        "</svg>",
        "",
    ])


def curves_svg(results: Sequence[FoldResult]) -> str:
    """Loss and accuracy learning curves; train in blue, validation in orange, one line pair per fold."""
    epochs = max(len(r.history) for r in results)
    xlim = (1, max(epochs, 2))
    max_loss = max(max(r.history.column("train_loss") + r.history.column("val_loss")) for r in results)
    loss_panel = _Panel(70, 50, 360, 280, xlim, (0.0, max(max_loss, 1e-9) * 1.05))
    acc_panel = _Panel(530, 50, 360, 280, xlim, (0.0, 1.0))
    xticks = sorted({int(round(t)) for t in _ticks(1, max(epochs, 2), min(epochs, 5) or 1)})
    body = _axes(loss_panel, "Cross-entropy loss", "epoch", _ticks(*loss_panel.ylim), xticks)
    body += _axes(acc_panel, "Classification accuracy", "epoch", _ticks(0.0, 1.0), xticks)
    for r in results:
        xs = list(range(1, len(r.history) + 1))
        body.append(_polyline(loss_panel, xs, r.history.column("train_loss"), TRAIN_COLOUR))
        body.append(_polyline(loss_panel, xs, r.history.column("val_loss"), VAL_COLOUR))
        body.append(_polyline(acc_panel, xs, r.history.column("train_accuracy"), TRAIN_COLOUR))
        body.append(_polyline(acc_panel, xs, r.history.column("val_accuracy"), VAL_COLOUR))
    legend_y = 395
    for i, (label, colour) in enumerate((("train", TRAIN_COLOUR), ("validation", VAL_COLOUR))):
        x = 380 + i * 120
        body.append(f'<line x1="{x}" y1="{legend_y}" x2="{x + 24}" y2="{legend_y}" stroke="{colour}" stroke-width="3"/>')
        body.append(f'<text x="{x + 30}" y="{legend_y + 4}" font-size="12">{label}</text>')
    return _svg(960, 420, body)


def boxplot_svg(summary: CvSummary) -> str:
    lo, hi = summary.min, summary.max
    pad = max((hi - lo) * 0.15, 0.005)
    p = _Panel(80, 40, 200, 320, (0.0, 1.0), (max(0.0, lo - pad), min(1.0, hi + pad)))
    if p.ylim[1] <= p.ylim[0]:
        p.ylim = (p.ylim[0] - 0.01, p.ylim[1] + 0.01)
    body = _axes(p, f"Fold accuracy (n={summary.n})", "", _ticks(*p.ylim), [])
    cx, half = p.px(0.5), 40
    body += [
        f'<line x1="{cx:.1f}" y1="{p.py(summary.min):.1f}" x2="{cx:.1f}" y2="{p.py(summary.q1):.1f}" stroke="#333"/>',
        f'<line x1="{cx:.1f}" y1="{p.py(summary.q3):.1f}" x2="{cx:.1f}" y2="{p.py(summary.max):.1f}" stroke="#333"/>',
        f'<line x1="{cx - half / 2:.1f}" y1="{p.py(summary.min):.1f}" x2="{cx + half / 2:.1f}" y2="{p.py(summary.min):.1f}" stroke="#333"/>',
        f'<line x1="{cx - half / 2:.1f}" y1="{p.py(summary.max):.1f}" x2="{cx + half / 2:.1f}" y2="{p.py(summary.max):.1f}" stroke="#333"/>',
        f'<rect x="{cx - half:.1f}" y="{p.py(summary.q3):.1f}" width="{2 * half:.1f}" '
        f'height="{max(p.py(summary.q1) - p.py(summary.q3), 0.5):.1f}" fill="#cfe2f3" stroke="#333"/>',
        f'<line x1="{cx - half:.1f}" y1="{p.py(summary.median):.1f}" x2="{cx + half:.1f}" y2="{p.py(summary.median):.1f}" '
        f'stroke="{VAL_COLOUR}" stroke-width="2"/>',
        f'<text x="{cx:.1f}" y="{p.py(summary.mean) + 4:.1f}" text-anchor="middle" font-size="12" fill="green">&#9651;</text>',
    ]
    for a in summary.accuracies:
        body.append(f'<circle cx="{cx + half + 14:.1f}" cy="{p.py(a):.1f}" r="2.5" fill="#555"/>')
    return _svg(320, 400, body)


def emit_reports(results: Sequence[FoldResult], out_dir: str | os.PathLike,
                 extra: dict | None = None) -> dict[str, Path]:
    """Write the four report files into ``out_dir`` (created if missing)."""
    if not results:
        raise ValueError("no fold results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_performance([r.accuracy for r in results])
    paths = {name: out / name for name in ("history.csv", "summary.json", "curves.svg", "boxplot.svg")}
    write_history_csv(results, paths["history.csv"])
    write_summary_json(summary, paths["summary.json"], extra)
    paths["curves.svg"].write_text(curves_svg(results), newline="\n")
    paths["boxplot.svg"].write_text(boxplot_svg(summary), newline="\n")
    return paths
