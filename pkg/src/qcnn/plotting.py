"""Dependency-free SVG charts for the metrics files.

CSV is the primary artifact; these figures are a convenience: accuracy and
cost curves, the smoothed entropy trend, and the entropy-vs-cost scatter
annotated with its Pearson coefficient over the post-warmup epochs.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .train import MetricsRecord

WIDTH, HEIGHT = 640, 420
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def trailing_average(values, window: int) -> np.ndarray:
    """Mean over the trailing ``window`` entries (shorter at the start)."""
    arr = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    out = np.empty_like(arr)
    for i in range(arr.size):
        out[i] = arr[max(0, i - window + 1):i + 1].mean()
    return out


def pearson(x, y) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.size < 2:
        return float("nan")
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float((a * a).sum() * (b * b).sum()))
    if denom == 0.0:
        return float("nan")
    return float((a * b).sum() / denom)


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN / 2}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{MARGIN}" y2="{MARGIN / 2}" '
        f'stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="18" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {HEIGHT / 2})">{ylabel}</text>',
    ]


def _axis_labels(xs: np.ndarray, ys: np.ndarray) -> list[str]:
    parts = []
    parts.append(f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
                 f'text-anchor="middle">{xs.min():.3g}</text>')
    parts.append(f'<text x="{WIDTH - MARGIN / 2}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
                 f'text-anchor="end">{xs.max():.3g}</text>')
    parts.append(f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" font-size="10" '
                 f'text-anchor="end">{ys.min():.3g}</text>')
    parts.append(f'<text x="{MARGIN - 6}" y="{MARGIN / 2 + 10}" font-size="10" '
                 f'text-anchor="end">{ys.max():.3g}</text>')
    return parts


def line_chart(series: dict[str, tuple[np.ndarray, np.ndarray]], title: str,
               xlabel: str, ylabel: str) -> str:
    parts = _frame(title, xlabel, ylabel)
    all_x = np.concatenate([np.asarray(x, dtype=np.float64) for x, _ in series.values()])
    all_y = np.concatenate([np.asarray(y, dtype=np.float64) for _, y in series.values()])
    parts.extend(_axis_labels(all_x, all_y))
    for i, (label, (x, y)) in enumerate(series.items()):
        xs = np.asarray(x, dtype=np.float64)
        ys = np.asarray(y, dtype=np.float64)
        px = _scale_against(xs, all_x, MARGIN, WIDTH - MARGIN / 2)
        py = _scale_against(ys, all_y, HEIGHT - MARGIN, MARGIN / 2)
        color = COLORS[i % len(COLORS)]
        if xs.size == 1:
            parts.append(f'<circle cx="{px[0]:.2f}" cy="{py[0]:.2f}" r="3" fill="{color}"/>')
        else:
            points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
            parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN / 2}" y="{MARGIN / 2 + 14 * (i + 1)}" '
                     f'text-anchor="end" font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _scale_against(values: np.ndarray, reference: np.ndarray,
                   lo_px: float, hi_px: float) -> np.ndarray:
    vmin, vmax = float(reference.min()), float(reference.max())
    if vmax == vmin:
        return np.full(values.shape, 0.5 * (lo_px + hi_px))
    return lo_px + (values - vmin) / (vmax - vmin) * (hi_px - lo_px)


def scatter_chart(x, y, title: str, xlabel: str, ylabel: str, annotation: str = "") -> str:
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    parts = _frame(title, xlabel, ylabel)
    parts.extend(_axis_labels(xs, ys))
    px = _scale_against(xs, xs, MARGIN, WIDTH - MARGIN / 2)
    py = _scale_against(ys, ys, HEIGHT - MARGIN, MARGIN / 2)
    for a, b in zip(px, py):
        parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{COLORS[0]}" '
                     f'fill-opacity="0.7"/>')
    if annotation:
        parts.append(f'<text x="{WIDTH - MARGIN / 2}" y="{MARGIN / 2 + 14}" text-anchor="end" '
                     f'font-size="12">{annotation}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_plots(records: list[MetricsRecord], out_dir: str | Path,
                window: int = 2, warmup_frac: float = 1.0 / 3.0) -> dict[str, Path]:
    """Emit the figure set; returns the written paths.  The correlation uses
    rows past ``warmup_frac`` of the last epoch, matching the reported gate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epochs = np.array([r.epoch for r in records], dtype=np.float64)
    written: dict[str, Path] = {}

    def emit(name: str, svg: str) -> None:
        path = out / f"{name}.svg"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(svg)
        tmp.replace(path)
        written[name] = path

    emit("accuracy", line_chart(
        {"train": (epochs, np.array([r.train_acc for r in records])),
         "test": (epochs, np.array([r.test_acc for r in records]))},
        "Accuracy", "epoch", "accuracy"))
    emit("cost", line_chart(
        {"train": (epochs, np.array([r.train_cost for r in records])),
         "test": (epochs, np.array([r.test_cost for r in records]))},
        "Cost", "epoch", "cost"))

    ee_rows = [(r.epoch, r.ee_avg, r.train_cost) for r in records if r.ee_avg is not None]
    if ee_rows:
        ee_epochs = np.array([e for e, _, _ in ee_rows], dtype=np.float64)
        ee_avg = np.array([v for _, v, _ in ee_rows])
        cost = np.array([c for _, _, c in ee_rows])
        emit("ee_trend", line_chart(
            {f"trailing mean (window {window})": (ee_epochs, trailing_average(ee_avg, window)),
             "per epoch": (ee_epochs, ee_avg)},
            "Average entanglement entropy", "epoch", "entropy (nats)"))
        cutoff = warmup_frac * float(epochs.max())
        keep = ee_epochs > cutoff
        if keep.sum() >= 2:
            r_value = pearson(ee_avg[keep], cost[keep])
            note = f"Pearson r = {r_value:.3f} (epochs > {cutoff:.0f})"
        else:
            note = "not enough post-warmup rows"
        emit("ee_vs_cost", scatter_chart(
            cost[keep] if keep.sum() >= 2 else cost,
            ee_avg[keep] if keep.sum() >= 2 else ee_avg,
            "Entropy vs training cost", "training cost", "entropy (nats)", note))
    return written
