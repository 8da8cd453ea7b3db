"""Evaluation protocols: anchor-frame match curves and reconstruction summary tables."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .features.matching import match_arrays
from .sfm.reconstruction import Reconstruction

DEFAULT_WINDOW = 10
METRIC_COLUMNS = ("label", "input_images", "reconstructed_images", "reconstructed_pct", "points3d",
                  "avg_observations")
CURVE_COLUMNS = ("offset", "mean_matches", "samples")


@dataclass(frozen=True)
class MatchCurve:
    window: int
    mean_matches: tuple[float, ...]
    samples: int
    totals: tuple[int, ...] = ()

    def __post_init__(self):
        if self.window < 1 or self.samples < 1:
            raise ValueError("window and samples must be at least 1")
        if len(self.mean_matches) != self.window:
            raise ValueError("one mean per offset required")

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(range(1, self.window + 1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# window={self.window} samples={self.samples}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for off, m in zip(self.offsets, self.mean_matches):
            w.writerow([off, repr(float(m)), self.samples])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MatchCurve":
        lines = text.splitlines()
        header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
        rows = list(csv.DictReader(lines[1:]))
        return cls(int(header["window"]), tuple(float(r["mean_matches"]) for r in rows), int(header["samples"]))


def group_starts(n_frames: int, window: int, stride: int | None = None, samples: int | None = None) -> list[int]:
    """Anchor indices: every ``stride`` frames (default ``window + 1``), optionally the first ``samples``."""
    if window < 1:
        raise ValueError("window must be at least 1")
    stride = window + 1 if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if n_frames < window + 1:
        raise ValueError(f"need at least {window + 1} frames for window {window}, got {n_frames}")
    starts = list(range(0, n_frames - window, stride))
    if samples is not None:
        if samples < 1:
            raise ValueError("samples must be at least 1")
        if samples > len(starts):
            raise ValueError(f"only {len(starts)} groups available, {samples} requested")
        starts = starts[:samples]
    return starts


def anchor_match_curve(frames: Sequence, window: int = DEFAULT_WINDOW, stride: int | None = None,
                       ratio: float = 0.8, samples: int | None = None,
                       matcher: Callable | None = None) -> MatchCurve:
    """Mean number of matches between each anchor frame and its ``window`` successors.

    ``frames`` are descriptor sets (FeatureSet or arrays).  Groups start every
    ``stride`` frames; the per-offset sums are accumulated over groups in
    order and divided by the group count.
    """
    starts = group_starts(len(frames), window, stride, samples)
    match = matcher or (lambda a, b: len(match_arrays(a, b, ratio)[0]))
    totals = np.zeros(window, dtype=np.int64)
    for s in starts:
        for k in range(1, window + 1):
            totals[k - 1] += int(match(frames[s], frames[s + k]))
    n = len(starts)
    return MatchCurve(window, tuple(float(t) / n for t in totals), n, tuple(int(t) for t in totals))


def format_percent(numerator: int, denominator: int) -> str:
    """Percentage rounded half-up to two decimals, e.g. ``99.77%``.

    Rounding is done on exact rationals: the hundredths are
    ``floor((10000 * n + d // 2) / d)`` style integer arithmetic, so no
    binary or decimal precision limit can move a half-way case.
    """
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    if numerator < 0:
        raise ValueError("numerator must be non-negative")
    hundredths = (Fraction(10000 * numerator, denominator) + Fraction(1, 2)).__floor__()
    return f"{hundredths // 100}.{hundredths % 100:02d}%"


@dataclass(frozen=True)
class MetricsRow:
    label: str
    input_images: int
    reconstructed_images: int
    points3d: int
    avg_observations: float
    reconstructed_pct: str = field(default="")

    def __post_init__(self):
        if self.input_images <= 0:
            raise ValueError("input_images must be positive")
        if not 0 <= self.reconstructed_images <= self.input_images:
            raise ValueError("reconstructed_images must be between 0 and input_images")
        pct = format_percent(self.reconstructed_images, self.input_images)
        if self.reconstructed_pct and self.reconstructed_pct != pct:
            raise ValueError(f"percentage {self.reconstructed_pct} inconsistent with counts ({pct})")
        object.__setattr__(self, "reconstructed_pct", pct)

    @property
    def pct_value(self) -> Decimal:
        return Decimal(self.reconstructed_pct.rstrip("%"))

    def as_csv_row(self) -> list[str]:
        return [self.label, str(self.input_images), str(self.reconstructed_images), self.reconstructed_pct,
                str(self.points3d), repr(float(self.avg_observations))]


def table_metrics(recon: Reconstruction, input_count: int, label: str) -> MetricsRow:
    """Summary row: registered frames, their share of the input, points, observations per frame."""
    if input_count <= 0:
        raise ValueError("input_count must be positive")
    n_rec = len(recon.poses)
    if n_rec > input_count:
        raise ValueError(f"{n_rec} reconstructed images exceed {input_count} inputs")
    avg = recon.n_observations / n_rec if n_rec else 0.0
    return MetricsRow(label, int(input_count), n_rec, len(recon.points), float(avg))


def write_metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv_row())
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[MetricsRow]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(MetricsRow(r["label"], int(r["input_images"]), int(r["reconstructed_images"]),
                               int(r["points3d"]), float(r["avg_observations"]), r["reconstructed_pct"]))
    return rows


COMPARED = ("input_images", "reconstructed_images", "reconstructed_pct", "points3d", "avg_observations")


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[MetricsRow, ...]
    winners: dict  # metric -> index of the best row, or None when tied
    ties: dict  # metric -> True when the best value is shared

    def to_csv(self) -> str:
        """Metrics as columns per row, followed by one winner flag column per metric."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(METRIC_COLUMNS) + [f"best_{m}" for m in COMPARED])
        for i, r in enumerate(self.rows):
            flags = []
            for m in COMPARED:
                if self.ties[m]:
                    flags.append("tie")
                else:
                    flags.append("1" if self.winners[m] == i else "0")
            w.writerow(r.as_csv_row() + flags)
        return buf.getvalue()


def _metric_value(row: MetricsRow, metric: str):
    return row.pct_value if metric == "reconstructed_pct" else getattr(row, metric)


def compare_rows(rows: Sequence[MetricsRow]) -> ComparisonReport:
    """Flag, per metric, the row with the highest value; ties are reported as such."""
    rows = tuple(rows)
    if len(rows) < 2:
        raise ValueError("comparison needs at least two rows")
    winners, ties = {}, {}
    for m in COMPARED:
        vals = [_metric_value(r, m) for r in rows]
        best = max(vals)
        idx = [i for i, v in enumerate(vals) if v == best]
        ties[m] = len(idx) > 1
        winners[m] = None if ties[m] else idx[0]
    return ComparisonReport(rows, winners, ties)


def curve_svg(curve: MatchCurve, width: int = 480, height: int = 320, title: str = "anchor matches") -> str:
    """Standalone SVG line chart of mean matches against frame offset."""
    ml, mr, mt, mb = 56, 16, 28, 40
    pw, ph = width - ml - mr, height - mt - mb
    ys = list(curve.mean_matches)
    ymax = max(max(ys), 1.0)
    xs = curve.offsets

    def px(x):
        return ml + (pw * (x - 1) / (curve.window - 1) if curve.window > 1 else pw / 2)

    def py(y):
        return mt + ph * (1.0 - y / ymax)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">'
           f'{title} (samples={curve.samples})</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for x in xs:
        out.append(f'<text x="{px(x):.2f}" y="{mt + ph + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">t+{x}</text>')
    for k in range(5):
        v = ymax * k / 4
        out.append(f'<text x="{ml - 6}" y="{py(v) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{v:.0f}</text>')
    out.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{pts}"/>')
    for x, y in zip(xs, ys):
        out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#1f5fa8"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_eval_outputs(out_dir: "str | os.PathLike", rows: Sequence[MetricsRow],
                       curve: MatchCurve | None = None) -> list[str]:
    """Write metrics.csv and, when given a curve, curve.csv and curve.svg; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", newline="") as fh:
        fh.write(write_metrics_csv(rows))
    written.append(path)
    if curve is not None:
        for name, text in (("curve.csv", curve.to_csv()), ("curve.svg", curve_svg(curve))):
            p = os.path.join(out_dir, name)
            with open(p, "w", newline="") as fh:
                fh.write(text)
            written.append(p)
    return written
