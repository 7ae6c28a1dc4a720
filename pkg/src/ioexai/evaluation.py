"""Scores and cross-model comparison: R², MAPE, improvement rate, correlations."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import describe

THEORETICAL = "theoretical"


class ScoreError(ValueError):
    pass


def _pair(pred, truth, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ScoreError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_len:
        raise ScoreError(f"need at least {min_len} values, got {p.size}")
    return p, t


def r_squared(pred, truth) -> float:
    p, t = _pair(pred, truth, 2)
    centred = t - t.mean()
    ss_tot = math.fsum(centred * centred)
    if ss_tot == 0.0:
        raise ScoreError("R² is undefined for a constant truth vector")
    residual = t - p
    return 1.0 - math.fsum(residual * residual) / ss_tot


@dataclass(frozen=True)
class MapeResult:
    percent: float
    included: int
    excluded: int

    def __float__(self) -> float:
        return self.percent


def mape(pred, truth) -> MapeResult:
    """Mean absolute percentage error over rows with non-zero truth."""
    p, t = _pair(pred, truth)
    keep = t != 0
    if not keep.any():
        raise ScoreError("every truth value is zero; MAPE is undefined")
    ratios = np.abs(t[keep] - p[keep]) / np.abs(t[keep])
    return MapeResult(100.0 * math.fsum(ratios) / int(keep.sum()), int(keep.sum()), int((~keep).sum()))


def improvement_rate(actual: float, reference: float) -> float:
    """Relative change against a reference value, in percent."""
    if not reference > 0:
        raise ScoreError(f"reference must be positive, got {reference!r}")
    return (actual - reference) / reference * 100.0


def cqi_distribution(values) -> dict[str, float]:
    """Nearest-rank min/p25/p50/p75/max and mean of a CQI vector."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ScoreError("empty CQI vector")
    return describe(values)


def pearson_correlation(a, b) -> float:
    x, y = _pair(a, b, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise ScoreError("correlation is undefined for a constant vector")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def correlation_matrix(columns: dict[str, np.ndarray]) -> tuple[tuple[str, ...], np.ndarray]:
    """Pairwise Pearson correlations; pairs involving a constant column are NaN."""
    names = tuple(columns)
    out = np.full((len(names), len(names)), np.nan)
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            try:
                out[i, j] = pearson_correlation(columns[a], columns[b])
            except ScoreError:
                pass
    return names, out


# --------------------------------------------------------------------------- comparison report


@dataclass(frozen=True)
class ModelScore:
    run: str
    kind: str
    target: str
    r_squared: float
    mape_pct: float
    mape_excluded: int
    mean_prediction: float
    mean_truth: float
    cqi_stats: dict | None = None


@dataclass(frozen=True)
class ComparisonReport:
    reference: str
    scores: tuple[ModelScore, ...]
    improvements: dict[tuple[str, str], float]
    importance: dict[tuple[str, str], list[tuple[str, float]]]
    correlation_names: tuple[str, ...]
    correlation: np.ndarray
    truth_cqi_stats: dict | None = None
    notes: list[str] = field(default_factory=list)

    def score(self, run: str, target: str) -> ModelScore:
        for s in self.scores:
            if s.run == run and s.target == target:
                return s
        raise KeyError((run, target))

    def table_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ("run", "kind", "target", "r_squared", "mape_pct", "mape_excluded", "mean_prediction", "mean_truth", "improvement_pct")
        )
        for s in self.scores:
            writer.writerow(
                (
                    s.run, s.kind, s.target, repr(s.r_squared), repr(s.mape_pct), s.mape_excluded,
                    repr(s.mean_prediction), repr(s.mean_truth), repr(self.improvements[(s.run, s.target)]),
                )
            )
        return buf.getvalue()

    def importance_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("run", "target", "rank", "feature", "mean_abs_phi"))
        for (run, target), ranked in sorted(self.importance.items()):
            for rank, (name, value) in enumerate(ranked, start=1):
                writer.writerow((run, target, rank, name, repr(value)))
        return buf.getvalue()

    def correlation_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("metric",) + self.correlation_names)
        for name, row in zip(self.correlation_names, self.correlation):
            writer.writerow((name,) + tuple("" if np.isnan(v) else repr(float(v)) for v in row))
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [f"Comparison against reference: {self.reference}", ""]
        lines.append(f"{'run':<20} {'target':<9} {'R2':>8} {'MAPE%':>9} {'mean':>11} {'truth':>11} {'improv%':>9}")
        for s in self.scores:
            lines.append(
                f"{s.run:<20} {s.target:<9} {s.r_squared:>8.4f} {s.mape_pct:>9.3f} "
                f"{s.mean_prediction:>11.4f} {s.mean_truth:>11.4f} {self.improvements[(s.run, s.target)]:>9.2f}"
            )
        if "sinr_db" in self.correlation_names and "rsrq_db" in self.correlation_names:
            i = self.correlation_names.index("sinr_db")
            j = self.correlation_names.index("rsrq_db")
            lines += ["", f"Pearson correlation SINR vs RSRQ: {self.correlation[i, j]:.4f}"]
        for (run, target), ranked in sorted(self.importance.items()):
            top = ", ".join(f"{name} {value:.4g}" for name, value in ranked[:4])
            lines.append(f"top features {run}/{target}: {top}")
        lines += self.notes
        return "\n".join(lines) + "\n"


METRIC_COLUMNS = ("speed_kmh", "rssi_dbm", "rsrp_dbm", "rsrq_db", "sinr_db", "cqi", "dl_mbps", "ul_mbps")


def build_comparison_report(runs: Sequence, reference: str = THEORETICAL) -> ComparisonReport:
    """Score every (run, target) and compare mean predictions against ``reference``.

    ``runs`` are pipeline outputs (see :class:`ioexai.pipeline.PipelineOutput`),
    each carrying ``name``, ``kind``, test-row truth columns and predictions.
    ``reference`` names one of the runs, or ``"theoretical"`` for the
    ground-truth means of the test partition.
    """
    if not runs:
        raise ScoreError("no runs to compare")
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ScoreError(f"duplicate run names: {names}")
    if reference != THEORETICAL and reference not in names:
        raise ScoreError(f"reference run {reference!r} not among {names}")
    ordered = sorted(runs, key=lambda r: (r.kind, r.name))
    ref_run = next((r for r in runs if r.name == reference), None)

    scores, improvements, importance, notes = [], {}, {}, []
    for run in ordered:
        for target in sorted(run.predictions):
            pred = run.predictions[target]
            truth = run.truth[target]
            m = mape(pred, truth)
            cqi_stats = cqi_distribution(pred) if target == "cqi" else None
            scores.append(
                ModelScore(
                    run.name, run.kind, target, r_squared(pred, truth), m.percent, m.excluded,
                    float(np.mean(pred)), float(np.mean(truth)), cqi_stats,
                )
            )
            if ref_run is None:
                ref_value = float(np.mean(truth))
            else:
                if target not in ref_run.predictions:
                    raise ScoreError(f"reference run {reference!r} has no {target} predictions")
                ref_value = float(np.mean(ref_run.predictions[target]))
            if ref_value > 0:
                improvements[(run.name, target)] = improvement_rate(float(np.mean(pred)), ref_value)
            else:
                improvements[(run.name, target)] = math.nan
                notes.append(f"no improvement rate for {run.name}/{target}: reference mean {ref_value!r} is not positive")
            if target in run.coefficients:
                importance[(run.name, target)] = run.coefficients[target].ranked()

    source = ref_run if ref_run is not None else ordered[0]
    columns = {name: source.truth_columns[name] for name in METRIC_COLUMNS if name in source.truth_columns}
    corr_names, corr = correlation_matrix(columns)
    truth_cqi = cqi_distribution(source.truth["cqi"]) if "cqi" in source.truth else None
    return ComparisonReport(reference, tuple(scores), improvements, importance, corr_names, corr, truth_cqi, notes)


def write_report(report: ComparisonReport, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "scores.csv": report.table_csv(),
        "importance.csv": report.importance_csv(),
        "correlation.csv": report.correlation_csv(),
        "summary.txt": report.summary_text(),
    }
    written = []
    for name, text in files.items():
        path = directory / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
