"""ROC-AUC, McClish-standardized partial AUC, per-domain splits and the harmonic-mean score."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UndefinedMetric

DEFAULT_MAX_FPR = 0.1


@dataclass(frozen=True)
class ScoredClip:
    clip_id: str
    machine_type: str
    domain: str
    label: str
    score: float

    def __post_init__(self):
        if self.label not in ("normal", "anomalous"):
            raise ValueError(f"{self.clip_id}: label must be normal or anomalous, got {self.label!r}")
        if self.domain not in ("source", "target"):
            raise ValueError(f"{self.clip_id}: domain must be source or target, got {self.domain!r}")
        if not np.isfinite(self.score):
            raise ValueError(f"{self.clip_id}: non-finite score")


def _split(clips: Iterable[ScoredClip]) -> tuple[np.ndarray, np.ndarray]:
    normal, anomalous = [], []
    for c in clips:
        (anomalous if c.label == "anomalous" else normal).append(c.score)
    if not normal or not anomalous:
        raise UndefinedMetric(f"need both labels, got {len(normal)} normal and {len(anomalous)} anomalous")
    return np.asarray(normal, dtype=np.float64), np.asarray(anomalous, dtype=np.float64)


def roc_auc(normal: np.ndarray, anomalous: np.ndarray) -> float:
    """Mann-Whitney AUC: P(anomalous > normal) with ties counted as one half."""
    normal = np.sort(np.asarray(normal, dtype=np.float64))
    anomalous = np.asarray(anomalous, dtype=np.float64)
    below = np.searchsorted(normal, anomalous, side="left")
    not_above = np.searchsorted(normal, anomalous, side="right")
    twice_u = int(np.sum(below + not_above))  # 2*below + ties
    return twice_u / (2 * len(normal) * len(anomalous))


def roc_curve(normal: np.ndarray, anomalous: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """ROC vertices from (0, 0) to (1, 1), one per distinct score, descending threshold."""
    normal = np.asarray(normal, dtype=np.float64)
    anomalous = np.asarray(anomalous, dtype=np.float64)
    scores = np.concatenate([normal, anomalous])
    is_anom = np.concatenate([np.zeros(len(normal)), np.ones(len(anomalous))])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_anom = scores[order], is_anom[order]
    last_of_run = np.r_[np.diff(scores) != 0, True]
    tp = np.cumsum(is_anom)[last_of_run]
    fp = np.cumsum(1 - is_anom)[last_of_run]
    fpr = np.r_[0.0, fp / len(normal)]
    tpr = np.r_[0.0, tp / len(anomalous)]
    return fpr, tpr


def partial_auc(normal: np.ndarray, anomalous: np.ndarray, max_fpr: float = DEFAULT_MAX_FPR) -> float:
    """Area under the ROC for FPR in [0, max_fpr], McClish-standardized so chance is 0.5."""
    if not 0 < max_fpr <= 1:
        raise ValueError(f"max_fpr must lie in (0, 1], got {max_fpr}")
    fpr, tpr = roc_curve(normal, anomalous)
    stop = np.searchsorted(fpr, max_fpr, side="right")
    x, y = fpr[:stop], tpr[:stop]
    if x[-1] < max_fpr:
        y_end = np.interp(max_fpr, fpr[stop - 1:stop + 1], tpr[stop - 1:stop + 1])
        x, y = np.r_[x, max_fpr], np.r_[y, y_end]
    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))
    a_min, a_max = max_fpr**2 / 2, max_fpr
    return 0.5 + 0.5 * (area - a_min) / (a_max - a_min)


def auc(clips: Sequence[ScoredClip]) -> float:
    return roc_auc(*_split(clips))


def pauc(clips: Sequence[ScoredClip], max_fpr: float = DEFAULT_MAX_FPR) -> float:
    return partial_auc(*_split(clips), max_fpr=max_fpr)


def domain_auc(clips: Sequence[ScoredClip], domain: str) -> float:
    """AUC of domain-``domain`` normal clips against anomalous clips of both domains."""
    subset = [c for c in clips if c.label == "anomalous" or c.domain == domain]
    try:
        return auc(subset)
    except UndefinedMetric as exc:
        raise UndefinedMetric(f"domain {domain!r}: {exc}") from exc


def harmonic_mean(values: Iterable[float]) -> float:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("harmonic mean of no values")
    if min(values) <= 0:
        raise ValueError(f"harmonic mean needs positive values, got min {min(values)}")
    return len(values) / sum(1.0 / v for v in values)


@dataclass(frozen=True)
class ClassMetrics:
    machine_type: str
    auc_source: float
    auc_target: float
    pauc: float

    @property
    def values(self) -> tuple[float, float, float]:
        return (self.auc_source, self.auc_target, self.pauc)


def omega(rows: Iterable[ClassMetrics] | Iterable[float]) -> float:
    """Harmonic mean over every class's source AUC, target AUC and pAUC."""
    flat: list[float] = []
    for r in rows:
        flat.extend(r.values if isinstance(r, ClassMetrics) else (r,))
    return harmonic_mean(flat)


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassMetrics, ...]

    @property
    def omega(self) -> float:
        return omega(self.per_class)

    @property
    def machines(self) -> list[str]:
        return [r.machine_type for r in self.per_class]


def evaluate(clips: Sequence[ScoredClip], max_fpr: float = DEFAULT_MAX_FPR) -> EvalReport:
    """Per-machine source/target AUC and pooled pAUC, machines in first-appearance order."""
    grouped: dict[str, list[ScoredClip]] = {}
    for c in clips:
        grouped.setdefault(c.machine_type, []).append(c)
    rows = []
    for machine, group in grouped.items():
        try:
            rows.append(ClassMetrics(machine, domain_auc(group, "source"), domain_auc(group, "target"),
                                     pauc(group, max_fpr)))
        except UndefinedMetric as exc:
            raise UndefinedMetric(f"machine {machine!r}: {exc}") from exc
    return EvalReport(tuple(rows))


def read_scores(path: str | os.PathLike) -> list[ScoredClip]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return [ScoredClip(r["clip_id"], r["machine_type"], r["domain"], r["label"], float(r["score"]))
                for r in csv.DictReader(fh)]


METRIC_ROWS = (("AUC(Target)", "auc_target"), ("AUC(Source)", "auc_source"), ("pAUC", "pauc"))


def _pct(v: float) -> str:
    return f"{100 * v:.2f}%"


def render_report(reports: Mapping[str, EvalReport] | EvalReport, fmt: str = "markdown") -> str:
    """Table with one row group per system, one column per machine and a final Ω column."""
    if isinstance(reports, EvalReport):
        reports = {"system": reports}
    machines: list[str] = []
    for rep in reports.values():
        for m in rep.machines:
            if m not in machines:
                machines.append(m)
    table: list[list[str]] = []
    for system, rep in reports.items():
        by_machine = {r.machine_type: r for r in rep.per_class}
        om = _pct(rep.omega)
        for i, (label, attr) in enumerate(METRIC_ROWS):
            cells = [_pct(getattr(by_machine[m], attr)) if m in by_machine else "" for m in machines]
            table.append([system if i == 0 else "", label, *cells, om if i == 0 else ""])
    header = ["System", "Metric", *machines, "Ω (h-mean)"]
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in table]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["system", "metric", *machines, "omega"])
        for system, rep in reports.items():
            by_machine = {r.machine_type: r for r in rep.per_class}
            for label, attr in METRIC_ROWS:
                writer.writerow([system, label,
                                 *[_pct(getattr(by_machine[m], attr)) if m in by_machine else "" for m in machines],
                                 _pct(rep.omega)])
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}; use 'markdown' or 'csv'")
