"""Weighted classification metrics, k-fold runs, ablation sweeps and comparison tables."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import Backend
from .decider import PoolIndex, Prediction, predict
from .errors import MacrError, ValidationError
from .treemodel import Dataset, RiskLabelSet, kfold_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold labels, columns are predictions."""

    counts: np.ndarray
    label_set: RiskLabelSet = field(default_factory=RiskLabelSet)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        L = len(self.label_set)
        if counts.shape != (L, L):
            raise ValidationError("counts", f"expected a {L}x{L} matrix, got {counts.shape}")
        if np.any(counts < 0):
            raise ValidationError("counts", "negative count")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, gold: Sequence[int], pred: Sequence[int], label_set: RiskLabelSet) -> "ConfusionMatrix":
        L = len(label_set)
        counts = np.zeros((L, L), dtype=np.int64)
        for g, p in zip(gold, pred):
            counts[g, p] += 1
        return cls(counts, label_set)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def weighted_metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """Support-weighted precision, recall and F1.

    A class that is never predicted has precision 0; a class with
    precision + recall = 0 has F1 0. Weighted F1 averages per-class F1
    rather than combining the weighted precision and recall.
    """
    C = cm.counts.astype(np.float64)
    total = C.sum()
    if total == 0:
        raise ValidationError("counts", "empty confusion matrix")
    tp = np.diag(C)
    support = C.sum(axis=1)
    predicted = C.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    w = support / total
    return float(w @ precision), float(w @ recall), float(w @ f1)


@dataclass
class MetricReport:
    name: str
    per_fold: list[tuple[float, float, float]]
    k: int
    fold_signature: str
    complete: bool = True
    errors: dict = field(default_factory=dict)

    def _column(self, j: int) -> np.ndarray:
        return np.array([row[j] for row in self.per_fold], dtype=np.float64)

    def mean(self) -> tuple[float, float, float]:
        return tuple(float(self._column(j).mean()) if self.per_fold else float("nan") for j in range(3))

    def std(self) -> tuple[float, float, float]:
        # population std over folds
        return tuple(float(self._column(j).std()) if self.per_fold else float("nan") for j in range(3))

    @property
    def weighted_precision(self) -> float:
        return self.mean()[0]

    @property
    def weighted_recall(self) -> float:
        return self.mean()[1]

    @property
    def weighted_f1(self) -> float:
        return self.mean()[2]


@dataclass
class FoldResult:
    index: int
    test_ids: list[str]
    pool_ids: list[str]
    predictions: list[Prediction]
    confusion: ConfusionMatrix | None
    metrics: tuple[float, float, float] | None
    error: str | None = None


@dataclass
class ExperimentResult:
    report: MetricReport
    folds: list[FoldResult]


def _signature(dataset: Dataset, folds) -> str:
    h = hashlib.sha256(dataset.name.encode())
    for _, test in folds:
        h.update(("|".join(t.id for t in test.trees) + "\n").encode())
    return h.hexdigest()[:16]


def run_experiment(dataset: Dataset, cfg, backend: Backend, k: int = 5, seed: int | None = None, name: str | None = None) -> ExperimentResult:
    """k-fold evaluation; each fold's training split is the demonstration pool."""
    fold_seed = cfg.fold_seed_value() if seed is None else seed
    folds = kfold_split(dataset, k, fold_seed)
    results: list[FoldResult] = []
    per_fold, errors = [], {}
    for f, (train, test) in enumerate(folds):
        preds: list[Prediction] = []
        try:
            pool = PoolIndex.build(train, backend, cfg.max_depth, cfg.max_nodes)
            for tree in test.trees:
                preds.append(predict(tree, pool, cfg, backend))
        except MacrError as exc:
            log.error("fold %d aborted: %s", f, exc)
            errors[f] = str(exc)
            results.append(FoldResult(f, [t.id for t in test.trees], [t.id for t in train.trees], preds, None, None, str(exc)))
            continue
        cm = ConfusionMatrix.from_labels([t.gold_label for t in test.trees], [p.label for p in preds], dataset.label_set)
        metrics = weighted_metrics(cm)
        per_fold.append(metrics)
        results.append(FoldResult(f, [t.id for t in test.trees], [t.id for t in train.trees], preds, cm, metrics))
    report = MetricReport(name or cfg.ablation, per_fold, k, _signature(dataset, folds), not errors, errors)
    return ExperimentResult(report, results)


def run_ablations(dataset: Dataset, cfg, backend: Backend, ablations: Sequence[str], k: int = 5, seed: int | None = None) -> dict[str, ExperimentResult]:
    return {
        name: run_experiment(dataset, cfg.with_overrides(ablation=name), backend, k, seed, name)
        for name in ablations
    }


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    values: tuple[float, float, float]
    stds: tuple[float, float, float]
    deltas: tuple[float | None, float | None, float | None]  # percent vs first report


def relative_delta(value: float, base: float) -> float | None:
    if base == 0:
        return None
    return (value - base) / base * 100.0


def compare_reports(reports: Sequence[MetricReport]) -> list[ComparisonRow]:
    """Absolute metrics plus percentage change against the first report."""
    if len(reports) < 2:
        raise ValidationError("reports", "need at least two reports to compare")
    base = reports[0]
    for r in reports[1:]:
        if r.fold_signature != base.fold_signature or r.k != base.k:
            raise ValidationError("reports", f"{r.name!r} was run on different folds than {base.name!r}")
    base_mean = base.mean()
    rows = []
    for r in reports:
        mean = r.mean()
        rows.append(ComparisonRow(r.name, mean, r.std(), tuple(relative_delta(v, b) for v, b in zip(mean, base_mean))))
    return rows


def format_delta(delta: float | None) -> str:
    if delta is None:
        return "n/a"
    return f"{delta:+.1f}%"


def write_comparison(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "w_precision", "w_precision_std", "w_precision_delta", "w_recall", "w_recall_std",
                    "w_recall_delta", "w_f1", "w_f1_std", "w_f1_delta"])
        for r in rows:
            cells = [r.name]
            for v, s, d in zip(r.values, r.stds, r.deltas):
                cells += [f"{v:.4f}", f"{s:.4f}", format_delta(d)]
            w.writerow(cells)


def write_experiment(result: ExperimentResult, directory: str | Path, label_set: RiskLabelSet) -> None:
    """Per-fold predictions (JSONL) and confusion matrices (TSV) under ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for fold in result.folds:
        with (out / f"fold{fold.index}_predictions.jsonl").open("w", encoding="utf-8") as fh:
            for p in fold.predictions:
                record = p.to_record(label_set)
                record["provenance"] = {**record["provenance"], "fold": fold.index}
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        if fold.confusion is not None:
            with (out / f"fold{fold.index}_confusion.tsv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, delimiter="\t", lineterminator="\n")
                w.writerow(["gold\\pred", *label_set.labels])
                for name, row in zip(label_set.labels, fold.confusion.counts):
                    w.writerow([name, *row.tolist()])
    summary = {
        "name": result.report.name,
        "k": result.report.k,
        "complete": result.report.complete,
        "errors": result.report.errors,
        "per_fold": result.report.per_fold,
        "mean": result.report.mean(),
        "std": result.report.std(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
