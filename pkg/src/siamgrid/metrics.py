"""Multi-label evaluation: per-label and macro AUROC, Hamming loss,
normalized ranking error, and report assembly.

AUROC uses the rank (Mann-Whitney) formulation with half credit for ties,
which equals trapezoidal ROC area and brute-force pair counting. NA label
cells are excluded per label (AUROC) or per cell (Hamming) or per sample
(ranking error). Labels whose evaluation column holds a single class are
"undefined": skipped from the macro mean and listed in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError
from .data import NA


@dataclass
class PredictionSet:
    scores: np.ndarray  # (N, K) floats in [0, 1]
    labels: np.ndarray  # (N, K) int8 in {0, 1, NA}
    label_names: tuple[str, ...]
    dataset_tag: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape:
            raise ContractError(
                f"scores {self.scores.shape} and labels {self.labels.shape} differ"
            )
        if len(self.label_names) != self.scores.shape[1]:
            raise ContractError("label_names length must equal K")
        if not np.isfinite(self.scores).all():
            raise ContractError("scores must be finite")


@dataclass
class MetricsReport:
    macro_auroc: float
    per_label_auroc: dict[str, float]
    hamming_loss: float
    ranking_error: float
    n_samples: int
    labels_evaluated: list[str]
    labels_skipped: list[str] = field(default_factory=list)
    samples_skipped_ranking: int = 0
    dataset_tag: str = ""

    def to_dict(self) -> dict:
        return {
            "macro_auroc": self.macro_auroc,
            "per_label_auroc": self.per_label_auroc,
            "hamming_loss": self.hamming_loss,
            "ranking_error": self.ranking_error,
            "n_samples": self.n_samples,
            "labels_evaluated": self.labels_evaluated,
            "labels_skipped": self.labels_skipped,
            "samples_skipped_ranking": self.samples_skipped_ranking,
            "dataset_tag": self.dataset_tag,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        return MetricsReport(**d)


def auroc_label(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Probability that a positive outranks a negative, ties at half credit.

    Returns None ("undefined") when only one class is present after NA
    exclusion; never raises for that case.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels != NA
    scores, labels = scores[keep], labels[keep]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    # midranks over tie groups (1-based)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auroc(preds: PredictionSet) -> float:
    defined = [
        a
        for k in range(preds.scores.shape[1])
        if (a := auroc_label(preds.scores[:, k], preds.labels[:, k])) is not None
    ]
    if not defined:
        raise ContractError("macro_auroc: no label has both classes present")
    return float(np.mean(defined))


def hamming_loss(preds: PredictionSet, threshold: float = 0.5) -> float:
    """Fraction of mismatched cells after binarizing scores at the threshold
    (score >= threshold maps to 1). NA cells are excluded from the count
    and the denominator."""
    evaluable = preds.labels != NA
    if not evaluable.any():
        raise ContractError("hamming_loss: no evaluable cells")
    predicted = (preds.scores >= threshold).astype(np.int8)
    mismatches = (predicted != preds.labels) & evaluable
    return float(mismatches.sum() / evaluable.sum())


def ranking_error(preds: PredictionSet) -> tuple[float, int]:
    """Mean per-sample fraction of (relevant, irrelevant) pairs scored in the
    wrong order (ties count as misranked). Samples lacking both a relevant
    and an irrelevant label are skipped; their count is returned."""
    n, _ = preds.scores.shape
    per_sample = []
    skipped = 0
    for i in range(n):
        labels = preds.labels[i]
        scores = preds.scores[i]
        rel = np.where(labels == 1)[0]
        irr = np.where(labels == 0)[0]
        if len(rel) == 0 or len(irr) == 0:
            skipped += 1
            continue
        s_rel = scores[rel][:, None]
        s_irr = scores[irr][None, :]
        misranked = (s_rel <= s_irr).sum()
        per_sample.append(misranked / (len(rel) * len(irr)))
    if not per_sample:
        raise ContractError("ranking_error: no evaluable samples")
    return float(np.mean(per_sample)), skipped


def report_build(preds: PredictionSet, threshold: float = 0.5) -> MetricsReport:
    per_label: dict[str, float] = {}
    skipped_labels: list[str] = []
    for k, name in enumerate(preds.label_names):
        a = auroc_label(preds.scores[:, k], preds.labels[:, k])
        if a is None:
            skipped_labels.append(name)
        else:
            per_label[name] = a
    if not per_label:
        raise ContractError("report_build: no evaluable labels")
    rank_err, skipped_samples = ranking_error(preds)
    return MetricsReport(
        macro_auroc=float(np.mean(list(per_label.values()))),
        per_label_auroc=per_label,
        hamming_loss=hamming_loss(preds, threshold=threshold),
        ranking_error=rank_err,
        n_samples=preds.scores.shape[0],
        labels_evaluated=list(per_label),
        labels_skipped=skipped_labels,
        samples_skipped_ranking=skipped_samples,
        dataset_tag=preds.dataset_tag,
    )


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def render_table(rows: list[dict], columns: list[str], floatfmt: str = "{:.3f}") -> str:
    """Aligned text table; floats formatted, everything else str()'d."""
    def fmt(v):
        if isinstance(v, float):
            return floatfmt.format(v)
        return "" if v is None else str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = [
        "  ".join(c.ljust(w) for c, w in zip(columns, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def render_csv(rows: list[dict], columns: list[str]) -> str:
    import csv as _csv
    import io

    buf = io.StringIO()
    writer = _csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore",
                             lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: r.get(c, "") for c in columns})
    return buf.getvalue()


def report_rows(report: MetricsReport, strategy: str) -> dict:
    """One strategy-row in the per-label comparison layout."""
    row = {"strategy": strategy}
    row.update(report.per_label_auroc)
    for name in report.labels_skipped:
        row[name] = None
    row["macro_auroc"] = report.macro_auroc
    row["hamming_loss"] = report.hamming_loss
    row["ranking_error"] = report.ranking_error
    return row
