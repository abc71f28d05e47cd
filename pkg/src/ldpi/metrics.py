"""Evaluation metrics and run reports.

AUC is computed from rank statistics (ties get half credit), which equals
the probability that a random anomalous sample outscores a random benign
one. Reports aggregate per-fold metrics as mean with sample (n-1)
standard deviation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import SingleClass


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC of scores against binary labels (1 = anomalous)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels != 0
    n_pos = int(pos.sum())
    n_neg = int(scores.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with 'predicted anomalous' meaning score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) != 0
    pred = scores > threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return tp, fp, tn, fn


def prf(scores, labels, threshold: float) -> tuple[float, float, float]:
    """(precision, recall, F1) at a fixed threshold; any 0/0 is 0."""
    tp, fp, _tn, fn = confusion(scores, labels, threshold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class MetricReport:
    """Full scoreboard of one evaluation: AUC plus per-operating-point
    precision/recall/F1 and confusion counts."""

    auc: float
    per_op: dict


def compute_report(scores, labels, thresholds) -> MetricReport:
    per_op = {}
    for op in ("ninety_nine", "near_max", "max", "hundred_one"):
        thr = getattr(thresholds, op)
        tp, fp, tn, fn = confusion(scores, labels, thr)
        precision, recall, f1 = prf(scores, labels, thr)
        per_op[op] = {"threshold": thr, "precision": precision, "recall": recall,
                      "f1": f1, "tp": tp, "fp": fp, "tn": tn, "fn": fn}
    return MetricReport(auc=auc(scores, labels), per_op=per_op)


# --- aggregation / rendering -------------------------------------------------

def aggregate(values: Iterable[float]) -> tuple[float, Optional[float], int]:
    """(mean, sample std or None for a single value, n)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("nothing to aggregate")
    std = float(arr.std(ddof=1)) if arr.size > 1 else None
    return float(arr.mean()), std, int(arr.size)


def fold_metrics(reports) -> dict:
    """Collect {metric: [per-fold values]} from FoldReport objects."""
    out: dict[str, list[float]] = {"auc": []}
    for rep in reports:
        out["auc"].append(rep.auc)
        for op, f1 in rep.f1.items():
            out.setdefault(f"f1_{op}", []).append(f1)
    return out


def render_report(metrics: dict, fmt: str = "text") -> str:
    """Render {metric: values} as aligned text or line-delimited JSON."""
    if fmt == "text":
        lines = []
        width = max(len(name) for name in metrics)
        for name, values in metrics.items():
            mean, std, _n = aggregate(values)
            spread = f"± {std:.6f}" if std is not None else "—"
            lines.append(f"{name:<{width}}  {mean:.6f} {spread}")
        return "\n".join(lines) + "\n"
    if fmt == "machine":
        lines = []
        for name, values in metrics.items():
            mean, std, n = aggregate(values)
            lines.append(json.dumps({"metric": name, "mean": mean,
                                     "std": std, "n": n}, sort_keys=True))
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_machine_report(text: str) -> dict:
    """Inverse of render_report(..., 'machine')."""
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out[obj["metric"]] = {"mean": obj["mean"], "std": obj["std"], "n": obj["n"]}
    return out
