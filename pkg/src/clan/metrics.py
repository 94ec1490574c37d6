"""AUROC, per-class AUROC reports and macro-F1.

Score orientation throughout: higher score means more malicious.
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


def rankdata(values):
    """Midranks (1-based), ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e + 1)
    return ranks


def auroc(scores, labels):
    """P(score_malicious > score_benign) + 0.5 P(tie) via the Mann-Whitney statistic.

    ``labels`` are binary, 1 = malicious.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both benign and malicious samples")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# Class order of the published per-class table, matched on normalised names.
TABLE_ORDER = [
    ("Botnet", ("bot", "botnet")),
    ("DDoS", ("ddos",)),
    ("DoS (Golden Eye)", ("dosgoldeneye", "goldeneye")),
    ("DoS (Hulk)", ("doshulk", "hulk")),
    ("DoS (Slow HTTP Test)", ("dosslowhttptest", "slowhttptest")),
    ("DoS (Slow Loris)", ("dosslowloris", "slowloris")),
    ("FTP Patator", ("ftppatator",)),
    ("Portscan", ("portscan",)),
    ("SSH Patator (Brute Force)", ("sshpatator", "sshpatatorbruteforce")),
    ("Web Attack (Brute Force)", ("webattackbruteforce", "webattackbrute")),
    ("Web Attack (XSS)", ("webattackxss", "xss")),
    ("Heartbleed", ("heartbleed",)),
    ("Web Attack (SQL Injection)", ("webattacksqlinjection", "webattacksql", "sqlinjection")),
]


def normalise_name(name):
    return re.sub(r"[^a-z0-9]", "", name.lower())


def table_rank(class_name):
    """Position of a class in the published table order, or None."""
    key = normalise_name(class_name)
    for i, (_, aliases) in enumerate(TABLE_ORDER):
        if key in aliases:
            return i
    return None


def lycos_holdout_names(class_names):
    """Class names corresponding to Heartbleed and SQL injection, as present."""
    wanted = {11, 12}
    return [n for n in class_names if table_rank(n) in wanted]


@dataclass
class EvalReport:
    rows: list  # (class_name, n_samples, auroc)
    mean_auroc: float
    macro_f1: float | None = None
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("class", "n_samples", "auroc")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for name, n, value in self.rows:
                writer.writerow([name, n, f"{value:.6f}"])
            writer.writerow(["Mean", sum(n for _, n, _ in self.rows), f"{self.mean_auroc:.6f}"])
            if self.macro_f1 is not None:
                writer.writerow(["macro_f1", "", f"{self.macro_f1:.6f}"])

    def format_table(self):
        width = max([len(r[0]) for r in self.rows] + [len("Mean")])
        lines = [f"{'Class':<{width}}  {'N':>8}  AUROC"]
        for name, n, value in self.rows:
            lines.append(f"{name:<{width}}  {n:>8}  {value:.6f}")
        lines.append(f"{'Mean':<{width}}  {'':>8}  {self.mean_auroc:.6f}")
        if self.macro_f1 is not None:
            lines.append(f"{'macro-F1':<{width}}  {'':>8}  {self.macro_f1:.6f}")
        return "\n".join(lines)


def per_class_auroc(labels, scores, class_names, metadata=None):
    """One AUROC per malicious class against all benign rows, plus their mean.

    ``labels`` are multi-class indices with 0 = benign (a ``FlowDataset`` is
    also accepted). Classes with no rows are left out with a warning. Rows
    follow the published table order where names match, then the rest in
    class-table order.
    """
    if hasattr(labels, "labels"):
        labels = labels.labels
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    benign = labels == 0
    if not benign.any():
        raise DataError("per-class AUROC needs benign rows in the test set")
    rows = []
    for c in range(1, len(class_names)):
        mask = labels == c
        if not mask.any():
            log.warning("class %r absent from test set; omitted", class_names[c])
            continue
        keep = benign | mask
        rows.append((class_names[c], int(mask.sum()), auroc(scores[keep], mask[keep].astype(int))))
    if not rows:
        raise DataError("no malicious classes present in the test set")
    rows.sort(key=lambda r: (table_rank(r[0]) is None, table_rank(r[0]) or 0))
    mean = float(np.mean([r[2] for r in rows]))
    return EvalReport(rows, mean, metadata=dict(metadata or {}))


def macro_f1(predictions, labels, n_classes):
    """Unweighted mean of per-class F1; a class absent from both sides scores 0."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DataError("predictions and labels differ in length")
    f1 = []
    for c in range(n_classes):
        tp = np.sum((predictions == c) & (labels == c))
        fp = np.sum((predictions == c) & (labels != c))
        fn = np.sum((predictions != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(f1))
