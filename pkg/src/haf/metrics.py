"""Hierarchical evaluation metrics over ranked fine-class predictions."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, RankListTooShort, SingleClass


@dataclass
class MetricsReport:
    """Evaluation summary.

    ``mistake_severity`` is NaN when there are no mistakes; check
    ``mistakes_total`` rather than treating it as a score.
    """

    num_samples: int
    top1_error: float
    mistake_severity: float
    hier_dist_at: dict
    coarse_accuracy: dict  # level h -> accuracy after mapping to level h
    lca_sum: float
    mistakes_total: int
    mistake_histogram: dict  # LCA distance -> count
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        ms = None if math.isnan(self.mistake_severity) else self.mistake_severity
        doc = {
            "num_samples": self.num_samples,
            "top1_error": self.top1_error,
            "mistake_severity": ms,
            "hier_dist_at": {str(k): v for k, v in sorted(self.hier_dist_at.items())},
            "coarse_accuracy": {str(h): v for h, v in sorted(self.coarse_accuracy.items())},
            "lca_sum": self.lca_sum,
            "mistakes_total": self.mistakes_total,
            "mistake_histogram": [
                {"distance": d, "count": c} for d, c in sorted(self.mistake_histogram.items())
            ],
        }
        doc.update(self.extra)
        return doc

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["num_samples", self.num_samples])
        w.writerow(["top1_error", repr(self.top1_error)])
        w.writerow(["mistake_severity", repr(self.mistake_severity)])
        for k, v in sorted(self.hier_dist_at.items()):
            w.writerow([f"hier_dist@{k}", repr(v)])
        for h, v in sorted(self.coarse_accuracy.items()):
            w.writerow([f"coarse_accuracy_L{h}", repr(v)])
        w.writerow(["lca_sum", repr(self.lca_sum)])
        w.writerow(["mistakes_total", self.mistakes_total])
        for d, c in sorted(self.mistake_histogram.items()):
            w.writerow([f"mistakes_lca_{d}", c])
        for key, v in self.extra.items():
            w.writerow([key, v])
        return buf.getvalue()


def evaluate(tree, lca, ranked, truths, ks=(1, 5)):
    """Metrics for ``ranked[i]`` (class indices, best first) against ``truths[i]``.

    hier_dist@k averages, per sample, the LCA distance from the truth to each
    of the top-k predictions, then averages over all samples.
    """
    ranked = np.asarray(ranked, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if ranked.ndim != 2 or len(ranked) != len(truths):
        raise LengthMismatch(f"{len(ranked)} ranked lists for {len(truths)} truths")
    ks = sorted(set(int(k) for k in ks) | {1})
    if ks[-1] > ranked.shape[1]:
        raise RankListTooShort(f"k={ks[-1]} exceeds ranked list length {ranked.shape[1]}")
    n = len(truths)
    lca = np.asarray(lca)
    top1 = ranked[:, 0]
    d1 = lca[truths, top1]
    wrong = top1 != truths
    mistakes = int(wrong.sum())
    lca_sum = float(d1[wrong].sum())

    hier = {}
    for k in ks:
        per_sample = lca[truths[:, None], ranked[:, :k]].mean(axis=1)
        hier[k] = float(per_sample.sum() / n) if n else math.nan
    coarse = {
        h: float(np.mean(tree.ancestors[h - 1, top1] == tree.ancestors[h - 1, truths]))
        if n else math.nan
        for h in range(1, tree.num_levels + 1)
    }
    values, counts = np.unique(d1[wrong], return_counts=True)
    return MetricsReport(
        num_samples=n,
        top1_error=mistakes / n if n else math.nan,
        mistake_severity=lca_sum / mistakes if mistakes else math.nan,
        hier_dist_at=hier,
        coarse_accuracy=coarse,
        lca_sum=lca_sum,
        mistakes_total=mistakes,
        mistake_histogram={int(v): int(c) for v, c in zip(values, counts)},
    )


def min_lca_histogram(lca):
    """How many classes have each value as their smallest achievable LCA distance."""
    lca = np.asarray(lca)
    if lca.shape[0] < 2:
        raise SingleClass("need at least two classes")
    off = lca.astype(np.float64).copy()
    np.fill_diagonal(off, np.inf)
    mins = off.min(axis=1).astype(np.int64)
    values, counts = np.unique(mins, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}
