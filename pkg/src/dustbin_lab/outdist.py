"""Representativeness of candidate out-distribution sets.

A candidate is scored by how uniformly a naive model's confident
misclassifications spread over the K in-distribution classes: normalized
Shannon entropy of the misclassification histogram, 0 for a one-class pile,
1 for a perfectly uniform spread.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError
from .datasets import DataError, LabeledSet


@dataclass
class MisclassHistogram:
    counts: list
    total_evaluated: int
    confidence_threshold: float

    def __post_init__(self):
        self.counts = [int(c) for c in self.counts]
        if any(c < 0 for c in self.counts):
            raise DataError("histogram counts must be non-negative")
        if sum(self.counts) > self.total_evaluated:
            raise DataError("counted samples exceed total evaluated")


@dataclass
class UniformityReport:
    set_name: str
    histogram: MisclassHistogram
    score: float


def misclass_histogram(
    naive_model, outdist: LabeledSet, confidence_threshold: float = 0.5
) -> MisclassHistogram:
    """Count, per in-distribution class, the out-distribution samples the
    naive model assigns there with confidence >= threshold."""
    if naive_model.config.augmented:
        raise ContractError("representativeness is measured against a naive model")
    probs = naive_model.probs(outdist.stacked())
    counts = [0] * naive_model.k_classes
    for row in probs:
        top = int(np.argmax(row))
        if row[top] >= confidence_threshold:
            counts[top] += 1
    return MisclassHistogram(counts, len(outdist), confidence_threshold)


def uniformity_score(h: MisclassHistogram) -> float:
    """Normalized Shannon entropy H(p)/ln(K) of the count distribution."""
    total = sum(h.counts)
    if total < 1:
        raise DataError("empty histogram: no confidently classified samples")
    k = len(h.counts)
    if k == 1:
        return 1.0
    p = np.asarray(h.counts, dtype=np.float64) / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    score = entropy / np.log(k)
    return float(min(max(score, 0.0), 1.0))


def rank_candidates(
    naive_model, candidates, confidence_threshold: float = 0.5
) -> list:
    """Score every named candidate set and order them best-first.

    ``candidates`` is a list of (name, LabeledSet) pairs. Ties break on the
    set name, lexicographically.
    """
    if not candidates:
        raise DataError("need at least one candidate set")
    reports = []
    for name, lset in candidates:
        h = misclass_histogram(naive_model, lset, confidence_threshold)
        reports.append(UniformityReport(name, h, uniformity_score(h)))
    reports.sort(key=lambda r: (-r.score, r.set_name))
    return reports


def write_histogram_csv(report: UniformityReport, path) -> None:
    """Per-class counts plus a trailing score line."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "count"])
        for cls, count in enumerate(report.histogram.counts):
            writer.writerow([cls, count])
        writer.writerow(["score", repr(report.score)])
