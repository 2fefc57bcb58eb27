"""Acc/Rej/Err evaluation, transfer and probing protocols, detection rates.

A cell's three fractions always describe: correctly classified, correctly
sent to the dustbin, and everything else. For a naive model judging an
out-distribution set, only confident (>= threshold) assignments count as
errors; the below-threshold remainder is kept in the cell so that the four
fractions still account for every sample exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, legitimate_walk, run_attack
from .autodiff import ContractError
from .datasets import DataError, LabeledSet


@dataclass
class EvalCell:
    acc: float
    rej: float
    err: float
    below_threshold: float = 0.0

    def __post_init__(self):
        total = self.acc + self.rej + self.err + self.below_threshold
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"cell fractions sum to {total}, expected 1")

    def as_row(self):
        return [repr(self.acc), repr(self.rej), repr(self.err)]


@dataclass
class DetectionRates:
    tpr: float
    fpr: float
    fnr: float


@dataclass
class ProbeReport:
    """Percentages per probed direction: rows[(name, epsilon)] =
    (fooling_visit_pct, dustbin_visit_pct, true_class_stay_pct)."""

    rows: dict = field(default_factory=dict)

    def add(self, name, epsilon, fooling_pct, dustbin_pct, stay_pct):
        self.rows[(name, float(epsilon))] = (
            float(fooling_pct),
            float(dustbin_pct),
            float(stay_pct),
        )


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)  # (model_name, set_name) -> EvalCell
    metadata: dict = field(default_factory=dict)

    def add(self, model_name, set_name, cell: EvalCell):
        self.rows[(model_name, set_name)] = cell

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["model", "dataset", "acc", "rej", "err"])
            for (model_name, set_name), cell in sorted(self.rows.items()):
                writer.writerow([model_name, set_name] + cell.as_row())

    def to_text(self) -> str:
        """Aligned table with one Acc./Rej./Err. block per model row."""
        lines = []
        width = max([len(m) for m, _ in self.rows] + [5]) + 2
        sets = sorted({s for _, s in self.rows})
        header = "model".ljust(width) + "metric  " + "".join(s.rjust(14) for s in sets)
        lines.append(header)
        lines.append("-" * len(header))
        for model_name in sorted({m for m, _ in self.rows}):
            for metric in ("acc", "rej", "err"):
                cells = []
                for s in sets:
                    cell = self.rows.get((model_name, s))
                    cells.append(
                        f"{getattr(cell, metric) * 100:14.2f}" if cell else " " * 14
                    )
                label = model_name if metric == "acc" else ""
                lines.append(label.ljust(width) + f"{metric:8}" + "".join(cells))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "rows": [
                {
                    "model": m,
                    "dataset": s,
                    "acc": c.acc,
                    "rej": c.rej,
                    "err": c.err,
                    "below_threshold": c.below_threshold,
                }
                for (m, s), c in sorted(self.rows.items())
            ],
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        report = cls(metadata=payload["metadata"])
        for row in payload["rows"]:
            report.add(
                row["model"],
                row["dataset"],
                EvalCell(row["acc"], row["rej"], row["err"], row["below_threshold"]),
            )
        return report


def _set_role(lset: LabeledSet) -> str:
    k = lset.k_classes
    labels = set(lset.labels)
    if labels == {k}:
        return "out-dist"
    if all(y < k for y in labels):
        return "in-dist"
    raise ContractError(
        "mixed in-distribution and dustbin labels; evaluate them separately"
    )


def evaluate(model, lset: LabeledSet, confidence_threshold_for_naive: float = 0.5) -> EvalCell:
    """One Acc/Rej/Err cell for a model on a labeled set.

    In-distribution sets: acc is true-class hits, rej is dustbin
    assignments (always 0 for naive models), err the remainder.
    Out-distribution sets: augmented models are scored by rejection;
    naive models by the confident-misclassification convention.
    """
    role = _set_role(lset)
    n = len(lset)
    if n == 0:
        raise DataError("cannot evaluate an empty set")
    k = lset.k_classes
    augmented = model.config.augmented
    if role == "in-dist":
        preds = model.predict(lset.stacked())
        labels = np.asarray(lset.labels)
        hits = int(np.sum(preds == labels))
        dust = int(np.sum(preds == k)) if augmented else 0
        return EvalCell(hits / n, dust / n, (n - hits - dust) / n)
    if augmented:
        preds = model.predict(lset.stacked())
        dust = int(np.sum(preds == k))
        return EvalCell(0.0, dust / n, (n - dust) / n)
    probs = model.probs(lset.stacked())
    confident = int(np.sum(probs.max(axis=1) >= confidence_threshold_for_naive))
    return EvalCell(0.0, 0.0, confident / n, below_threshold=(n - confident) / n)


def blackbox_transfer(
    source_model,
    target_model,
    attack_name: str,
    cfg: AttackConfig,
    clean_set: LabeledSet,
    only_source_successful: bool = False,
) -> EvalCell:
    """Craft adversaries on the source model, judge them on the target.

    Clean samples misclassified by the source are dropped first. By default
    every crafted adversary is scored; set only_source_successful to keep
    just the ones that fooled the source.
    """
    if _set_role(clean_set) != "in-dist":
        raise ContractError("transfer evaluation starts from in-distribution samples")
    preds = source_model.predict(clean_set.stacked())
    keep = [i for i, y in enumerate(clean_set.labels) if preds[i] == y]
    if not keep:
        raise DataError("source model classifies no clean sample correctly")
    adv_samples, adv_labels = [], []
    for i in keep:
        res = run_attack(
            source_model,
            clean_set.samples[i],
            clean_set.labels[i],
            attack_name,
            cfg,
            clean_set.domain,
        )
        if only_source_successful and not res.success:
            continue
        adv_samples.append(res.x_adv)
        adv_labels.append(clean_set.labels[i])
    if not adv_samples:
        raise DataError("no adversaries to evaluate (source attack never succeeded)")
    adv_set = LabeledSet(
        adv_samples,
        adv_labels,
        clean_set.k_classes,
        domain=clean_set.domain,
        name=f"{attack_name}-transfer",
    )
    return evaluate(target_model, adv_set)


def whitebox_probe(
    model,
    attack_name: str,
    cfg: AttackConfig,
    clean_set: LabeledSet,
    steps_along_direction: int = 20,
) -> ProbeReport:
    """March along each sample's own-model attack direction and record the
    first label change: another in-distribution class (fooling) or dustbin."""
    if _set_role(clean_set) != "in-dist":
        raise ContractError("probing starts from in-distribution samples")
    k = clean_set.k_classes
    preds = model.predict(clean_set.stacked())
    keep = [i for i, y in enumerate(clean_set.labels) if preds[i] == y]
    if not keep:
        raise DataError("model classifies no clean sample correctly")
    fooling = dustbin = stayed = 0
    for i in keep:
        x = clean_set.samples[i]
        y = clean_set.labels[i]
        res = run_attack(model, x, y, attack_name, cfg, clean_set.domain)
        delta = res.x_adv - x
        first = None
        for s in range(1, steps_along_direction + 1):
            pt = x + (s / steps_along_direction) * delta
            label = model.predict(pt)
            if label != y:
                first = label
                break
        if first is None:
            stayed += 1
        elif first == k and model.config.augmented:
            dustbin += 1
        else:
            fooling += 1
    n = len(keep)
    report = ProbeReport()
    report.add(
        attack_name,
        cfg.epsilon,
        100.0 * fooling / n,
        100.0 * dustbin / n,
        100.0 * stayed / n,
    )
    return report


def legit_probe(model, in_dist_set: LabeledSet, epsilons) -> ProbeReport:
    """Walk each correctly classified sample toward its nearest same-class
    neighbor (input-space distance) and record where the label goes per
    epsilon."""
    if _set_role(in_dist_set) != "in-dist":
        raise ContractError("legitimate walks start from in-distribution samples")
    for eps in epsilons:
        if not 0.0 <= eps <= 1.0:
            raise ValueError("epsilons must lie in [0, 1]")
    k = in_dist_set.k_classes
    xs = in_dist_set.stacked()
    labels = np.asarray(in_dist_set.labels)
    preds = model.predict(xs)
    keep = [i for i in range(len(in_dist_set)) if preds[i] == labels[i]]
    if not keep:
        raise DataError("model classifies no clean sample correctly")
    flat = xs.reshape(len(in_dist_set), -1)
    neighbors = {}
    for i in keep:
        same = np.flatnonzero((labels == labels[i]) & (np.arange(len(labels)) != i))
        if same.size == 0:
            raise DataError(f"sample {i} has no same-class neighbor")
        d = np.linalg.norm(flat[same] - flat[i], axis=1)
        neighbors[i] = int(same[int(np.argmin(d))])
    report = ProbeReport()
    for eps in epsilons:
        fooling = dustbin = stayed = 0
        for i in keep:
            pt = legitimate_walk(xs[i], xs[neighbors[i]], eps)
            label = model.predict(pt)
            if label == labels[i]:
                stayed += 1
            elif label == k and model.config.augmented:
                dustbin += 1
            else:
                fooling += 1
        n = len(keep)
        report.add(
            "legitimate", eps, 100.0 * fooling / n, 100.0 * dustbin / n, 100.0 * stayed / n
        )
    return report


def detection_rates(in_dist_cell: EvalCell, out_dist_cell: EvalCell) -> DetectionRates:
    """tpr = in.acc + in.err; fpr = 1 - out.rej; fnr = in.rej."""
    return DetectionRates(
        tpr=in_dist_cell.acc + in_dist_cell.err,
        fpr=1.0 - out_dist_cell.rej,
        fnr=in_dist_cell.rej,
    )
