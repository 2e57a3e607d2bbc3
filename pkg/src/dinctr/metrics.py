"""Ranking and classification metrics plus the ad-business formulas.

AUC is the Mann-Whitney statistic computed from midranks, so tied scores
earn half credit and the result matches exhaustive pair counting exactly.
Grouped AUC partitions records by a group key (users), skips groups that
lack both classes, and averages the per-group AUCs with impression- or
click-count weights, renormalized over the usable groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .optim import bce_loss

WEIGHT_MODES = ("impressions", "clicks")


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    n = scores.size
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    group = np.concatenate(([True], np.diff(s) != 0)).cumsum() - 1
    counts = np.bincount(group)
    firsts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg = firsts + (counts + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg[group]
    return ranks


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    (# concordant pairs + 0.5 * # tied pairs) / (#pos * #neg), computed in
    O(n log n) via a rank sum. Requires both classes to be present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"shape mismatch: scores {s.shape} vs labels {y.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: need at least one positive and one negative label")
    ranks = _midranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class GroupAuc:
    group_key: int
    weight: float
    auc: float
    n_records: int


@dataclass
class GaucResult:
    value: float
    groups: list[GroupAuc]
    n_groups_used: int
    n_groups_skipped: int


def gauc(scores, labels, group_keys, weight_mode: str = "impressions") -> GaucResult:
    """Group-weighted AUC over a partition of the records.

    Groups with only one class (or, in clicks mode, zero clicks) are
    skipped; the remaining per-group AUCs are combined as
    sum(w_i * auc_i) / sum(w_i) with w_i the group's impression or click
    count. Raises when no group is usable.
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}, got {weight_mode!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    k = np.asarray(group_keys)
    if not (s.shape == y.shape == k.shape) or s.ndim != 1:
        raise ValueError("scores, labels and group_keys must be equal-length vectors")
    groups: list[GroupAuc] = []
    skipped = 0
    for key in np.unique(k):
        sel = k == key
        y_g = y[sel]
        n_pos = int((y_g == 1).sum())
        if n_pos == 0 or n_pos == y_g.size:
            skipped += 1
            continue
        weight = float(n_pos if weight_mode == "clicks" else y_g.size)
        if weight == 0.0:
            skipped += 1
            continue
        groups.append(GroupAuc(group_key=int(key), weight=weight, auc=auc(s[sel], y_g), n_records=int(y_g.size)))
    if not groups:
        raise ValueError("no usable groups: every group has a single class")
    total = sum(g.weight for g in groups)
    value = sum(g.weight * g.auc for g in groups) / total
    return GaucResult(
        value=float(value),
        groups=groups,
        n_groups_used=len(groups),
        n_groups_skipped=skipped,
    )


def log_loss(scores, labels) -> float:
    """Mean binary cross-entropy; shares the training-loss implementation."""
    return bce_loss(scores, labels)[0]


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of records where (score >= threshold) matches the label."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.size == 0:
        raise ValueError("scores and labels must be equal-length non-empty vectors")
    return float(np.mean((s >= threshold) == (y == 1)))


def ctr(clicks: int, impressions: int) -> float:
    """Click-through rate, clicks / impressions.

    Note: some writeups print this ratio inverted; the universally used
    definition (clicks over impressions) is implemented here.
    """
    if impressions < 1:
        raise ValueError("impressions must be >= 1")
    if clicks < 0 or clicks > impressions:
        raise ValueError(f"clicks ({clicks}) must lie in [0, impressions={impressions}]")
    return clicks / impressions


def ecpm(ctr_rate: float, bid: float) -> float:
    """Expected value of one impression, ctr * bid.

    No per-mille scaling is applied; multiply by 1000 yourself if you want
    the conventional cost-per-thousand figure.
    """
    if not 0.0 <= ctr_rate <= 1.0:
        raise ValueError(f"ctr must be in [0, 1], got {ctr_rate}")
    if bid < 0.0:
        raise ValueError(f"bid must be >= 0, got {bid}")
    return ctr_rate * bid


@dataclass
class AdCandidate:
    ad_id: str
    bid: float
    predicted_ctr: float

    def __post_init__(self):
        if self.bid < 0.0:
            raise ValueError(f"candidate {self.ad_id!r}: bid must be >= 0")


def rank_ads(candidates: list[AdCandidate]) -> list[AdCandidate]:
    """Sort by eCPM descending, ties broken by ad_id ascending."""
    if not candidates:
        raise ValueError("no candidates to rank")
    return sorted(candidates, key=lambda c: (-ecpm(c.predicted_ctr, c.bid), c.ad_id))


@dataclass
class EvalReport:
    """One model's metrics on one dataset, with the per-group breakdown."""

    auc: float
    gauc: float
    log_loss: float
    accuracy: float
    n_records: int
    n_groups_used: int
    n_groups_skipped: int
    weight_mode: str = "impressions"
    per_group: list[GroupAuc] = field(default_factory=list)

    def to_dict(self, include_groups: bool = True) -> dict:
        out = {
            "auc": self.auc,
            "gauc": self.gauc,
            "log_loss": self.log_loss,
            "accuracy": self.accuracy,
            "n_records": self.n_records,
            "n_groups_used": self.n_groups_used,
            "n_groups_skipped": self.n_groups_skipped,
            "weight_mode": self.weight_mode,
        }
        if include_groups:
            out["per_group"] = [
                {"group": g.group_key, "weight": g.weight, "auc": g.auc, "n_records": g.n_records}
                for g in self.per_group
            ]
        return out

    def to_json(self, include_groups: bool = True) -> str:
        return json.dumps(self.to_dict(include_groups=include_groups), sort_keys=True)


def evaluate(scores, labels, group_keys, weight_mode: str = "impressions") -> EvalReport:
    """Full metric sweep for one model on one scored dataset."""
    g = gauc(scores, labels, group_keys, weight_mode)
    return EvalReport(
        auc=auc(scores, labels),
        gauc=g.value,
        log_loss=log_loss(scores, labels),
        accuracy=accuracy(scores, labels),
        n_records=int(np.asarray(scores).size),
        n_groups_used=g.n_groups_used,
        n_groups_skipped=g.n_groups_skipped,
        weight_mode=weight_mode,
        per_group=g.groups,
    )
