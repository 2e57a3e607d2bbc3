"""Ad-impression records, vocabularies, encoding, splits, and the synthetic
ad-log generator.

The generator produces a clickstream with a known ground-truth click
process: items belong to clusters, each user's behavior history is drawn
from a cluster-preference distribution, and the click probability of an
impression rises with the fraction of the user's history that lives in the
shown ad's cluster. That makes per-ad, localized attention over the history
the signal a model has to recover, and gives tests an exact oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .numerics import make_rng, sigmoid

PAD_INDEX = 0
OOV_INDEX = 1
NO_HISTORY_TOKEN = "<no_history>"


@dataclass
class ImpressionRecord:
    """One ad display/click event."""

    user_id: str
    ad_id: str
    behavior_ids: list[str]
    label: int
    timestamp: int
    bid: Optional[float] = None


class Vocabulary:
    """Token-to-index map with reserved indices 0 (padding) and 1 (OOV).

    Indices >= 2 are assigned in first-seen order. Once frozen, unknown
    tokens encode to the OOV index and the vocabulary never grows.
    """

    PAD = "<pad>"
    OOV = "<oov>"

    def __init__(self, tokens: Optional[Iterable[str]] = None):
        self._tokens: list[str] = [self.PAD, self.OOV]
        self._index: dict[str, int] = {self.PAD: PAD_INDEX, self.OOV: OOV_INDEX}
        self.frozen = False
        if tokens is not None:
            for t in tokens:
                self.add(t)

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        """All tokens including the two reserved ones, in index order."""
        return list(self._tokens)

    def add(self, token: str) -> int:
        if token in self._index:
            return self._index[token]
        if self.frozen:
            raise ValueError(f"vocabulary is frozen; cannot add {token!r}")
        idx = len(self._tokens)
        self._tokens.append(token)
        self._index[token] = idx
        return idx

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def encode(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            if not self.frozen:
                raise ValueError(f"unknown token {token!r} in unfrozen vocabulary; use add()")
            return OOV_INDEX
        return idx

    def decode(self, index: int) -> str:
        return self._tokens[index]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @classmethod
    def from_real_tokens(cls, real_tokens: Sequence[str]) -> "Vocabulary":
        """Rebuild a frozen vocabulary from the tokens at indices >= 2."""
        return cls(real_tokens).freeze()


def build_vocab(records: Sequence[ImpressionRecord]) -> tuple[Vocabulary, Vocabulary]:
    """First-seen-order vocabularies for users and items.

    Ads and behavior IDs share the single item vocabulary (one embedding
    space for both). Per record the ad token is registered before its
    behaviors. The reserved `<no_history>` item token is appended last; it
    is a normal trainable index used to stand in for empty histories.
    """
    if not records:
        raise ValueError("cannot build a vocabulary from zero records")
    users = Vocabulary()
    items = Vocabulary()
    for rec in records:
        users.add(rec.user_id)
        items.add(rec.ad_id)
        for tok in rec.behavior_ids:
            items.add(tok)
    items.add(NO_HISTORY_TOKEN)
    return users.freeze(), items.freeze()


@dataclass
class EncodedBatch:
    """Index-encoded impressions in fixed-shape arrays.

    ``mask[i, t]`` is True exactly where ``behavior_idx[i, t] != 0``; every
    record keeps at least one live slot (empty histories get the
    `<no_history>` token in slot 0).
    """

    ad_idx: np.ndarray  # (B,) int64
    behavior_idx: np.ndarray  # (B, T) int64, 0-padded
    mask: np.ndarray  # (B, T) bool
    labels: np.ndarray  # (B,) float64 in {0, 1}
    group_keys: np.ndarray  # (B,) int64 user index, for grouped metrics
    user_idx: np.ndarray  # (B,) int64

    def __len__(self) -> int:
        return int(self.ad_idx.shape[0])

    @property
    def max_seq_len(self) -> int:
        return int(self.behavior_idx.shape[1])

    def take(self, indices: np.ndarray) -> "EncodedBatch":
        """Row-subset copy, used for minibatching."""
        return EncodedBatch(
            ad_idx=self.ad_idx[indices],
            behavior_idx=self.behavior_idx[indices],
            mask=self.mask[indices],
            labels=self.labels[indices],
            group_keys=self.group_keys[indices],
            user_idx=self.user_idx[indices],
        )


@dataclass
class EncodeStats:
    """Silent-handling counters surfaced by encode()."""

    n_records: int = 0
    n_oov_tokens: int = 0
    n_truncated: int = 0
    n_empty_history: int = 0

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_oov_tokens": self.n_oov_tokens,
            "n_truncated": self.n_truncated,
            "n_empty_history": self.n_empty_history,
        }


def encode(
    records: Sequence[ImpressionRecord],
    user_vocab: Vocabulary,
    item_vocab: Vocabulary,
    max_seq_len: int,
) -> tuple[EncodedBatch, EncodeStats]:
    """Encode records against frozen vocabularies.

    Histories longer than ``max_seq_len`` keep their most recent tail;
    shorter ones are right-padded with index 0. OOV tokens and truncations
    are handled silently and counted in the returned stats.
    """
    if not (user_vocab.frozen and item_vocab.frozen):
        raise ValueError("encode requires frozen vocabularies")
    if max_seq_len < 1:
        raise ValueError("max_seq_len must be >= 1")
    n = len(records)
    ad_idx = np.zeros(n, dtype=np.int64)
    behavior_idx = np.zeros((n, max_seq_len), dtype=np.int64)
    labels = np.zeros(n, dtype=np.float64)
    user_idx = np.zeros(n, dtype=np.int64)
    stats = EncodeStats(n_records=n)
    no_history = item_vocab.encode(NO_HISTORY_TOKEN)
    for i, rec in enumerate(records):
        user_idx[i] = user_vocab.encode(rec.user_id)
        if user_idx[i] == OOV_INDEX and rec.user_id not in user_vocab:
            stats.n_oov_tokens += 1
        ad = item_vocab.encode(rec.ad_id)
        if ad == OOV_INDEX and rec.ad_id not in item_vocab:
            stats.n_oov_tokens += 1
        ad_idx[i] = ad
        seq = rec.behavior_ids
        if len(seq) > max_seq_len:
            seq = seq[-max_seq_len:]
            stats.n_truncated += 1
        if not seq:
            behavior_idx[i, 0] = no_history
            stats.n_empty_history += 1
        else:
            for t, tok in enumerate(seq):
                idx = item_vocab.encode(tok)
                if idx == OOV_INDEX and tok not in item_vocab:
                    stats.n_oov_tokens += 1
                behavior_idx[i, t] = idx
        labels[i] = float(rec.label)
    mask = behavior_idx != PAD_INDEX
    batch = EncodedBatch(
        ad_idx=ad_idx,
        behavior_idx=behavior_idx,
        mask=mask,
        labels=labels,
        group_keys=user_idx.copy(),
        user_idx=user_idx,
    )
    return batch, stats


def split(
    records: Sequence[ImpressionRecord],
    mode: str,
    fraction: float,
    seed: int = 0,
) -> tuple[list[ImpressionRecord], list[ImpressionRecord]]:
    """Partition into (train, validation).

    temporal: stable-sort by timestamp, the last ``fraction`` of records is
    validation. random: seeded shuffle, then the same tail split. Each
    record lands on exactly one side.
    """
    if mode not in ("temporal", "random"):
        raise ValueError(f"unknown split mode {mode!r}; use 'temporal' or 'random'")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    recs = list(records)
    n = len(recs)
    n_val = int(round(n * fraction))
    if n_val < 1 or n_val >= n:
        raise ValueError(f"split of {n} records with fraction {fraction} leaves an empty side")
    if mode == "temporal":
        order = sorted(range(n), key=lambda i: recs[i].timestamp)
        ordered = [recs[i] for i in order]
    else:
        perm = make_rng(seed).permutation(n)
        ordered = [recs[i] for i in perm]
    return ordered[: n - n_val], ordered[n - n_val:]


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("user_id", "ad_id", "behavior_ids", "label", "ts")


def record_to_obj(rec: ImpressionRecord) -> dict:
    obj = {
        "user_id": rec.user_id,
        "ad_id": rec.ad_id,
        "behavior_ids": list(rec.behavior_ids),
        "label": int(rec.label),
        "ts": int(rec.timestamp),
    }
    if rec.bid is not None:
        obj["bid"] = float(rec.bid)
    return obj


def obj_to_record(obj: dict, line_no: int, require_label: bool = True) -> ImpressionRecord:
    # require_label=False is the prediction-input mode: label and ts optional.
    for key in _REQUIRED_KEYS:
        if key not in obj:
            if key in ("label", "ts") and not require_label:
                continue
            raise ValueError(f"line {line_no}: missing required field {key!r}")
    label = int(obj["label"]) if "label" in obj else 0
    if label not in (0, 1):
        raise ValueError(f"line {line_no}: label must be 0 or 1, got {obj['label']!r}")
    bid = obj.get("bid")
    return ImpressionRecord(
        user_id=str(obj["user_id"]),
        ad_id=str(obj["ad_id"]),
        behavior_ids=[str(t) for t in obj["behavior_ids"]],
        label=label,
        timestamp=int(obj.get("ts", 0)),
        bid=None if bid is None else float(bid),
    )


def save_jsonl(records: Sequence[ImpressionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_obj(rec)) + "\n")


def load_jsonl(path, require_label: bool = True) -> list[ImpressionRecord]:
    """Read one record per line; unknown keys are ignored.

    A malformed line raises ValueError naming its 1-based line number. An
    empty file is an empty list.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"line {line_no}: expected a JSON object")
            out.append(obj_to_record(obj, line_no, require_label=require_label))
    return out


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic ad-log generator.

    The click process is sigmoid(base_logit + signal_strength * f) where f
    is the fraction of the user's behaviors that fall in the shown ad's
    cluster. ``cluster_concentration`` is the probability mass a user puts
    on their dominant interest cluster; the remainder spreads uniformly
    over the other clusters.
    """

    num_users: int = 500
    num_items: int = 200
    num_clusters: int = 10
    behaviors_min: int = 8
    behaviors_max: int = 32
    impressions: int = 25_000
    signal_strength: float = 4.0
    base_logit: float = -1.0
    cluster_concentration: float = 0.8
    seed: int = 1

    def validate(self) -> None:
        if self.num_users < 1 or self.num_items < 1 or self.impressions < 1:
            raise ValueError("num_users, num_items and impressions must be positive")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.num_clusters > self.num_items:
            raise ValueError("num_clusters cannot exceed num_items")
        if self.signal_strength < 0.0:
            raise ValueError("signal_strength must be >= 0")
        if not 1 <= self.behaviors_min <= self.behaviors_max:
            raise ValueError("behavior count range must satisfy 1 <= min <= max")
        if not 0.0 < self.cluster_concentration <= 1.0:
            raise ValueError("cluster_concentration must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_clusters": self.num_clusters,
            "behaviors_min": self.behaviors_min,
            "behaviors_max": self.behaviors_max,
            "impressions": self.impressions,
            "signal_strength": self.signal_strength,
            "base_logit": self.base_logit,
            "cluster_concentration": self.cluster_concentration,
            "seed": self.seed,
        }


@dataclass
class GroundTruth:
    """Generator-side truth kept for oracle tests and calibration."""

    item_clusters: dict[str, int]
    true_probs: list[float]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "item_clusters": self.item_clusters,
            "true_probs": self.true_probs,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundTruth":
        return cls(
            item_clusters={str(k): int(v) for k, v in obj["item_clusters"].items()},
            true_probs=[float(p) for p in obj["true_probs"]],
            config=dict(obj.get("config", {})),
        )


_BASE_TIMESTAMP = 1_700_000_000


def generate_synthetic(config: SyntheticConfig) -> tuple[list[ImpressionRecord], GroundTruth]:
    """Draw an ad log with a known click process.

    Items go round-robin into clusters (item i -> cluster i mod K). Each
    user gets a dominant cluster and a behavior history sampled from their
    preference distribution; each impression shows a uniformly random ad to
    a uniformly random user and clicks with the match-fraction sigmoid.
    Timestamps increase by one per impression so temporal splits follow
    generation order. All randomness flows from ``config.seed``.
    """
    config.validate()
    rng = make_rng(config.seed)
    K = config.num_clusters

    cluster_members: list[list[int]] = [[] for _ in range(K)]
    for item in range(config.num_items):
        cluster_members[item % K].append(item)

    user_behaviors: list[list[int]] = []
    for _ in range(config.num_users):
        dominant = int(rng.integers(K))
        n_b = int(rng.integers(config.behaviors_min, config.behaviors_max + 1))
        history = []
        for _ in range(n_b):
            if K == 1 or rng.random() < config.cluster_concentration:
                cluster = dominant
            else:
                offset = 1 + int(rng.integers(K - 1))
                cluster = (dominant + offset) % K
            members = cluster_members[cluster]
            history.append(members[int(rng.integers(len(members)))])
        user_behaviors.append(history)

    records = []
    true_probs = []
    for i in range(config.impressions):
        user = int(rng.integers(config.num_users))
        ad = int(rng.integers(config.num_items))
        history = user_behaviors[user]
        ad_cluster = ad % K
        matches = sum(1 for item in history if item % K == ad_cluster)
        match_fraction = matches / len(history)
        p = sigmoid(config.base_logit + config.signal_strength * match_fraction)
        label = 1 if rng.random() < p else 0
        bid = float(rng.uniform(0.1, 2.0))
        records.append(
            ImpressionRecord(
                user_id=f"u{user}",
                ad_id=f"i{ad}",
                behavior_ids=[f"i{item}" for item in history],
                label=label,
                timestamp=_BASE_TIMESTAMP + i,
                bid=bid,
            )
        )
        true_probs.append(p)

    truth = GroundTruth(
        item_clusters={f"i{item}": item % K for item in range(config.num_items)},
        true_probs=true_probs,
        config=config.to_dict(),
    )
    return records, truth


def save_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        return GroundTruth.from_dict(json.load(fh))
