"""Binary cross-entropy with L2, the Adam optimizer, and the training loop.

Embedding tables get lazy (sparse) Adam semantics: a row's moment
accumulators move only when that row appears in the batch, so untouched
rows stay perfectly stationary. The L2 penalty covers all MLP weight
matrices plus the embedding rows touched by the current batch; biases and
the padding row are never penalized.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import EncodedBatch
from .model import PAD_ROW, DinModel, Gradients
from .numerics import make_rng

PROB_CLAMP = 1e-7


def bce_loss(probs, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its per-record gradient.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is taken at the clamped value so the two stay consistent.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: probs {p.shape} vs labels {y.shape}")
    if p.size == 0:
        raise ValueError("empty batch")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    dprobs = (pc - y) / (pc * (1.0 - pc)) / p.size
    return loss, dprobs


def l2_penalty(model: DinModel, lam: float, grads: Optional[Gradients] = None) -> float:
    """lam * sum(w^2) over MLP weights and batch-touched embedding rows.

    When ``grads`` is given, the matching contribution 2*lam*w is added in
    place; touched rows come from ``grads.touched_rows``. With no gradients
    the penalty alone is computed over all non-pad embedding rows.
    """
    if lam < 0.0:
        raise ValueError("l2 lambda must be >= 0")
    if lam == 0.0:
        return 0.0
    penalty = 0.0
    for i in range(model.n_layers):
        w = model.params[f"w{i}"]
        penalty += float(np.sum(w * w))
        if grads is not None:
            grads.dense[f"w{i}"] += 2.0 * lam * w
    for name in DinModel.EMBEDDING_PARAMS:
        if name not in model.params:
            continue
        table = model.params[name]
        if grads is not None:
            rows = grads.touched_rows.get(name, np.empty(0, dtype=np.int64))
        else:
            rows = np.arange(1, table.shape[0])
        rows = rows[rows != PAD_ROW]
        if rows.size:
            sub = table[rows]
            penalty += float(np.sum(sub * sub))
            if grads is not None:
                grads.dense[name][rows] += 2.0 * lam * sub
    return lam * penalty


@dataclass
class AdamState:
    """First/second moment accumulators, one step counter for all blocks."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: DinModel, lr: float = 1e-3) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params.items()},
            v={k: np.zeros_like(p) for k, p in model.params.items()},
            lr=lr,
        )


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: Gradients) -> None:
    """One in-place Adam update with bias correction.

    Embedding parameters update lazily: only rows listed in
    ``grads.touched_rows`` move, and the padding row never does.
    """
    for name, g in grads.dense.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.dense[name]
        m, v = state.m[name], state.v[name]
        if name in grads.touched_rows:
            rows = grads.touched_rows[name]
            rows = rows[rows != PAD_ROW]
            if rows.size == 0:
                continue
            gr = g[rows]
            m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * gr
            v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * (gr * gr)
            m_hat = m[rows] / bc1
            v_hat = v[rows] / bc2
            p[rows] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            m[...] = state.beta1 * m + (1.0 - state.beta1) * g
            v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 256
    lr: float = 1e-3
    l2_lambda: float = 1e-5
    seed: int = 1
    patience: int = 0  # 0 disables early stopping
    split_mode: str = "temporal"
    val_fraction: float = 0.2
    timing: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2_lambda < 0.0:
            raise ValueError("l2_lambda must be >= 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_gauc: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def rows(self) -> list[list]:
        return [
            [e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_gauc), repr(e.seconds)]
            for e in self.epochs
        ]


HISTORY_HEADER = ["epoch", "train_loss", "val_loss", "val_gauc", "seconds"]


def save_history(history: TrainHistory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        writer.writerows(history.rows())


def train(
    model: DinModel,
    train_batch: EncodedBatch,
    val_batch: EncodedBatch,
    config: TrainConfig,
) -> tuple[DinModel, TrainHistory]:
    """Epoch/minibatch training with per-epoch validation tracking.

    Each epoch reshuffles with a seeded stream, walks minibatches through
    forward/backward/adam with the L2 contribution folded into the
    gradients, then records validation log loss and impression-weighted
    grouped AUC. Returns the final model, or the best-validation-GAUC model
    when ``patience`` is set (stopping early after that many epochs without
    improvement). Fully deterministic given (seed, config, data).
    """
    from .metrics import gauc, log_loss  # local import, metrics depends on optim

    config.validate()
    n = len(train_batch)
    if n == 0:
        raise ValueError("empty training set")
    if len(val_batch) == 0:
        raise ValueError("empty validation set")
    state = AdamState.for_model(model, lr=config.lr)
    shuffle_rng = make_rng(config.seed, stream=2)
    history = TrainHistory()
    best_gauc = -np.inf
    best_params: Optional[dict[str, np.ndarray]] = None
    stale = 0

    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            mb = train_batch.take(order[start : start + config.batch_size])
            probs, cache = model.forward(mb)
            loss, dprobs = bce_loss(probs, mb.labels)
            grads = model.backward(cache, dprobs)
            l2_penalty(model, config.l2_lambda, grads)
            adam_step(state, model.params, grads)
            loss_sum += loss * len(mb)
        val_probs = model.predict(val_batch)
        val_loss = log_loss(val_probs, val_batch.labels)
        val_gauc = gauc(val_probs, val_batch.labels, val_batch.group_keys, "impressions").value
        seconds = time.perf_counter() - tic if config.timing else 0.0
        history.epochs.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / n,
                val_loss=val_loss,
                val_gauc=val_gauc,
                seconds=seconds,
            )
        )
        if config.patience > 0:
            if val_gauc > best_gauc:
                best_gauc = val_gauc
                best_params = {k: p.copy() for k, p in model.params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if config.patience > 0 and best_params is not None:
        model.params = best_params
    return model, history
