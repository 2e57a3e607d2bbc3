"""The attention-pooled CTR model and its hand-derived backward pass.

Architecture, per impression: look up the behavior embeddings V_i and the
ad embedding V_a from one shared item table; score each behavior by its
affinity to the ad, s_i = (V_i . V_a) / temperature; turn the scores into
weights with a masked softmax (or uniform 1/N weights for the attention-free
base model); pool the history into a user vector V_u = sum_i w_i V_i; feed
concat(V_u, V_a, V_u * V_a) to a small rectifier MLP ending in a sigmoid
unit. The elementwise-product block hands the affinity signal V_u . V_a to
the first layer directly (its coordinates sum to the dot product).

Both model flavors share identical parameter shapes; only the pooling
differs, so attention is the lone experimental variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import EncodedBatch, Vocabulary
from .numerics import sigmoid

PAD_ROW = 0


@dataclass
class ModelConfig:
    item_vocab: int
    user_vocab: int
    dim: int = 8
    hidden: tuple[int, ...] = (64, 32)
    max_seq_len: int = 32
    temperature: float = 1.0
    use_attention: bool = True
    use_user_profile: bool = False

    def validate(self) -> None:
        if self.item_vocab < 2 or self.user_vocab < 2:
            raise ValueError("vocab sizes must include the reserved indices (>= 2)")
        if self.dim < 1 or self.max_seq_len < 1:
            raise ValueError("dim and max_seq_len must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")

    @property
    def mlp_input_dim(self) -> int:
        base = 3 * self.dim
        return base + (self.dim if self.use_user_profile else 0)

    def to_dict(self) -> dict:
        return {
            "item_vocab": self.item_vocab,
            "user_vocab": self.user_vocab,
            "dim": self.dim,
            "hidden": list(self.hidden),
            "max_seq_len": self.max_seq_len,
            "temperature": self.temperature,
            "use_attention": self.use_attention,
            "use_user_profile": self.use_user_profile,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            item_vocab=int(obj["item_vocab"]),
            user_vocab=int(obj["user_vocab"]),
            dim=int(obj["dim"]),
            hidden=tuple(int(h) for h in obj["hidden"]),
            max_seq_len=int(obj["max_seq_len"]),
            temperature=float(obj["temperature"]),
            use_attention=bool(obj["use_attention"]),
            use_user_profile=bool(obj["use_user_profile"]),
        )


@dataclass
class ForwardCache:
    """Intermediates saved by forward() for the matching backward()."""

    batch: EncodedBatch
    behav_emb: np.ndarray  # (B, T, d)
    ad_emb: np.ndarray  # (B, d)
    weights: np.ndarray  # (B, T)
    pooled: np.ndarray  # (B, d)
    x: np.ndarray  # (B, F) MLP input
    pre_acts: list[np.ndarray]  # per layer, pre-activation
    post_acts: list[np.ndarray]  # per layer input (post previous activation)
    probs: np.ndarray  # (B,)


@dataclass
class Gradients:
    """Parameter gradients plus the embedding rows the batch touched.

    ``dense`` mirrors the parameter dict shapes. For embedding tables only
    the listed ``touched_rows`` carry meaning; everything else is zero and
    the optimizer must not update it (lazy/sparse semantics).
    """

    dense: dict[str, np.ndarray]
    touched_rows: dict[str, np.ndarray] = field(default_factory=dict)


class DinModel:
    """Embedding tables plus MLP head; attention toggled by config."""

    EMBEDDING_PARAMS = ("item_emb", "user_emb")

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        config.validate()
        self.config = config
        self.params = params
        self._check_shapes()

    # -- construction -----------------------------------------------------

    def _check_shapes(self) -> None:
        c = self.config
        expect: dict[str, tuple[int, ...]] = {"item_emb": (c.item_vocab, c.dim)}
        if c.use_user_profile:
            expect["user_emb"] = (c.user_vocab, c.dim)
        dims = [c.mlp_input_dim, *c.hidden, 1]
        for i in range(len(dims) - 1):
            expect[f"w{i}"] = (dims[i], dims[i + 1])
            expect[f"b{i}"] = (dims[i + 1],)
        if set(expect) != set(self.params):
            raise ValueError(f"parameter keys {sorted(self.params)} != expected {sorted(expect)}")
        for name, shape in expect.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden) + 1

    def copy(self) -> "DinModel":
        return DinModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def flat_params(self) -> np.ndarray:
        """All parameters concatenated in key-insertion order."""
        return np.concatenate([self.params[k].ravel() for k in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for k in self.params:
            size = self.params[k].size
            self.params[k][...] = flat[offset : offset + size].reshape(self.params[k].shape)
            offset += size
        if offset != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {offset}")

    # -- forward ----------------------------------------------------------

    def _validate_indices(self, batch: EncodedBatch) -> None:
        c = self.config
        for name, idx, bound in (
            ("ad", batch.ad_idx, c.item_vocab),
            ("behavior", batch.behavior_idx, c.item_vocab),
            ("user", batch.user_idx, c.user_vocab),
        ):
            if idx.size and (idx.min() < 0 or idx.max() >= bound):
                bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
                raise IndexError(f"{name} index {bad} out of range for vocab of {bound}")

    def forward(self, batch: EncodedBatch) -> tuple[np.ndarray, ForwardCache]:
        """Per-record click probabilities plus cached intermediates."""
        self._validate_indices(batch)
        c = self.config
        item = self.params["item_emb"]
        behav = item[batch.behavior_idx]  # (B, T, d) gather
        ad = item[batch.ad_idx]  # (B, d)
        mask = batch.mask
        if c.use_attention:
            scores = kernels.attention_scores(behav, ad, mask, 1.0 / c.temperature)
            weights = kernels.masked_softmax(scores, mask)
        else:
            weights = kernels.uniform_weights(mask)
        pooled = kernels.weighted_pool(behav, weights)

        blocks = [pooled, ad, pooled * ad]
        if c.use_user_profile:
            blocks.append(self.params["user_emb"][batch.user_idx])
        x = np.concatenate(blocks, axis=1)

        pre_acts: list[np.ndarray] = []
        post_acts: list[np.ndarray] = []
        h = x
        for i in range(self.n_layers):
            post_acts.append(h)
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            pre_acts.append(z)
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0)
        logits = pre_acts[-1][:, 0]
        probs = sigmoid(logits)
        cache = ForwardCache(
            batch=batch,
            behav_emb=behav,
            ad_emb=ad,
            weights=weights,
            pooled=pooled,
            x=x,
            pre_acts=pre_acts,
            post_acts=post_acts,
            probs=probs,
        )
        return probs, cache

    def predict(self, batch: EncodedBatch) -> np.ndarray:
        return self.forward(batch)[0]

    # -- backward ---------------------------------------------------------

    def backward(self, cache: Optional[ForwardCache], dprobs: np.ndarray) -> Gradients:
        """Analytic gradients for every parameter touched by the batch.

        ``dprobs`` is dLoss/dProb per record. The attention path carries the
        softmax Jacobian into both the behavior and the ad embeddings; the
        padding row's gradient is forced to zero.
        """
        if cache is None:
            raise ValueError("backward requires the forward cache for this batch")
        c = self.config
        batch = cache.batch
        B = len(batch)
        d = c.dim
        dprobs = np.asarray(dprobs, dtype=np.float64)
        if dprobs.shape != (B,):
            raise ValueError(f"upstream gradient shape {dprobs.shape} != ({B},)")

        dense: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.params.items()}

        p = cache.probs
        dlogit = dprobs * p * (1.0 - p)
        g = dlogit[:, None]
        for i in range(self.n_layers - 1, -1, -1):
            dense[f"w{i}"] = cache.post_acts[i].T @ g
            dense[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"w{i}"].T
            if i > 0:
                g = g * (cache.pre_acts[i - 1] > 0.0)
        dx = g

        dpooled = dx[:, :d] + dx[:, 2 * d : 3 * d] * cache.ad_emb
        dad = dx[:, d : 2 * d] + dx[:, 2 * d : 3 * d] * cache.pooled

        dweights, dbehav = kernels.pool_backward(cache.behav_emb, cache.weights, dpooled)
        if c.use_attention:
            dscores = kernels.softmax_backward(cache.weights, dweights)
            dbehav_att, dad_att = kernels.scores_backward(
                cache.behav_emb, cache.ad_emb, dscores, 1.0 / c.temperature
            )
            dbehav = dbehav + dbehav_att
            dad = dad + dad_att

        live = batch.mask.reshape(-1)
        flat_idx = batch.behavior_idx.reshape(-1)[live]
        flat_grad = dbehav.reshape(-1, d)[live]
        item_grad = dense["item_emb"]
        kernels.scatter_add_rows(item_grad, flat_idx, np.ascontiguousarray(flat_grad))
        kernels.scatter_add_rows(item_grad, batch.ad_idx, np.ascontiguousarray(dad))
        item_grad[PAD_ROW, :] = 0.0
        touched = {
            "item_emb": np.unique(np.concatenate([flat_idx, batch.ad_idx])),
        }

        if c.use_user_profile:
            duser = dx[:, 3 * d :]
            kernels.scatter_add_rows(dense["user_emb"], batch.user_idx, np.ascontiguousarray(duser))
            dense["user_emb"][PAD_ROW, :] = 0.0
            touched["user_emb"] = np.unique(batch.user_idx)

        return Gradients(dense=dense, touched_rows=touched)


# ---------------------------------------------------------------------------
# Record-level operations (used directly for single impressions and as the
# reference semantics the batched kernels must reproduce)
# ---------------------------------------------------------------------------


def attention_weights(behavior_embs, ad_emb, mask=None, temperature: float = 1.0) -> np.ndarray:
    """Affinity-softmax weights for one behavior sequence.

    w = softmax over unmasked i of (V_i . V_a) / temperature. Padded slots
    come back as exact zeros.
    """
    behav = np.asarray(behavior_embs, dtype=np.float64)
    ad = np.asarray(ad_emb, dtype=np.float64)
    if behav.ndim != 2 or ad.ndim != 1 or behav.shape[1] != ad.shape[0]:
        raise ValueError(f"shape mismatch: behaviors {behav.shape} vs ad {ad.shape}")
    if mask is None:
        mask = np.ones(behav.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no behaviors: attention needs at least one unmasked slot")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    scores = behav @ ad / temperature
    out = np.zeros_like(scores)
    live = scores[mask]
    z = np.exp(live - live.max())
    out[mask] = z / z.sum()
    return out


def pool_user_embedding(behavior_embs, weights) -> np.ndarray:
    """Weighted sum of behavior embeddings, V_u = sum_i w_i V_i."""
    behav = np.asarray(behavior_embs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if behav.ndim != 2 or w.shape != (behav.shape[0],):
        raise ValueError(f"shape mismatch: behaviors {behav.shape} vs weights {w.shape}")
    return w @ behav


def interaction(v_u, v_a) -> float:
    """User-ad affinity, the dot product V_u . V_a.

    Equals the sum of the elementwise-product block fed to the MLP; exposed
    as a standalone diagnostic.
    """
    u = np.asarray(v_u, dtype=np.float64)
    a = np.asarray(v_a, dtype=np.float64)
    if u.shape != a.shape or u.ndim != 1:
        raise ValueError(f"shape mismatch: {u.shape} vs {a.shape}")
    return float(u @ a)


def init_model(config: ModelConfig, rng: np.random.Generator) -> DinModel:
    """Fresh parameters: embeddings ~ U(-0.05, 0.05), MLP weights Glorot
    uniform, biases zero, padding rows pinned to zero.

    The draw order (item table, user table, then layers front to back) is
    fixed, so one seed yields bitwise-identical models.
    """
    config.validate()
    params: dict[str, np.ndarray] = {}
    params["item_emb"] = rng.uniform(-0.05, 0.05, size=(config.item_vocab, config.dim))
    params["item_emb"][PAD_ROW, :] = 0.0
    if config.use_user_profile:
        params["user_emb"] = rng.uniform(-0.05, 0.05, size=(config.user_vocab, config.dim))
        params["user_emb"][PAD_ROW, :] = 0.0
    dims = [config.mlp_input_dim, *config.hidden, 1]
    for i in range(len(dims) - 1):
        limit = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        params[f"w{i}"] = rng.uniform(-limit, limit, size=(dims[i], dims[i + 1]))
        params[f"b{i}"] = np.zeros(dims[i + 1])
    return DinModel(config, params)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
#
# Layout (version 1):
#   magic line  b"DINCTR-CKPT v1\n"
#   header line: canonical JSON (sorted keys, compact separators) + b"\n"
#                with config, vocab token lists, optional run metadata, and
#                an array manifest (name + shape, in parameter order)
#   payload:     the manifest's arrays as little-endian float64, C order
#
# Canonical JSON plus a fixed payload order makes save -> load -> save
# byte-identical.

_CKPT_MAGIC = b"DINCTR-CKPT v1\n"


def save_checkpoint(
    model: DinModel,
    user_vocab: Vocabulary,
    item_vocab: Vocabulary,
    path,
    run_config: Optional[dict] = None,
) -> None:
    header = {
        "format": "dinctr-checkpoint",
        "version": 1,
        "config": model.config.to_dict(),
        "user_tokens": user_vocab.tokens[2:],
        "item_tokens": item_vocab.tokens[2:],
        "run_config": run_config,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(blob)
        fh.write(b"\n")
        for key in model.params:
            fh.write(model.params[key].astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path) -> tuple[DinModel, Vocabulary, Vocabulary, Optional[dict]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a dinctr checkpoint (bad magic)")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: corrupt checkpoint header") from exc
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        config = ModelConfig.from_dict(header["config"])
        params: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint payload")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    model = DinModel(config, params)
    user_vocab = Vocabulary.from_real_tokens(header["user_tokens"])
    item_vocab = Vocabulary.from_real_tokens(header["item_tokens"])
    return model, user_vocab, item_vocab, header.get("run_config")
