"""dinctr: a self-contained CTR prediction engine.

Attention-weighted behavior pooling over user histories, an MLP head
trained from scratch with Adam on binary cross-entropy, grouped ranking
metrics, a synthetic ad-log generator with known ground truth, and a CLI
covering the full generate -> train -> evaluate -> rank pipeline.
"""

from .backend import HAS_NUMBA, USE_NUMBA, active_backend
from .data import (
    EncodedBatch,
    GroundTruth,
    ImpressionRecord,
    SyntheticConfig,
    Vocabulary,
    build_vocab,
    encode,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    split,
)
from .metrics import (
    AdCandidate,
    EvalReport,
    accuracy,
    auc,
    ctr,
    ecpm,
    evaluate,
    gauc,
    log_loss,
    rank_ads,
)
from .model import (
    DinModel,
    ModelConfig,
    attention_weights,
    init_model,
    interaction,
    load_checkpoint,
    pool_user_embedding,
    save_checkpoint,
)
from .numerics import grad_check, make_rng, matmul, sigmoid, softmax
from .optim import AdamState, TrainConfig, TrainHistory, adam_step, bce_loss, l2_penalty, train

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "USE_NUMBA",
    "active_backend",
    "EncodedBatch",
    "GroundTruth",
    "ImpressionRecord",
    "SyntheticConfig",
    "Vocabulary",
    "build_vocab",
    "encode",
    "generate_synthetic",
    "load_jsonl",
    "save_jsonl",
    "split",
    "AdCandidate",
    "EvalReport",
    "accuracy",
    "auc",
    "ctr",
    "ecpm",
    "evaluate",
    "gauc",
    "log_loss",
    "rank_ads",
    "DinModel",
    "ModelConfig",
    "attention_weights",
    "init_model",
    "interaction",
    "load_checkpoint",
    "pool_user_embedding",
    "save_checkpoint",
    "grad_check",
    "make_rng",
    "matmul",
    "sigmoid",
    "softmax",
    "AdamState",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "bce_loss",
    "l2_penalty",
    "train",
    "__version__",
]
