"""Numba vs NumPy benchmark for the hot attention/pooling kernels.

Times each kernel variant on realistic batch shapes, then a fused
forward+backward composite, and finally one full training epoch per
backend. Run from the repository root:

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --batch 512 --seq 32 --dim 8
"""

import argparse
import time

import numpy as np

from dinctr import kernels
from dinctr.numerics import make_rng

if not kernels.HAS_NUMBA:
    raise SystemExit("numba is not installed; nothing to compare (NumPy path is the only one)")

NP = {
    "attention_scores": kernels._np_attention_scores,
    "masked_softmax": kernels._np_masked_softmax,
    "uniform_weights": kernels._np_uniform_weights,
    "weighted_pool": kernels._np_weighted_pool,
    "pool_backward": kernels._np_pool_backward,
    "softmax_backward": kernels._np_softmax_backward,
    "scores_backward": kernels._np_scores_backward,
}
NB = {
    "attention_scores": kernels._nb_attention_scores,
    "masked_softmax": kernels._nb_masked_softmax,
    "uniform_weights": kernels._nb_uniform_weights,
    "weighted_pool": kernels._nb_weighted_pool,
    "pool_backward": kernels._nb_pool_backward,
    "softmax_backward": kernels._nb_softmax_backward,
    "scores_backward": kernels._nb_scores_backward,
}


def timeit(fn, args, n_iter, warmup=3):
    for _ in range(warmup):
        fn(*args)
    tic = time.perf_counter()
    for _ in range(n_iter):
        fn(*args)
    return (time.perf_counter() - tic) / n_iter


def make_case(rng, B, T, d):
    behav = rng.normal(size=(B, T, d))
    ad = rng.normal(size=(B, d))
    mask = np.zeros((B, T), dtype=bool)
    for b in range(B):
        mask[b, : int(rng.integers(1, T + 1))] = True
    behav[~mask] = 0.0
    return behav, ad, mask


def attention_fwd_bwd(impl, behav, ad, mask, dpooled):
    scores = impl["attention_scores"](behav, ad, mask, 1.0)
    weights = impl["masked_softmax"](scores, mask)
    pooled = impl["weighted_pool"](behav, weights)
    dweights, dbehav = impl["pool_backward"](behav, weights, dpooled)
    dscores = impl["softmax_backward"](weights, dweights)
    dbehav_att, dad = impl["scores_backward"](behav, ad, dscores, 1.0)
    return pooled, dbehav + dbehav_att, dad


def bench_kernels(B, T, d, n_iter):
    rng = make_rng(0)
    behav, ad, mask = make_case(rng, B, T, d)
    scores = NP["attention_scores"](behav, ad, mask, 1.0)
    weights = NP["masked_softmax"](scores, mask)
    dpooled = rng.normal(size=(B, d))

    cases = {
        "attention_scores": (behav, ad, mask, 1.0),
        "masked_softmax": (scores, mask),
        "uniform_weights": (mask,),
        "weighted_pool": (behav, weights),
        "pool_backward": (behav, weights, dpooled),
        "softmax_backward": (weights, weights * 0.1),
        "scores_backward": (behav, ad, weights * 0.1, 1.0),
    }

    print(f"\nkernels at batch={B} seq={T} dim={d} ({n_iter} iterations)")
    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, args in cases.items():
        t_np = timeit(NP[name], args, n_iter)
        t_nb = timeit(NB[name], args, n_iter)
        print(f"{name:<20} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us {t_np / t_nb:>8.1f}x")

    t_np = timeit(lambda *a: attention_fwd_bwd(NP, *a), (behav, ad, mask, dpooled), n_iter)
    t_nb = timeit(lambda *a: attention_fwd_bwd(NB, *a), (behav, ad, mask, dpooled), n_iter)
    print(f"{'fused fwd+bwd':<20} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us {t_np / t_nb:>8.1f}x")

    out_np = attention_fwd_bwd(NP, behav, ad, mask, dpooled)
    out_nb = attention_fwd_bwd(NB, behav, ad, mask, dpooled)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(out_np, out_nb))
    print(f"max |numpy - numba| over fused outputs: {worst:.2e}")


def bench_training_epoch(B):
    """One epoch on a synthetic set, per backend, via the actual model code."""
    import importlib
    import os

    from dinctr import data as D
    from dinctr.cli import RunConfig

    timings = {}
    for backend in ("numpy", "numba"):
        os.environ["DINCTR_BACKEND"] = backend
        import dinctr.backend
        import dinctr.kernels
        import dinctr.model

        importlib.reload(dinctr.backend)
        importlib.reload(dinctr.kernels)
        importlib.reload(dinctr.model)
        from dinctr.model import init_model
        from dinctr.numerics import make_rng
        from dinctr.optim import TrainConfig, train

        cfg = RunConfig(impressions=10_000, epochs=1, batch_size=B)
        records, _ = D.generate_synthetic(cfg.synthetic_config())
        tr, vr = D.split(records, "temporal", 0.2, 1)
        users, items = D.build_vocab(records)
        tb, _ = D.encode(tr, users, items, cfg.max_seq_len)
        vb, _ = D.encode(vr, users, items, cfg.max_seq_len)
        model = init_model(cfg.model_config(items.size, users.size), make_rng(1, stream=1))
        dinctr.kernels.warmup()
        tic = time.perf_counter()
        train(model, tb, vb, TrainConfig(epochs=1, batch_size=B, lr=1e-3, seed=1, timing=False))
        timings[backend] = time.perf_counter() - tic

    print(f"\nfull training epoch, 8000 records, batch={B}")
    print(f"{'numpy':>12} {'numba':>12} {'speedup':>9}")
    print(f"{timings['numpy'] * 1e3:>10.0f}ms {timings['numba'] * 1e3:>10.0f}ms "
          f"{timings['numpy'] / timings['numba']:>8.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--seq", type=int, default=32)
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--iters", type=int, default=200)
    args = parser.parse_args()

    kernels.warmup()
    bench_kernels(args.batch, args.seq, args.dim, args.iters)
    bench_kernels(args.batch, args.seq, 64, args.iters)
    bench_training_epoch(args.batch)


if __name__ == "__main__":
    main()
