"""The full sequential recommender: embedding -> encoder stack -> scoring
over the item vocabulary, with next-item cross-entropy training.

Scoring ties the output weights to the input embedding table: the score of
item v at step t is the dot product of the step-t hidden state with v's
embedding row. Training is Adam on the softmax cross-entropy of every
observed next item, with early stopping on validation NDCG@k.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AttentionConfig, RunConfig
from .data import SeqBatch, SplitDataset
from .embedding import EmbeddingTable, RoPECache, embed
from .errors import CheckpointError, DataError
from .fusion import BlossomLayerParams, SeqContext, encode
from .metrics import EvalResult, aggregate, rank_metrics, sample_negatives
from .stis import batch_stis_masks
from .tensor import Tensor, log_sum_exp, matmul, no_grad, take_along_last, transpose, zero_grads

__all__ = ["Model", "TrainState", "Adam", "item_scores", "sequence_loss", "train",
           "evaluate", "evaluate_popularity", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_VERSION = 1


class Model:
    """BlossomRec model state: embeddings, N encoder layers, output affine."""

    def __init__(self, num_items: int, cfg: AttentionConfig, num_layers: int,
                 seed: int, max_len: int = 200, dropout: float = 0.0, pathway: str = "both"):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.num_items = num_items
        self.num_layers = num_layers
        self.max_len = max_len
        self.dropout = dropout
        self.pathway = pathway
        self.seed = seed
        self.table = EmbeddingTable(num_items, cfg.d_model, rng)
        self.layers = [BlossomLayerParams.init(cfg, rng) for _ in range(num_layers)]
        self.w_n = Tensor(np.eye(cfg.d_model), requires_grad=True)
        self.b_n = Tensor(np.zeros(cfg.d_model), requires_grad=True)
        self.rope = RoPECache(cfg.d_head, max_len + 1)

    def parameters(self) -> dict[str, Tensor]:
        named = {"embedding": self.table.weights, "w_n": self.w_n, "b_n": self.b_n}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                named[f"layer{i}.{name}"] = p
        return named

    def forward(self, batch: SeqBatch, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Hidden states for every position, (B, L, d_model)."""
        ctx = SeqContext.from_lengths(batch.lengths, batch.total_len)
        stis_mask = batch_stis_masks(batch.lengths, batch.total_len, self.cfg)
        embedded = embed(batch.ids, self.table)
        return encode(embedded, self.layers, self.w_n, self.b_n, self.cfg, ctx,
                      stis_mask, self.rope, dropout_rate=self.dropout,
                      training=training, rng=rng, pathway=self.pathway)

    def last_hidden(self, batch: SeqBatch) -> np.ndarray:
        """Evaluation-mode hidden state of each sequence's newest position."""
        with no_grad():
            return self.forward(batch).data[:, -1, :]

    def config_dict(self) -> dict:
        return {
            "num_items": self.num_items,
            "num_layers": self.num_layers,
            "max_len": self.max_len,
            "dropout": self.dropout,
            "pathway": self.pathway,
            "seed": self.seed,
            "attention": {
                "block_size": self.cfg.block_size, "stride": self.cfg.stride,
                "sel_block_size": self.cfg.sel_block_size, "top_k": self.cfg.top_k,
                "win": self.cfg.win, "blk": self.cfg.blk, "heads": self.cfg.heads,
                "kv_groups": self.cfg.kv_groups, "d_model": self.cfg.d_model,
                "d_head": self.cfg.d_head,
            },
        }

    @classmethod
    def from_config_dict(cls, meta: dict) -> "Model":
        cfg = AttentionConfig(**meta["attention"])
        return cls(meta["num_items"], cfg, meta["num_layers"], meta["seed"],
                   max_len=meta["max_len"], dropout=meta["dropout"], pathway=meta["pathway"])


def item_scores(hidden: Tensor | np.ndarray, table: EmbeddingTable) -> Tensor:
    """Dot-product scores of one hidden vector against every real item.

    Returns shape (num_items,); entry i scores item id i + 1 (the padding
    row never participates in ranking).
    """
    h = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    col = h.reshape((h.shape[-1], 1))
    return matmul(table.item_vectors(), col).reshape((table.num_items,))


def cross_entropy(scores: Tensor, target_item: int) -> Tensor:
    """Negative log-likelihood of the target under a softmax over all items.

    ``scores`` indexes items 1..num_items at offsets 0..num_items-1.
    """
    if target_item < 1 or target_item > scores.shape[0]:
        raise DataError(f"loss target must be a real item id, got {target_item}")
    lse = log_sum_exp(scores.reshape((1, scores.shape[0])), axis=-1)
    return (lse - scores[target_item - 1: target_item]).reshape(())


def sequence_loss(model: Model, batch: SeqBatch, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Mean next-item cross-entropy over every observed transition.

    Position p contributes -log softmax(h_p . E)[id at p+1] whenever both
    positions hold real items; the final real position of each sequence has
    no in-batch successor and is skipped.
    """
    hidden = model.forward(batch, training=training, rng=rng)
    ids = batch.ids
    valid = (ids[:, :-1] > 0) & (ids[:, 1:] > 0)
    if not valid.any():
        raise DataError("batch contains no next-item transitions")
    logits = matmul(hidden, transpose(model.table.item_vectors(), (1, 0)))  # (B, L, V)
    next_ids = np.where(valid, ids[:, 1:] - 1, 0)
    picked = take_along_last(logits[:, :-1, :], next_ids)      # (B, L-1)
    lse = log_sum_exp(logits[:, :-1, :], axis=-1)              # (B, L-1)
    per_pos = (lse - picked) * Tensor(valid.astype(np.float64))
    return per_pos.sum() * (1.0 / float(valid.sum()))


class Adam:
    """Adam with bias correction and global-norm gradient clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 5.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        b1t = 1.0 - self.beta1**self.step_count
        b2t = 1.0 - self.beta2**self.step_count
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / b1t
            v_hat = self.v[k] / b2t
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    """Trajectory bookkeeping returned by ``train``."""

    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = 0
    seed: int = 0
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def _train_batches(dataset: SplitDataset, order: np.ndarray, batch_size: int,
                   max_len: int) -> list[SeqBatch]:
    # Single-item prefixes hold no transition to learn from.
    users = [u for u in (dataset.users[i] for i in order) if len(dataset.train[u]) >= 2]
    batches = []
    for lo in range(0, len(users), batch_size):
        chunk = users[lo: lo + batch_size]
        seqs = [dataset.train[u] for u in chunk]
        batches.append(SeqBatch.from_sequences(seqs, max_len))
    return batches


def train(model: Model, dataset: SplitDataset, run: RunConfig,
          log_line=None) -> TrainState:
    """Minibatch Adam on next-item loss with early stopping on NDCG@k.

    ``log_line``, when given, receives one dict per epoch (epoch number,
    mean train loss, validation metrics). The model is left holding the
    best-validation parameters. Fully deterministic for a fixed seed.
    """
    if not dataset.users:
        raise DataError("cannot train on an empty dataset")
    params = model.parameters()
    opt = Adam(params, lr=run.lr)
    state = TrainState(seed=run.seed)
    rng = np.random.default_rng(run.seed)
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    patience_left = run.patience
    for epoch in range(1, run.epochs + 1):
        order = rng.permutation(len(dataset.users))
        batches = _train_batches(dataset, order, run.batch_size, run.max_len)
        if not batches:
            raise DataError("no training sequence holds a next-item transition")
        losses = []
        for minibatch in batches:
            zero_grads(params)
            loss = sequence_loss(model, minibatch, training=True, rng=rng)
            if not np.isfinite(loss.data):
                raise DataError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            model.table.clamp_padding()
            opt.step()
            model.table.clamp_padding()
            losses.append(float(loss.data))
        result = evaluate(model, dataset, split="valid", k=run.eval_k,
                          n_negatives=run.negatives, seed=run.seed)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            f"valid_ndcg@{run.eval_k}": result.ndcg_at_k,
            f"valid_recall@{run.eval_k}": result.recall_at_k,
            f"valid_mrr@{run.eval_k}": result.mrr_at_k,
        }
        state.history.append(record)
        if log_line is not None:
            log_line(record)
        state.epoch = epoch
        if result.ndcg_at_k > state.best_metric:
            state.best_metric = result.ndcg_at_k
            state.best_epoch = epoch
            best_snapshot = {k: p.data.copy() for k, p in params.items()}
            patience_left = run.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                state.stopped_early = True
                break
    for k, p in params.items():
        p.data = best_snapshot[k].copy()
    return state


def evaluate(model: Model, dataset: SplitDataset, split: str = "valid", k: int = 10,
             n_negatives: int = 100, seed: int = 0, batch_size: int = 128) -> EvalResult:
    """Sampled-negative ranking evaluation over every retained user."""
    scorer = _ModelScorer(model, dataset, split, batch_size)
    return _evaluate_with(scorer, dataset, split, k, n_negatives, seed)


def evaluate_popularity(dataset: SplitDataset, split: str = "valid", k: int = 10,
                        n_negatives: int = 100, seed: int = 0) -> EvalResult:
    """Baseline: score every item by its training-set interaction count."""
    counts = np.zeros(dataset.num_items + 1)
    for seq in dataset.train.values():
        for item in seq:
            counts[item] += 1

    def scorer(user: int, items: np.ndarray) -> np.ndarray:
        return counts[items]

    return _evaluate_with(scorer, dataset, split, k, n_negatives, seed)


class _ModelScorer:
    """Batches forward passes, then scores candidate items per user."""

    def __init__(self, model: Model, dataset: SplitDataset, split: str, batch_size: int):
        self.model = model
        self.hidden: dict[int, np.ndarray] = {}
        users = dataset.users
        for lo in range(0, len(users), batch_size):
            chunk = users[lo: lo + batch_size]
            contexts = [dataset.context(u, split) for u in chunk]
            batch = SeqBatch.from_sequences(contexts, model.max_len,
                                            targets=[dataset.target(u, split) for u in chunk])
            h = self.model.last_hidden(batch)
            for row, u in enumerate(chunk):
                self.hidden[u] = h[row]

    def __call__(self, user: int, items: np.ndarray) -> np.ndarray:
        vectors = self.model.table.weights.data[items]
        return vectors @ self.hidden[user]


def _evaluate_with(scorer, dataset: SplitDataset, split: str, k: int,
                   n_negatives: int, seed: int) -> EvalResult:
    per_user = []
    skipped = 0
    for user in dataset.users:
        target = dataset.target(user, split)
        history = dataset.history(user)
        try:
            negatives = sample_negatives(history, dataset.num_items, target,
                                         n_negatives, seed, user)
        except ValueError:
            skipped += 1
            continue
        items = np.concatenate([[target], negatives]).astype(np.int64)
        scores = scorer(user, items)
        per_user.append(rank_metrics(float(scores[0]), scores[1:], k))
    return aggregate(per_user, k, n_negatives, skipped)


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write parameters + config as a versioned npz archive."""
    arrays = {f"param:{k}": p.data for k, p in model.parameters().items()}
    meta = {"version": CHECKPOINT_VERSION, "config": model.config_dict()}
    np.savez(Path(path), __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> Model:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in archive:
        raise CheckpointError(f"{path} is not a recognized checkpoint (missing header)")
    meta = json.loads(archive["__meta__"].tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} unsupported")
    model = Model.from_config_dict(meta["config"])
    params = model.parameters()
    for name, p in params.items():
        key = f"param:{name}"
        if key not in archive:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        stored = archive[key]
        if stored.shape != p.data.shape:
            raise CheckpointError(f"parameter {name} has shape {stored.shape}, expected {p.data.shape}")
        p.data = stored.astype(np.float64).copy()
    return model
