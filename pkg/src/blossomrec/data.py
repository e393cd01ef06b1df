"""Interaction-log ingestion, leave-one-out splitting, batching, and a
synthetic generator with planted block-structured interests.

Input format: one interaction per line, ``user<TAB>item<TAB>timestamp``,
with an optional header line starting with ``user``. Tokens are mapped to
contiguous integer ids starting at 1 in first-seen order (0 is padding)
and the mapping is persisted next to the log.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "InteractionLog",
    "SeqBatch",
    "SplitDataset",
    "load_interactions",
    "write_interactions",
    "leave_one_out_split",
    "make_synthetic",
]


@dataclass
class InteractionLog:
    """Interaction records plus the token -> id maps built at ingestion.

    Per-user sequences are sorted by ascending timestamp, ties keeping the
    input order.
    """

    user_ids: np.ndarray      # (N,) int64, 1-based
    item_ids: np.ndarray      # (N,) int64, 1-based
    timestamps: np.ndarray    # (N,) float64 seconds
    user_map: dict[str, int] = field(default_factory=dict)
    item_map: dict[str, int] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return len(self.user_map)

    @property
    def num_items(self) -> int:
        return len(self.item_map)

    def __len__(self) -> int:
        return len(self.item_ids)

    def sequences(self) -> dict[int, list[int]]:
        """Per-user item sequences in time order (stable under ties)."""
        order = np.argsort(self.timestamps, kind="stable")
        out: dict[int, list[int]] = {}
        for idx in order:
            out.setdefault(int(self.user_ids[idx]), []).append(int(self.item_ids[idx]))
        return out


def _mapping_from_records(records: list[tuple[str, str, float]]) -> InteractionLog:
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    users, items, times = [], [], []
    for user, item, ts in records:
        users.append(user_map.setdefault(user, len(user_map) + 1))
        items.append(item_map.setdefault(item, len(item_map) + 1))
        times.append(ts)
    return InteractionLog(
        user_ids=np.array(users, dtype=np.int64),
        item_ids=np.array(items, dtype=np.int64),
        timestamps=np.array(times, dtype=np.float64),
        user_map=user_map,
        item_map=item_map,
    )


def _persist_mapping(mapping: dict[str, int], path: Path) -> None:
    with path.open("w") as fh:
        for token, idx in mapping.items():
            fh.write(f"{token}\t{idx}\n")


def _parses_as_record(line: str) -> bool:
    """A first line starting with 'user' is data, not a header, if it parses."""
    parts = line.split("\t")
    if len(parts) != 3:
        return False
    try:
        float(parts[2])
    except ValueError:
        return False
    return True


def load_interactions(path: str | Path, persist_mapping: bool = True) -> InteractionLog:
    """Read a TSV interaction log; raises DataError on malformed lines.

    With ``persist_mapping`` (default), the token -> id maps are written
    next to the input as ``<path>.users.tsv`` and ``<path>.items.tsv``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    records: list[tuple[str, str, float]] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if lineno == 1 and line.lower().startswith("user") and not _parses_as_record(line):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected user<TAB>item<TAB>timestamp, got {line!r}")
            try:
                ts = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None
            records.append((parts[0], parts[1], ts))
    if not records:
        raise DataError(f"{path}: no interaction records")
    log = _mapping_from_records(records)
    if persist_mapping:
        _persist_mapping(log.user_map, path.with_name(path.name + ".users.tsv"))
        _persist_mapping(log.item_map, path.with_name(path.name + ".items.tsv"))
    return log


def write_interactions(log: InteractionLog, path: str | Path) -> None:
    """Write a log back out in the same TSV format (token form)."""
    inv_user = {v: k for k, v in log.user_map.items()}
    inv_item = {v: k for k, v in log.item_map.items()}
    with Path(path).open("w") as fh:
        for u, i, t in zip(log.user_ids, log.item_ids, log.timestamps):
            # repr round-trips float64 exactly; %g would clip epoch seconds
            fh.write(f"{inv_user[int(u)]}\t{inv_item[int(i)]}\t{float(t)!r}\n")


@dataclass
class SplitDataset:
    """Leave-one-out split: per retained user, the train prefix plus the
    held-out validation (second-to-last) and test (last) items."""

    users: list[int]
    train: dict[int, list[int]]       # user -> prefix sequence
    valid_target: dict[int, int]
    test_target: dict[int, int]
    num_items: int
    dropped_users: int

    def context(self, user: int, split: str) -> list[int]:
        """History visible when predicting the given split's target."""
        if split == "valid":
            return self.train[user]
        if split == "test":
            return self.train[user] + [self.valid_target[user]]
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")

    def target(self, user: int, split: str) -> int:
        return self.valid_target[user] if split == "valid" else self.test_target[user]

    def history(self, user: int) -> set[int]:
        return set(self.train[user]) | {self.valid_target[user], self.test_target[user]}


def leave_one_out_split(log: InteractionLog, min_len: int = 3) -> SplitDataset:
    """Hold out each user's last item for test and second-to-last for
    validation; users with fewer than ``min_len`` interactions are dropped."""
    train: dict[int, list[int]] = {}
    valid_t: dict[int, int] = {}
    test_t: dict[int, int] = {}
    users: list[int] = []
    dropped = 0
    for user, seq in log.sequences().items():
        if len(seq) < min_len:
            dropped += 1
            continue
        users.append(user)
        train[user] = seq[:-2]
        valid_t[user] = seq[-2]
        test_t[user] = seq[-1]
    if not users:
        raise DataError(f"no users with at least {min_len} interactions")
    return SplitDataset(users=users, train=train, valid_target=valid_t,
                        test_target=test_t, num_items=log.num_items, dropped_users=dropped)


@dataclass
class SeqBatch:
    """Left-padded id matrix with true lengths and per-sequence targets."""

    ids: np.ndarray       # (B, L) int64, 0-padded at the front
    lengths: np.ndarray   # (B,) int64
    targets: np.ndarray   # (B,) int64, 0 when absent

    @property
    def total_len(self) -> int:
        return self.ids.shape[1]

    @classmethod
    def from_sequences(cls, seqs: list[list[int]], max_len: int,
                       targets: list[int] | None = None) -> "SeqBatch":
        """Pad/truncate sequences, keeping the most recent ``max_len`` items."""
        trimmed = [s[-max_len:] for s in seqs]
        width = max((len(s) for s in trimmed), default=1)
        width = max(width, 1)
        ids = np.zeros((len(trimmed), width), dtype=np.int64)
        lengths = np.zeros(len(trimmed), dtype=np.int64)
        for row, s in enumerate(trimmed):
            if s:
                ids[row, width - len(s):] = s
            lengths[row] = len(s)
        tgt = np.zeros(len(trimmed), dtype=np.int64) if targets is None else np.asarray(targets, dtype=np.int64)
        return cls(ids=ids, lengths=lengths, targets=tgt)


def make_synthetic(num_users: int, num_items: int, blocks_per_user: int,
                   block_len: int, noise_rate: float, seed: int) -> InteractionLog:
    """Generate sequences made of contiguous interest blocks.

    Each block draws its items from one small item cluster (contiguous
    ranges of the raw item space); a ``noise_rate`` fraction of positions is
    replaced by uniform random items. Deterministic per seed.
    """
    if min(num_users, num_items, blocks_per_user, block_len) < 1:
        raise DataError("synthetic generator parameters must be positive")
    if not 0.0 <= noise_rate <= 1.0:
        raise DataError(f"noise_rate must lie in [0, 1], got {noise_rate}")
    rng = np.random.default_rng(seed)
    cluster_width = max(2, min(10, num_items // max(1, blocks_per_user * 2)))
    records: list[tuple[str, str, float]] = []
    for u in range(1, num_users + 1):
        ts = 0.0
        for _ in range(blocks_per_user):
            start = int(rng.integers(1, max(2, num_items - cluster_width + 2)))
            for _ in range(block_len):
                if noise_rate > 0.0 and rng.random() < noise_rate:
                    item = int(rng.integers(1, num_items + 1))
                else:
                    item = start + int(rng.integers(0, cluster_width))
                records.append((f"u{u}", f"i{item}", ts))
                ts += 1.0
    return _mapping_from_records(records)
