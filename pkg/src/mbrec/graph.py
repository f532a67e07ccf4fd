"""Multi-behavior interaction tensor: ingestion, adjacency, neighbor queries, splits."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from .ndcore import ContractError


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class BehaviorVocab:
    names: tuple[str, ...]
    target_index: int

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"behavior names must be unique: {self.names}")
        if not 0 <= self.target_index < len(self.names):
            raise ValueError(f"target index {self.target_index} out of range")

    @classmethod
    def from_names(cls, names: Iterable[str], target: str) -> "BehaviorVocab":
        names = tuple(names)
        if target not in names:
            raise ValueError(f"target behavior {target!r} not in vocabulary {list(names)}")
        return cls(names, names.index(target))

    @property
    def target(self) -> str:
        return self.names[self.target_index]

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class InteractionTensor:
    """Binary I x J x K tensor stored as a deduplicated edge list.

    ``order`` carries the sort key used for "last interaction" (latest
    timestamp when given, otherwise the input position). ``seq`` is the input
    position of the first occurrence and fixes the serialization order.
    Per-behavior CSR views are built lazily and cached.
    """

    num_users: int
    num_items: int
    num_behaviors: int
    users: np.ndarray
    items: np.ndarray
    behaviors: np.ndarray
    order: np.ndarray
    seq: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_edges(cls, num_users, num_items, num_behaviors, users, items, behaviors, order=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        behaviors = np.asarray(behaviors, dtype=np.int64)
        seq = np.arange(len(users), dtype=np.int64)
        order = seq.astype(np.float64) if order is None else np.asarray(order, dtype=np.float64)
        if len(users):
            if users.min() < 0 or users.max() >= num_users or items.min() < 0 or items.max() >= num_items:
                raise ContractError("edge index out of range")
            if behaviors.min() < 0 or behaviors.max() >= num_behaviors:
                raise ContractError("behavior index out of range")
        key = (behaviors * num_users + users) * num_items + items
        uniq, inv = np.unique(key, return_inverse=True)
        first = np.full(len(uniq), len(key), dtype=np.int64)
        np.minimum.at(first, inv, seq)
        latest = np.full(len(uniq), -np.inf)
        np.maximum.at(latest, inv, order)
        srt = np.argsort(first, kind="stable")
        pick = first[srt]
        return cls(int(num_users), int(num_items), int(num_behaviors),
                   users[pick], items[pick], behaviors[pick], latest[srt], np.arange(len(pick)))

    @property
    def num_edges(self) -> int:
        return len(self.users)

    def edge_count(self, k: int) -> int:
        return int(np.sum(self.behaviors == k))

    def adjacency(self, k: int) -> sp.csr_matrix:
        """User x item 0/1 matrix for behavior ``k``."""
        key = ("ui", k)
        if key not in self._cache:
            m = self.behaviors == k
            data = np.ones(int(m.sum()))
            self._cache[key] = sp.csr_matrix(
                (data, (self.users[m], self.items[m])), shape=(self.num_users, self.num_items))
        return self._cache[key]

    def adjacency_t(self, k: int) -> sp.csr_matrix:
        """Item x user 0/1 matrix for behavior ``k``."""
        key = ("iu", k)
        if key not in self._cache:
            self._cache[key] = self.adjacency(k).T.tocsr()
        return self._cache[key]

    def user_items(self, k: int) -> list[np.ndarray]:
        a = self.adjacency(k)
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.num_users)]

    def item_users(self, k: int) -> list[np.ndarray]:
        a = self.adjacency_t(k)
        return [a.indices[a.indptr[j]:a.indptr[j + 1]] for j in range(self.num_items)]

    def user_degree(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_degree(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def edge_set(self) -> set[tuple[int, int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist(), self.behaviors.tolist()))

    def dense(self) -> np.ndarray:
        x = np.zeros((self.num_users, self.num_items, self.num_behaviors))
        x[self.users, self.items, self.behaviors] = 1.0
        return x

    def select(self, mask: np.ndarray) -> "InteractionTensor":
        """Same index space, keeping only edges where ``mask`` is true."""
        return InteractionTensor(self.num_users, self.num_items, self.num_behaviors,
                                 self.users[mask], self.items[mask], self.behaviors[mask],
                                 self.order[mask], self.seq[mask])

    def only_behaviors(self, keep: list[int]) -> "InteractionTensor":
        """Restrict to the listed behaviors, re-indexed in the given order."""
        remap = np.full(self.num_behaviors, -1)
        remap[keep] = np.arange(len(keep))
        m = remap[self.behaviors] >= 0
        return InteractionTensor(self.num_users, self.num_items, len(keep),
                                 self.users[m], self.items[m], remap[self.behaviors[m]],
                                 self.order[m], self.seq[m])

    def __eq__(self, other):
        if not isinstance(other, InteractionTensor):
            return NotImplemented
        if (self.num_users, self.num_items, self.num_behaviors) != (
                other.num_users, other.num_items, other.num_behaviors):
            return False
        return self.edge_set() == other.edge_set()

    __hash__ = None


@dataclass
class Dataset:
    """An interaction tensor plus the vocabulary and id maps it was built with."""

    tensor: InteractionTensor
    vocab: BehaviorVocab
    user_ids: list[str]
    item_ids: list[str]
    has_timestamps: bool = False

    def user_index(self, uid: str) -> int:
        try:
            return self.user_ids.index(uid)
        except ValueError:
            raise ContractError(f"unknown user id {uid!r}") from None

    def item_index(self, iid: str) -> int:
        try:
            return self.item_ids.index(iid)
        except ValueError:
            raise ContractError(f"unknown item id {iid!r}") from None

    def records(self) -> Iterator[tuple]:
        """Edges as (user_id, item_id, behavior[, timestamp]) in input order."""
        t = self.tensor
        for e in np.argsort(t.seq, kind="stable"):
            rec = (self.user_ids[t.users[e]], self.item_ids[t.items[e]], self.vocab.names[t.behaviors[e]])
            if self.has_timestamps:
                rec = rec + (_fmt_ts(t.order[e]),)
            yield rec

    def to_tsv(self) -> str:
        return "".join("\t".join(r) + "\n" for r in self.records())

    def save(self, path) -> None:
        t = self.tensor
        meta = {
            "shape": [t.num_users, t.num_items, t.num_behaviors],
            "behaviors": list(self.vocab.names),
            "target": self.vocab.target,
            "user_ids": self.user_ids,
            "item_ids": self.item_ids,
            "has_timestamps": self.has_timestamps,
        }
        with open(path, "wb") as fh:
            np.savez(fh, users=t.users, items=t.items, behaviors=t.behaviors, order=t.order, seq=t.seq,
                     meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode("utf-8"))
            t = InteractionTensor(*meta["shape"], z["users"], z["items"], z["behaviors"], z["order"], z["seq"])
        vocab = BehaviorVocab.from_names(meta["behaviors"], meta["target"])
        return cls(t, vocab, meta["user_ids"], meta["item_ids"], meta["has_timestamps"])


def _fmt_ts(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def ingest(records: Iterable, vocab: BehaviorVocab) -> Dataset:
    """Build a :class:`Dataset` from ``(user, item, behavior[, timestamp])`` records.

    ``records`` may be raw text lines (tab separated, ``#`` comments allowed) or
    already-split tuples. Users and items are indexed in first-seen order.
    """
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    us, its, bs, order = [], [], [], []
    with_ts = None
    for lineno, rec in enumerate(records, start=1):
        if isinstance(rec, str):
            line = rec.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            rec = line.split("\t")
        if len(rec) not in (3, 4):
            raise IngestError(f"line {lineno}: expected 3 or 4 tab-separated fields, got {len(rec)}")
        u, i, b = (str(x).strip() for x in rec[:3])
        if b not in vocab.names:
            raise IngestError(f"line {lineno}: unknown behavior label {b!r} (vocabulary: {list(vocab.names)})")
        ts = len(rec) == 4
        if with_ts is None:
            with_ts = ts
        elif with_ts != ts:
            raise IngestError(f"line {lineno}: timestamp column must be present on all lines or none")
        if ts:
            try:
                key = float(rec[3])
            except ValueError:
                raise IngestError(f"line {lineno}: bad timestamp {rec[3]!r}") from None
        else:
            key = float(lineno)
        us.append(uidx.setdefault(u, len(uidx)))
        its.append(iidx.setdefault(i, len(iidx)))
        bs.append(vocab.names.index(b))
        order.append(key)
    if not us:
        raise IngestError("no interaction records in input")
    t = InteractionTensor.from_edges(len(uidx), len(iidx), len(vocab), us, its, bs, order)
    return Dataset(t, vocab, list(uidx), list(iidx), bool(with_ts))


def ingest_file(path, vocab: BehaviorVocab) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return ingest(fh, vocab)


def ingest_text(text: str, vocab: BehaviorVocab) -> Dataset:
    return ingest(io.StringIO(text), vocab)


def load_dataset(path, vocab: BehaviorVocab | None = None) -> Dataset:
    """Load a stored binary graph (``.npz``) or ingest a TSV log."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    if path.suffix == ".npz":
        ds = Dataset.load(path)
        if vocab is not None and (vocab.names != ds.vocab.names or vocab.target != ds.vocab.target):
            raise IngestError(
                f"vocabulary mismatch: graph has {list(ds.vocab.names)} (target {ds.vocab.target}), "
                f"configuration has {list(vocab.names)} (target {vocab.target})")
        return ds
    if vocab is None:
        raise IngestError("a behavior vocabulary is required to ingest a text log")
    return ingest_file(path, vocab)


# ---------------------------------------------------------------------------


def build_normalized_adjacency(t: InteractionTensor) -> sp.csr_matrix:
    """I x J matrix with ``count_k(i,j) / sqrt(deg(i) * deg(j))`` on linked pairs."""
    if t.num_edges == 0:
        raise ContractError("normalized adjacency of an empty tensor")
    counts = sp.csr_matrix((np.ones(t.num_edges), (t.users, t.items)),
                           shape=(t.num_users, t.num_items))
    counts.sum_duplicates()
    du = t.user_degree().astype(float)
    di = t.item_degree().astype(float)
    coo = counts.tocoo()
    vals = coo.data / np.sqrt(du[coo.row] * di[coo.col])
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=counts.shape)


def neighbors(t: InteractionTensor, node: int, k: int, side: str = "user") -> list[int]:
    """Sorted neighbors of ``node`` under behavior ``k``; ``side`` names what ``node`` is."""
    if not 0 <= k < t.num_behaviors:
        raise ContractError(f"behavior index {k} out of range [0, {t.num_behaviors})")
    if side == "user":
        if not 0 <= node < t.num_users:
            raise ContractError(f"user index {node} out of range [0, {t.num_users})")
        a = t.adjacency(k)
    elif side == "item":
        if not 0 <= node < t.num_items:
            raise ContractError(f"item index {node} out of range [0, {t.num_items})")
        a = t.adjacency_t(k)
    else:
        raise ContractError(f"side must be 'user' or 'item', got {side!r}")
    return sorted(a.indices[a.indptr[node]:a.indptr[node + 1]].tolist())


def leave_one_out_split(t: InteractionTensor, target: int, seed: int = 0):
    """Hold out each user's last target-behavior interaction.

    "Last" is the largest order key, ties broken by the highest item index.
    The rule is deterministic, so ``seed`` does not influence the result.
    Returns ``(train_tensor, test_pairs)`` with test pairs as an (n, 2) array
    of (user, item), sorted by user.
    """
    del seed
    tgt = np.flatnonzero(t.behaviors == target)
    srt = tgt[np.lexsort((t.items[tgt], t.order[tgt], t.users[tgt]))]
    us = t.users[srt]
    last = np.ones(len(srt), dtype=bool)
    last[:-1] = us[1:] != us[:-1]
    held = srt[last]
    keep = np.ones(t.num_edges, dtype=bool)
    keep[held] = False
    test = np.stack([t.users[held], t.items[held]], axis=1) if len(held) else np.zeros((0, 2), dtype=np.int64)
    return t.select(keep), test
