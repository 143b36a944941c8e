"""Minibatch SGD over interactions and KG triples, plus evaluation helpers."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import EVAL, TEST, TRAIN, InteractionDataset, all_histories
from .errors import EmptyRippleError
from .kg import KnowledgeGraph, build_ripple_sets, read_tsv
from .metrics import TopK, accuracy_from_arrays, auc_from_arrays, topk_metrics
from .model import Hyperparams, InteractionBatch, ModelParams, loss_and_gradients, predict_batch
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class RippleTable:
    """Ripple sets for every user that has them, stacked as ``(U, H, S, 3)``."""

    users: np.ndarray
    hops: np.ndarray
    fallback: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        self.row = {int(u): i for i, u in enumerate(self.users.tolist())}

    def __contains__(self, user: int) -> bool:
        return int(user) in self.row

    def gather(self, users) -> np.ndarray:
        return self.hops[[self.row[int(u)] for u in users]]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# users={len(self.users)} hops={self.hops.shape[1]} size={self.hops.shape[2]} skipped={self.skipped}\n")
            for u, hops, fb in zip(self.users.tolist(), self.hops, self.fallback):
                for k in range(hops.shape[0]):
                    cells = ",".join(f"{h}:{r}:{t}" for h, r, t in hops[k].tolist())
                    fh.write(f"{u}\t{k + 1}\t{int(fb[k])}\t{cells}\n")

    @classmethod
    def load(cls, path: str | Path) -> "RippleTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
        meta = dict(kv.split("=") for kv in header[1:].split())
        n_hops, size = int(meta["hops"]), int(meta["size"])
        rows = read_tsv(path, 4)
        users = sorted({int(f[0]) for _, f in rows})
        index = {u: i for i, u in enumerate(users)}
        hops = np.zeros((len(users), n_hops, size, 3), dtype=np.int64)
        fallback = np.zeros((len(users), n_hops), dtype=bool)
        for _, (u, k, fb, cells) in rows:
            i, k = index[int(u)], int(k) - 1
            hops[i, k] = [[int(x) for x in c.split(":")] for c in cells.split(",")]
            fallback[i, k] = fb == "1"
        return cls(np.array(users, dtype=np.int64), hops, fallback, int(meta["skipped"]))


def build_ripple_table(ds: InteractionDataset, kg: KnowledgeGraph, n_hops: int, size: int, seed: int) -> RippleTable:
    """Ripple sets for every user with a non-empty training history.

    Users without history, or whose seeds have no outgoing links, are skipped
    and counted.
    """
    histories = all_histories(ds)
    users, hops, fallback = [], [], []
    skipped = 0
    for u in range(ds.user_count):
        seeds = histories.get(u)
        if not seeds:
            skipped += 1
            continue
        try:
            rs = build_ripple_sets(kg, seeds, n_hops, size, derive_rng(seed, "ripple", u), user=u)
        except EmptyRippleError:
            skipped += 1
            continue
        users.append(u)
        hops.append(rs.hops)
        fallback.append(rs.fallback)
    if skipped:
        log.info("%d user(s) have no usable history and are excluded", skipped)
    return RippleTable(
        np.array(users, dtype=np.int64),
        np.array(hops, dtype=np.int64).reshape(len(users), n_hops, size, 3),
        np.array(fallback, dtype=bool).reshape(len(users), n_hops),
        skipped,
    )


class TripleSampler:
    """Half true triples, half tail-corrupted false ones, as ``(h, r, t, indicator)`` rows."""

    def __init__(self, kg: KnowledgeGraph, rng: np.random.Generator):
        if len(kg) == 0:
            raise ValueError("cannot sample triples from an empty graph")
        self.kg = kg
        self.rng = rng
        hr = kg.triples[:, :2]
        _, inv, counts = np.unique(hr, axis=0, return_inverse=True, return_counts=True)
        self._open = counts[inv.ravel()] < kg.entity_count
        if not self._open.any():
            raise ValueError("every (head, relation) pair links to every entity; no false triples exist")

    def sample(self, batch_size: int) -> np.ndarray:
        n_true = (batch_size + 1) // 2
        kg, rng = self.kg, self.rng
        out = np.empty((batch_size, 4), dtype=np.int64)
        out[:n_true, :3] = kg.triples[rng.integers(0, len(kg), n_true)]
        out[:n_true, 3] = 1
        open_rows = np.flatnonzero(self._open)
        for i in range(n_true, batch_size):
            h, r, _ = kg.triples[open_rows[rng.integers(0, len(open_rows))]]
            while True:
                t = int(rng.integers(0, kg.entity_count))
                if (h, r, t) not in kg:
                    break
            out[i] = (h, r, t, 0)
        return out


def triple_batch_sampler(kg: KnowledgeGraph, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    return TripleSampler(kg, rng).sample(batch_size)


@dataclass
class EpochRecord:
    epoch: int
    ctr: float
    kge: float
    reg: float
    train_ctr: float
    eval_auc: float | None
    eval_acc: float | None
    wall_time: float = 0.0


@dataclass
class TrainReport:
    """Per-epoch trace. ``initial`` is the state before any update (epoch 0)."""

    hyperparams: dict
    users: int
    skipped_users: int
    train_examples: int
    initial: EpochRecord
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoint: str | None = None

    def records(self) -> list[dict]:
        """Line records without wall-clock fields, so reruns compare byte-for-byte."""
        head = {
            "record": "config",
            "hyperparams": self.hyperparams,
            "users": self.users,
            "skipped_users": self.skipped_users,
            "train_examples": self.train_examples,
        }
        out = [head]
        for rec in [self.initial, *self.epochs]:
            d = asdict(rec)
            d.pop("wall_time")
            d["record"] = "epoch"
            out.append(d)
        if self.checkpoint:
            out.append({"record": "checkpoint", "path": self.checkpoint})
        return out

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def write_timing(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps({"epoch": rec.epoch, "wall_time": rec.wall_time}) + "\n")


def usable(ds: InteractionDataset, table: RippleTable, part: int) -> np.ndarray:
    idx = ds.indices(part)
    keep = np.fromiter((int(u) in table for u in ds.user[idx]), dtype=bool, count=len(idx))
    return idx[keep]


def score_examples(params: ModelParams, ds: InteractionDataset, table: RippleTable, idx: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(idx))
    for s in range(0, len(idx), chunk):
        sl = idx[s:s + chunk]
        out[s:s + chunk] = predict_batch(params, ds.item[sl], table.gather(ds.user[sl]))
    return out


def ctr_metrics(params: ModelParams, ds: InteractionDataset, table: RippleTable, part: int) -> tuple[float | None, float | None]:
    idx = usable(ds, table, part)
    if len(idx) == 0:
        return None, None
    labels = ds.label[idx]
    scores = score_examples(params, ds, table, idx)
    acc = accuracy_from_arrays(labels, scores)
    if labels.min() == labels.max():
        return None, acc
    return auc_from_arrays(labels, scores), acc


def mean_ctr_loss(params: ModelParams, ds: InteractionDataset, table: RippleTable, idx: np.ndarray) -> float:
    p = score_examples(params, ds, table, idx)
    y = ds.label[idx]
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def train(
    ds: InteractionDataset,
    kg: KnowledgeGraph,
    hp: Hyperparams,
    table: RippleTable | None = None,
    progress: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Fit the model with plain SGD; every random draw derives from ``hp.seed``."""
    if table is None:
        table = build_ripple_table(ds, kg, hp.n_hops, hp.ripple_size, hp.seed)
    if len(table.users) == 0:
        raise ValueError("no trainable users")
    if table.hops.shape[1:3] != (hp.n_hops, hp.ripple_size):
        raise ValueError("ripple table shape does not match hyperparameters")
    params = ModelParams.init(kg.entity_count, ds.item_count, kg.relation_count, hp.dim, derive_rng(hp.seed, "init"))
    train_idx = usable(ds, table, TRAIN)
    if len(train_idx) == 0:
        raise ValueError("no training examples for trainable users")

    def snapshot(epoch, ctr, kge, reg, wall):
        auc_, acc_ = ctr_metrics(params, ds, table, EVAL)
        return EpochRecord(epoch, ctr, kge, reg, mean_ctr_loss(params, ds, table, train_idx), auc_, acc_, wall)

    report = TrainReport(
        hp.to_dict(), len(table.users), table.skipped, len(train_idx), snapshot(0, math.nan, math.nan, math.nan, 0.0)
    )
    report.initial.ctr = report.initial.train_ctr
    report.initial.kge = report.initial.reg = 0.0

    sampler = TripleSampler(kg, derive_rng(hp.seed, "triples")) if len(kg) else None
    n_iter = math.ceil(len(train_idx) / hp.batch_size)
    for epoch in range(1, hp.epochs + 1):
        t0 = time.perf_counter()
        order = derive_rng(hp.seed, "shuffle", epoch).permutation(train_idx)
        sums = np.zeros(3)
        for it in range(n_iter):
            sl = order[it * hp.batch_size:(it + 1) * hp.batch_size]
            batch = InteractionBatch(ds.item[sl], ds.label[sl], table.gather(ds.user[sl]))
            triples = sampler.sample(hp.batch_size) if sampler is not None else np.empty((0, 4), dtype=np.int64)
            parts, grads = loss_and_gradients(batch, triples, params, hp)
            grads.apply(params, hp.lr)
            sums += (parts.ctr, parts.kge, parts.reg)
        if not params.all_finite():
            raise FloatingPointError(f"parameters diverged in epoch {epoch}; lower the learning rate")
        rec = snapshot(epoch, sums[0] / len(train_idx), sums[1] / n_iter, sums[2] / n_iter, time.perf_counter() - t0)
        report.epochs.append(rec)
        log.info("epoch %d ctr=%.4f kge=%.4f reg=%.3g eval_auc=%s", epoch, rec.ctr, rec.kge, rec.reg, rec.eval_auc)
        if progress:
            progress(rec)
    return params, report


def topk_evaluation(
    params: ModelParams, ds: InteractionDataset, table: RippleTable, ks, part: int = TEST
) -> list[TopK]:
    """Rank every item a user has not clicked in training; score against held-out positives."""
    mask = ds.split == part
    positives: dict[int, set] = {}
    for u, v in zip(ds.user[mask & (ds.label == 1)].tolist(), ds.item[mask & (ds.label == 1)].tolist()):
        if u in table:
            positives.setdefault(u, set()).add(v)
    scores = {u: recommend_scores(params, ds, table, u) for u in sorted(positives)}
    return [topk_metrics(scores, positives, k) for k in ks]


def recommend_scores(params: ModelParams, ds: InteractionDataset, table: RippleTable, user: int) -> dict[int, float]:
    clicked = set(ds.item[(ds.user == user) & (ds.label == 1) & (ds.split == TRAIN)].tolist())
    cand = np.array([v for v in range(ds.item_count) if v not in clicked], dtype=np.int64)
    if len(cand) == 0:
        return {}
    probs = predict_batch(params, cand, np.repeat(table.gather([user]), len(cand), axis=0))
    return dict(zip(cand.tolist(), probs.tolist()))

