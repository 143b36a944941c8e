"""Model parameters, forward pass, joint loss and hand-derived gradients.

Shapes used throughout: ``B`` examples, ``H`` hops, ``S`` triples per hop,
``d`` embedding size. A ripple tensor is ``(B, H, S, 3)`` of
``(head, relation, tail)`` ids.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .kg import RippleSets

EPS = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    batch_size: int
    epochs: int
    dim: int = 16
    n_hops: int = 2
    ripple_size: int = 32
    l2_weight: float = 1e-7
    kge_weight: float = 0.01
    lr: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_hops < 1 or self.ripple_size < 1:
            raise ValueError("dim, n_hops and ripple_size must be >= 1")
        if self.l2_weight < 0 or self.kge_weight < 0:
            raise ValueError("l2_weight and kge_weight must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    entity_emb: np.ndarray
    item_emb: np.ndarray
    relation_mats: np.ndarray

    @property
    def dim(self) -> int:
        return self.entity_emb.shape[1]

    @classmethod
    def init(cls, entity_count: int, item_count: int, relation_count: int, dim: int, rng: np.random.Generator):
        emb_bound = 0.5 / dim
        rel_bound = np.sqrt(6.0 / (dim + dim))
        return cls(
            entity_emb=rng.uniform(-emb_bound, emb_bound, (entity_count, dim)),
            item_emb=rng.uniform(-emb_bound, emb_bound, (item_count, dim)),
            relation_mats=rng.uniform(-rel_bound, rel_bound, (relation_count, dim, dim)),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.entity_emb.copy(), self.item_emb.copy(), self.relation_mats.copy())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.entity_emb, self.item_emb, self.relation_mats))


@dataclass
class LossParts:
    ctr: float
    kge: float
    reg: float

    @property
    def total(self) -> float:
        return self.ctr + self.kge + self.reg


@dataclass
class Gradients:
    """Gradient rows for the parameters a batch touched; everything else is zero."""

    entity_ids: np.ndarray
    entity: np.ndarray
    item_ids: np.ndarray
    item: np.ndarray
    relation_ids: np.ndarray
    relation: np.ndarray

    def to_dense(self, params: ModelParams) -> ModelParams:
        out = ModelParams(
            np.zeros_like(params.entity_emb), np.zeros_like(params.item_emb), np.zeros_like(params.relation_mats)
        )
        out.entity_emb[self.entity_ids] = self.entity
        out.item_emb[self.item_ids] = self.item
        out.relation_mats[self.relation_ids] = self.relation
        return out

    def apply(self, params: ModelParams, lr: float) -> None:
        """Plain gradient-descent step, in place."""
        params.entity_emb[self.entity_ids] -= lr * self.entity
        params.item_emb[self.item_ids] -= lr * self.item
        params.relation_mats[self.relation_ids] -= lr * self.relation


@dataclass
class InteractionBatch:
    items: np.ndarray
    labels: np.ndarray
    ripples: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.ripples = np.asarray(self.ripples, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_records(cls, records: Sequence[tuple[int, int, int, RippleSets]]) -> "InteractionBatch":
        if not records:
            raise ValueError("empty interaction batch")
        return cls(
            items=[r[1] for r in records],
            labels=[r[2] for r in records],
            ripples=np.stack([r[3].hops for r in records]),
        )


@dataclass
class HopTrace:
    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    probe: np.ndarray
    head_emb: np.ndarray
    tail_emb: np.ndarray
    rel_head: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    response: np.ndarray


@dataclass
class BatchTrace:
    items: np.ndarray
    item_emb: np.ndarray
    hops: list[HopTrace]
    user_emb: np.ndarray
    logits: np.ndarray
    raw_probs: np.ndarray
    probs: np.ndarray


@dataclass
class ForwardTrace:
    """Intermediates of one user/item forward pass."""

    logits: list[np.ndarray]
    probs: list[np.ndarray]
    responses: list[np.ndarray]
    user_emb: np.ndarray
    item_emb: np.ndarray
    logit: float
    prob: float


def _relation_groups(rels: np.ndarray):
    """Yield ``(relation, flat_indices)`` for each relation present in ``rels``."""
    flat = rels.ravel()
    order = np.argsort(flat, kind="stable")
    uniq, starts = np.unique(flat[order], return_index=True)
    bounds = np.append(starts, len(flat))
    for i, r in enumerate(uniq.tolist()):
        yield r, order[bounds[i]:bounds[i + 1]]


def _bilinear_heads(mats: np.ndarray, rels: np.ndarray, heads: np.ndarray) -> np.ndarray:
    """``R_{rels} @ heads`` row-wise. ``heads`` is ``(..., d)`` aligned with ``rels``."""
    d = heads.shape[-1]
    flat_h = heads.reshape(-1, d)
    out = np.empty_like(flat_h)
    for r, idx in _relation_groups(rels):
        out[idx] = flat_h[idx] @ mats[r].T
    return out.reshape(heads.shape)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, items, ripples) -> BatchTrace:
    items = np.asarray(items, dtype=np.int64)
    ripples = np.asarray(ripples, dtype=np.int64)
    v = params.item_emb[items]
    probe = v
    user = np.zeros_like(v)
    hops = []
    for k in range(ripples.shape[1]):
        heads, rels, tails = ripples[:, k, :, 0], ripples[:, k, :, 1], ripples[:, k, :, 2]
        h_emb = params.entity_emb[heads]
        t_emb = params.entity_emb[tails]
        rh = _bilinear_heads(params.relation_mats, rels, h_emb)
        logits = np.einsum("bd,bsd->bs", probe, rh)
        if not np.isfinite(logits).all():
            raise FloatingPointError(f"non-finite relevance logits at hop {k + 1}")
        p = softmax(logits)
        o = np.einsum("bs,bsd->bd", p, t_emb)
        hops.append(HopTrace(heads, rels, tails, probe, h_emb, t_emb, rh, logits, p, o))
        user = user + o
        probe = o
    logit = np.einsum("bd,bd->b", user, v)
    raw = expit(logit)
    return BatchTrace(items, v, hops, user, logit, raw, np.clip(raw, EPS, 1.0 - EPS))


def predict_batch(params: ModelParams, items, ripples) -> np.ndarray:
    return forward(params, items, ripples).probs


def relevance_logits(probe: np.ndarray, hop_triples: np.ndarray, params: ModelParams) -> np.ndarray:
    """Unnormalised relevance ``probe^T R_r h`` for each ``(h, r, t)`` row."""
    probe = np.asarray(probe, dtype=np.float64)
    if not np.isfinite(probe).all():
        raise FloatingPointError("non-finite probe")
    hop_triples = np.asarray(hop_triples, dtype=np.int64).reshape(-1, 3)
    rh = _bilinear_heads(params.relation_mats, hop_triples[:, 1], params.entity_emb[hop_triples[:, 0]])
    return rh @ probe


def relevance(probe: np.ndarray, hop_triples: np.ndarray, params: ModelParams) -> np.ndarray:
    return softmax(relevance_logits(probe, hop_triples, params))


def propagate(ripple: RippleSets, item: int, params: ModelParams) -> ForwardTrace:
    bt = forward(params, [item], ripple.hops[None])
    return ForwardTrace(
        logits=[h.logits[0] for h in bt.hops],
        probs=[h.probs[0] for h in bt.hops],
        responses=[h.response[0] for h in bt.hops],
        user_emb=bt.user_emb[0],
        item_emb=bt.item_emb[0],
        logit=float(bt.logits[0]),
        prob=float(bt.probs[0]),
    )


def predict(trace: ForwardTrace) -> float:
    """Click probability ``sigmoid(u . v)``, kept inside ``[EPS, 1 - EPS]``."""
    logit = float(trace.user_emb @ trace.item_emb)
    return float(np.clip(expit(logit), EPS, 1.0 - EPS))


def kge_score(h: int, r: int, t: int, params: ModelParams) -> float:
    return float(params.entity_emb[h] @ params.relation_mats[r] @ params.entity_emb[t])


class _Accumulator:
    """Collects (id, gradient-row) pairs and reduces them per unique id."""

    def __init__(self):
        self.ids: list[np.ndarray] = []
        self.rows: list[np.ndarray] = []

    def add(self, ids: np.ndarray, rows: np.ndarray) -> None:
        flat = np.asarray(ids).ravel()
        self.ids.append(flat)
        self.rows.append(rows.reshape(len(flat), -1))

    def reduce(self, table: np.ndarray, l2_weight: float) -> tuple[np.ndarray, np.ndarray, float]:
        if not self.ids:
            return np.empty(0, dtype=np.int64), np.empty((0, *table.shape[1:])), 0.0
        ids = np.concatenate(self.ids)
        rows = np.concatenate(self.rows).reshape(len(ids), *table.shape[1:])
        uniq, inv = np.unique(ids, return_inverse=True)
        acc = np.zeros((len(uniq), *table.shape[1:]))
        np.add.at(acc, inv, rows)
        touched = table[uniq]
        acc += l2_weight * touched
        return uniq, acc, 0.5 * l2_weight * float(np.sum(touched * touched))


def _check_batches(batch: InteractionBatch, triples) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("empty interaction batch")
    return np.asarray(triples, dtype=np.int64).reshape(-1, 4)


def loss_and_gradients(
    batch: InteractionBatch, triples, params: ModelParams, hp: Hyperparams, need_grad: bool = True
) -> tuple[LossParts, Gradients | None]:
    """Joint objective on a minibatch and its exact gradient.

    ``triples`` rows are ``(h, r, t, indicator)``. The CTR and KGE terms are
    sums over the batch; the L2 term covers only rows the batch touched.
    """
    triples = _check_batches(batch, triples)
    l1, l2 = hp.l2_weight, hp.kge_weight
    tr = forward(params, batch.items, batch.ripples)
    y = batch.labels
    yhat = tr.probs
    ctr = -float(np.sum(y * np.log(yhat) + (1.0 - y) * np.log(1.0 - yhat)))

    kh, kr, kt, ind = triples[:, 0], triples[:, 1], triples[:, 2], triples[:, 3].astype(np.float64)
    h_emb, t_emb = params.entity_emb[kh], params.entity_emb[kt]
    rt = _bilinear_heads(params.relation_mats, kr, t_emb)
    resid = ind - np.einsum("md,md->m", h_emb, rt)
    kge = 0.5 * l2 * float(np.sum(resid * resid))

    ent, itm, rel = _Accumulator(), _Accumulator(), _Accumulator()
    d = params.dim

    # CTR path; clamped predictions have zero slope
    clamped = (tr.raw_probs < EPS) | (tr.raw_probs > 1.0 - EPS)
    dlogit = np.where(clamped, 0.0, tr.raw_probs - y)
    du = dlogit[:, None] * tr.item_emb
    dv = dlogit[:, None] * tr.user_emb
    dprobe_next = np.zeros_like(du)
    for k in reversed(range(len(tr.hops))):
        hop = tr.hops[k]
        do = du + dprobe_next
        ent.add(hop.tails, hop.probs[:, :, None] * do[:, None, :])
        dp = np.einsum("bsd,bd->bs", hop.tail_emb, do)
        dz = hop.probs * (dp - np.sum(hop.probs * dp, axis=1, keepdims=True))
        dprobe = np.einsum("bs,bsd->bd", dz, hop.rel_head)
        # d(q^T R h)/dR = q h^T ; d/dh = R^T q
        wq = (dz[:, :, None] * hop.probe[:, None, :]).reshape(-1, d)
        h_flat = hop.head_emb.reshape(-1, d)
        dh = np.empty_like(h_flat)
        for r, idx in _relation_groups(hop.rels):
            dh[idx] = wq[idx] @ params.relation_mats[r]
            rel.add(np.array([r]), (wq[idx].T @ h_flat[idx])[None])
        ent.add(hop.heads, dh)
        if k == 0:
            dv = dv + dprobe
        else:
            dprobe_next = dprobe
    itm.add(batch.items, dv)

    # KGE path
    if len(triples):
        g = -l2 * resid
        ent.add(kh, g[:, None] * rt)
        gh = g[:, None] * h_emb
        dt = np.empty_like(t_emb)
        for r, idx in _relation_groups(kr):
            dt[idx] = gh[idx] @ params.relation_mats[r]
            rel.add(np.array([r]), (gh[idx].T @ t_emb[idx])[None])
        ent.add(kt, dt)

    e_ids, e_grad, e_reg = ent.reduce(params.entity_emb, l1)
    i_ids, i_grad, i_reg = itm.reduce(params.item_emb, l1)
    r_ids, r_grad, r_reg = rel.reduce(params.relation_mats, l1)
    parts = LossParts(ctr, kge, e_reg + i_reg + r_reg)
    grads = Gradients(e_ids, e_grad, i_ids, i_grad, r_ids, r_grad) if need_grad else None
    return parts, grads


def loss(batch: InteractionBatch, triples, params: ModelParams, hp: Hyperparams) -> tuple[float, LossParts]:
    parts, _ = loss_and_gradients(batch, triples, params, hp, need_grad=False)
    return parts.total, parts


def gradients(batch: InteractionBatch, triples, params: ModelParams, hp: Hyperparams) -> Gradients:
    return loss_and_gradients(batch, triples, params, hp)[1]


_MAGIC = b"RPLNCKPT"
_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict | None = None) -> None:
    """Write ``magic | version | header length | JSON header | float64 blocks``."""
    header = {
        "dim": params.dim,
        "entity_count": params.entity_emb.shape[0],
        "item_count": params.item_emb.shape[0],
        "relation_count": params.relation_mats.shape[0],
        "dtype": "<f8",
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(raw)) + raw)
        for arr in (params.entity_emb, params.item_emb, params.relation_mats):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<II", blob[8:16])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + n])
    d = header["dim"]
    shapes = [(header["entity_count"], d), (header["item_count"], d), (header["relation_count"], d, d)]
    arrays, off = [], 16 + n
    for shape in shapes:
        size = int(np.prod(shape)) * 8
        arrays.append(np.frombuffer(blob[off:off + size], dtype="<f8").reshape(shape).astype(np.float64))
        off += size
    if off != len(blob):
        raise ValueError(f"{path}: truncated or oversized checkpoint")
    return ModelParams(*arrays), header["meta"]
