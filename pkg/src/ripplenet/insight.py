"""Explanation paths, ripple superposition and the k-hop neighbour-overlap study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import TRAIN, InteractionDataset
from .kg import KnowledgeGraph, RippleSets, relevant_entities
from .model import ModelParams, propagate
from .seeding import derive_rng


@dataclass(frozen=True)
class Edge:
    hop: int
    head: int
    relation: int
    tail: int
    score: float


@dataclass
class ExplanationGraph:
    """Ripple edges whose relevance logit passed the cutoff.

    ``nodes`` maps entity id to the smallest hop level it occupies (seeds are
    level 0). Each path is a hop-increasing chain of edges starting at a seed.
    """

    user: int
    item: int
    nodes: dict[int, int] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    paths: list[tuple[Edge, ...]] = field(default_factory=list)


def explain(user: int, item: int, params: ModelParams, ripple: RippleSets, threshold: float = -1.0) -> ExplanationGraph:
    """Keep ripple edges whose unnormalised relevance logit is ``>= threshold``.

    A triple sampled several times in one hop yields one edge. Paths are the
    maximal chains seed -> hop 1 -> ... through kept edges, where each edge's
    head equals the previous edge's tail.
    """
    trace = propagate(ripple, item, params)
    g = ExplanationGraph(user, item)
    for s in ripple.seed_items:
        g.nodes[s] = 0
    by_hop: list[list[Edge]] = []
    for k in range(ripple.n_hops):
        seen: dict[tuple[int, int, int], Edge] = {}
        for (h, r, t), z in zip(ripple.hops[k].tolist(), trace.logits[k].tolist()):
            if z >= threshold and (h, r, t) not in seen:
                seen[(h, r, t)] = Edge(k + 1, h, r, t, z)
        level = list(seen.values())
        by_hop.append(level)
        for e in level:
            g.nodes.setdefault(e.head, k)
            g.nodes.setdefault(e.tail, k + 1)
        g.edges.extend(level)

    seeds = set(ripple.seed_items)

    def extend(chain: tuple[Edge, ...]) -> None:
        k = chain[-1].hop
        nxt = [e for e in by_hop[k] if e.head == chain[-1].tail] if k < len(by_hop) else []
        if not nxt:
            g.paths.append(chain)
        for e in nxt:
            extend(chain + (e,))

    for e in by_hop[0] if by_hop else []:
        if e.head in seeds:
            extend((e,))
    return g


def to_dot(g: ExplanationGraph, kg: KnowledgeGraph, item_name: str = "item") -> str:
    def q(s: str) -> str:
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph explanation {", "  rankdir=LR;", f"  candidate [label={q(item_name)}, shape=box];"]
    for e_id, level in sorted(g.nodes.items()):
        lines.append(f"  n{e_id} [label={q(kg.entities[e_id])}, hop={level}];")
    for e in g.edges:
        lines.append(
            f"  n{e.head} -> n{e.tail} [label={q(kg.relations[e.relation])}, hop={e.hop}, score={e.score:.6f}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_paths(g: ExplanationGraph, kg: KnowledgeGraph, item_name: str = "item") -> list[str]:
    out = []
    for path in g.paths:
        parts = [kg.entities[path[0].head]]
        for e in path:
            parts.append(f"-[{kg.relations[e.relation]} {e.score:.6f}]->")
            parts.append(kg.entities[e.tail])
        parts.append(f"=> {item_name}")
        out.append(" ".join(parts))
    return out


@dataclass
class SuperpositionReport:
    """Attention mass per tail entity: ``per_hop[e][k]`` and ``total[e]``."""

    per_hop: dict[int, np.ndarray]
    total: dict[int, float]

    def mass(self, entity: int) -> float:
        return self.total.get(entity, 0.0)


def superposition(user: int, item: int, params: ModelParams, ripple: RippleSets) -> SuperpositionReport:
    trace = propagate(ripple, item, params)
    per_hop: dict[int, np.ndarray] = {}
    for k in range(ripple.n_hops):
        for t, p in zip(ripple.hops[k, :, 2].tolist(), trace.probs[k].tolist()):
            per_hop.setdefault(t, np.zeros(ripple.n_hops))[k] += p
    return SuperpositionReport(per_hop, {e: float(m.sum()) for e, m in per_hop.items()})


@dataclass(frozen=True)
class OverlapRow:
    hop: int
    mean_with: float | None
    mean_without: float | None
    ratio: float | None
    pairs_with: int
    pairs_without: int


def neighbor_overlap_study(
    kg: KnowledgeGraph, ds: InteractionDataset, pair_count: int, max_hop: int, rng_seed: int
) -> list[OverlapRow]:
    """Mean shared k-hop neighbours for item pairs with and without a common rater.

    Raters are taken from training positives. Pairs are distinct items drawn
    uniformly among items that have an entity.
    """
    if max_hop < 1 or pair_count < 1:
        raise ValueError("pair_count and max_hop must be >= 1")
    items = np.flatnonzero(ds.item_to_entity >= 0)
    if len(items) < 2:
        raise ValueError("need at least two items with entities")
    raters: dict[int, set[int]] = {int(v): set() for v in items}
    mask = (ds.label == 1) & (ds.split == TRAIN)
    for u, v in zip(ds.user[mask].tolist(), ds.item[mask].tolist()):
        if v in raters:
            raters[v].add(u)

    rng = derive_rng(rng_seed, "overlap")
    a = items[rng.integers(0, len(items), pair_count)]
    off = rng.integers(1, len(items), pair_count)
    b = items[(np.searchsorted(items, a) + off) % len(items)]
    co = np.array([bool(raters[x] & raters[y]) for x, y in zip(a.tolist(), b.tolist())])

    cache: dict[tuple[int, int], set[int]] = {}

    def hood(item: int, k: int) -> set[int]:
        key = (item, k)
        if key not in cache:
            cache[key] = relevant_entities(kg, [int(ds.item_to_entity[item])], k)
        return cache[key]

    rows = []
    for k in range(1, max_hop + 1):
        shared = np.array([len(hood(x, k) & hood(y, k)) for x, y in zip(a.tolist(), b.tolist())], dtype=float)
        m_with = float(shared[co].mean()) if co.any() else None
        m_without = float(shared[~co].mean()) if (~co).any() else None
        ratio = None
        if m_with is not None and m_without is not None and m_without > 0:
            ratio = m_with / m_without
        rows.append(OverlapRow(k, m_with, m_without, ratio, int(co.sum()), int((~co).sum())))
    return rows


def format_overlap(rows: list[OverlapRow]) -> str:
    def cell(x):
        return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"

    out = ["hop\tmean_with\tmean_without\tratio\tpairs_with\tpairs_without"]
    for r in rows:
        out.append(f"{r.hop}\t{cell(r.mean_with)}\t{cell(r.mean_without)}\t{cell(r.ratio)}\t{r.pairs_with}\t{r.pairs_without}")
    return "\n".join(out) + "\n"
