"""Knowledge-graph store, k-hop expansion and per-user ripple sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyRippleError, ParseError


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable triple store indexed by head entity.

    ``triples`` is an ``(n, 3)`` int array of ``(head, relation, tail)`` rows.
    Outgoing links are kept in CSR form (``_order``/``_offsets``) so the
    candidate pool of a frontier is a handful of slices.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    triples: np.ndarray
    _order: np.ndarray = field(repr=False)
    _offsets: np.ndarray = field(repr=False)
    _members: frozenset = field(repr=False)

    @classmethod
    def from_arrays(cls, entities: Sequence[str], relations: Sequence[str], triples) -> "KnowledgeGraph":
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        n_ent, n_rel = len(entities), len(relations)
        if len(arr):
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_ent:
                raise ValueError("entity id out of range")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_rel:
                raise ValueError("relation id out of range")
        # dedup, keeping first appearance
        seen: dict[tuple[int, int, int], None] = {}
        for row in arr.tolist():
            seen.setdefault(tuple(row), None)
        arr = np.array(list(seen), dtype=np.int64).reshape(-1, 3)
        order = np.argsort(arr[:, 0], kind="stable")
        counts = np.bincount(arr[:, 0], minlength=n_ent)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        arr.setflags(write=False)
        order.setflags(write=False)
        offsets.setflags(write=False)
        return cls(tuple(entities), tuple(relations), arr, order, offsets, frozenset(seen))

    @property
    def entity_count(self) -> int:
        return len(self.entities)

    @property
    def relation_count(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        return tuple(int(x) for x in triple) in self._members

    def out_triples(self, entity: int) -> np.ndarray:
        """Row indices into ``triples`` whose head is ``entity``."""
        return self._order[self._offsets[entity]:self._offsets[entity + 1]]

    def adjacency(self, entity: int) -> list[tuple[int, int]]:
        return [(int(r), int(t)) for _, r, t in self.triples[self.out_triples(entity)]]

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.relations)}

    def candidate_pool(self, frontier: Iterable[int]) -> np.ndarray:
        """Row indices of every triple whose head lies in ``frontier``."""
        parts = [self.out_triples(e) for e in sorted(set(int(e) for e in frontier))]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)

    def _check_ids(self, ids: Iterable[int]) -> None:
        for e in ids:
            if not 0 <= int(e) < self.entity_count:
                raise ValueError(f"invalid entity id {e}")


def load_kg(records: Iterable[Sequence[str]]) -> KnowledgeGraph:
    """Intern ``(head, relation, tail)`` name records into a graph.

    Ids are assigned in order of first appearance; repeated triples collapse
    to one.
    """
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    rows = []
    for lineno, rec in enumerate(records, start=1):
        if len(rec) != 3:
            raise ParseError(f"expected 3 fields, got {len(rec)}", lineno)
        h, r, t = rec
        if not (h and r and t):
            raise ParseError("empty name", lineno)
        rows.append((ent.setdefault(h, len(ent)), rel.setdefault(r, len(rel)), ent.setdefault(t, len(ent))))
    return KnowledgeGraph.from_arrays(list(ent), list(rel), rows)


def read_tsv(path: str | Path, n_fields: int) -> list[tuple[int, list[str]]]:
    """``(lineno, fields)`` for each non-blank, non-comment line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields or not all(fields):
                raise ParseError(f"expected {n_fields} non-empty tab-separated fields", lineno, str(path))
            out.append((lineno, fields))
    return out


def read_kg(path: str | Path) -> KnowledgeGraph:
    return load_kg(fields for _, fields in read_tsv(path, 3))


def relevant_entities(kg: KnowledgeGraph, seeds: Iterable[int], k: int) -> set[int]:
    """Entities reached by exactly ``k`` link steps from ``seeds`` (no sampling)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    level = set(int(s) for s in seeds)
    kg._check_ids(level)
    for _ in range(k):
        pool = kg.candidate_pool(level)
        level = set(kg.triples[pool, 2].tolist())
    return level


def common_khop_neighbors(kg: KnowledgeGraph, a: int, b: int, k: int) -> int:
    return len(relevant_entities(kg, [a], k) & relevant_entities(kg, [b], k))


@dataclass(frozen=True)
class RippleSets:
    """Sampled ripple triples for one user.

    ``hops[k]`` is an ``(S, 3)`` array of ``(head, relation, tail)`` for hop
    ``k + 1``. ``fallback[k]`` marks hops copied from the previous hop because
    their candidate pool was empty.
    """

    user: int
    seed_items: tuple[int, ...]
    hops: np.ndarray
    fallback: tuple[bool, ...]

    @property
    def n_hops(self) -> int:
        return self.hops.shape[0]

    @property
    def size(self) -> int:
        return self.hops.shape[1]


def build_ripple_sets(
    kg: KnowledgeGraph,
    seeds: Iterable[int],
    n_hops: int,
    size: int,
    rng_seed: int | np.random.Generator,
    user: int = -1,
) -> RippleSets:
    """Sample ``size`` triples per hop, uniformly with replacement.

    The hop-k pool is every triple whose head is a tail sampled at hop k-1
    (hop 1: the seeds). An empty pool at hop k >= 2 repeats hop k-1; an empty
    pool at hop 1 raises :class:`EmptyRippleError`.
    """
    if n_hops < 1 or size < 1:
        raise ValueError("n_hops and size must be >= 1")
    seed_list = sorted(set(int(s) for s in seeds))
    if not seed_list:
        raise ValueError("empty seed set")
    kg._check_ids(seed_list)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    hops = np.empty((n_hops, size, 3), dtype=np.int64)
    fallback = []
    frontier: Iterable[int] = seed_list
    for k in range(n_hops):
        pool = kg.candidate_pool(frontier)
        if len(pool) == 0:
            if k == 0:
                raise EmptyRippleError("no outgoing links from any seed entity")
            hops[k] = hops[k - 1]
            fallback.append(True)
        else:
            hops[k] = kg.triples[pool[rng.integers(0, len(pool), size=size)]]
            fallback.append(False)
        frontier = hops[k, :, 2].tolist()
    hops.setflags(write=False)
    return RippleSets(user, tuple(seed_list), hops, tuple(fallback))
