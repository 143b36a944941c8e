"""Implicit-feedback interactions: transform, negative sampling, split, history."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ParseError
from .kg import KnowledgeGraph, read_tsv
from .seeding import derive_rng

UNSPLIT, TRAIN, EVAL, TEST = -1, 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", EVAL: "eval", TEST: "test"}


@dataclass(frozen=True)
class InteractionDataset:
    """Labelled ``(user, item)`` examples with an item-to-entity alignment.

    ``split`` holds one of ``TRAIN``/``EVAL``/``TEST`` per example, or
    ``UNSPLIT`` before :func:`split` runs. ``item_to_entity`` is -1 for items
    with no entity.
    """

    users: tuple[str, ...]
    items: tuple[str, ...]
    user: np.ndarray
    item: np.ndarray
    label: np.ndarray
    split: np.ndarray
    item_to_entity: np.ndarray
    dropped_items: int = 0

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def item_count(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.label)

    def indices(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.split == part)

    @property
    def train(self) -> np.ndarray:
        return self.indices(TRAIN)

    @property
    def eval(self) -> np.ndarray:
        return self.indices(EVAL)

    @property
    def test(self) -> np.ndarray:
        return self.indices(TEST)


def implicit_transform(
    ratings: Iterable[tuple[str, str, float]],
    threshold: float | None = None,
    rng_seed: int = 0,
    item_entities: Mapping[str, int] | None = None,
) -> InteractionDataset:
    """Binarise explicit ratings and draw one negative per positive.

    A rating counts as positive when it reaches ``threshold`` (every rating,
    if ``threshold`` is None). Negatives come from the items the user never
    rated at all. When ``item_entities`` is given, ratings of items missing
    from it are dropped and the catalog also includes every mapped item.
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    rated: dict[int, dict[int, float]] = {}
    dropped: set[str] = set()
    for u, v, score in ratings:
        if item_entities is not None and v not in item_entities:
            dropped.add(v)
            continue
        uid = user_ids.setdefault(u, len(user_ids))
        vid = item_ids.setdefault(v, len(item_ids))
        prev = rated.setdefault(uid, {}).get(vid)
        rated[uid][vid] = float(score) if prev is None else max(prev, float(score))
    if item_entities is not None:
        for v in item_entities:
            item_ids.setdefault(v, len(item_ids))

    catalog = np.arange(len(item_ids))
    users, items, labels = [], [], []
    capped = 0
    for uid in range(len(user_ids)):
        history = rated[uid]
        pos = [v for v, s in history.items() if threshold is None or s >= threshold]
        if not pos:
            continue
        unrated = np.setdiff1d(catalog, np.fromiter(history, dtype=np.int64))
        n_neg = min(len(pos), len(unrated))
        if n_neg < len(pos):
            capped += 1
        neg = derive_rng(rng_seed, "transform", uid).choice(unrated, size=n_neg, replace=False)
        users += [uid] * (len(pos) + n_neg)
        items += pos + sorted(neg.tolist())
        labels += [1] * len(pos) + [0] * n_neg
    if capped:
        warnings.warn(f"{capped} user(s) had fewer unrated items than positives; negatives capped")

    item_names = tuple(item_ids)
    if item_entities is None:
        i2e = np.full(len(item_names), -1, dtype=np.int64)
    else:
        i2e = np.array([item_entities[v] for v in item_names], dtype=np.int64)
    return InteractionDataset(
        users=tuple(user_ids),
        items=item_names,
        user=np.array(users, dtype=np.int64),
        item=np.array(items, dtype=np.int64),
        label=np.array(labels, dtype=np.int64),
        split=np.full(len(labels), UNSPLIT, dtype=np.int64),
        item_to_entity=i2e,
        dropped_items=len(dropped),
    )


def split(ds: InteractionDataset, ratios=(0.6, 0.2, 0.2), rng_seed: int = 0) -> InteractionDataset:
    """Random example-level train/eval/test partition."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"bad split ratios {ratios}")
    n = len(ds)
    parts = np.full(n, TRAIN, dtype=np.int64)
    if n < 3:
        warnings.warn(f"only {n} example(s); all assigned to train")
        return replace(ds, split=parts)
    n_train = int(round(n * ratios[0]))
    n_eval = min(int(round(n * ratios[1])), n - n_train)
    perm = derive_rng(rng_seed, "split").permutation(n)
    parts[perm[n_train:n_train + n_eval]] = EVAL
    parts[perm[n_train + n_eval:]] = TEST
    return replace(ds, split=parts)


def user_history(ds: InteractionDataset, user: int) -> set[int]:
    """Entity ids of the user's positive training items."""
    mask = (ds.user == user) & (ds.label == 1) & (ds.split == TRAIN)
    return set(ds.item_to_entity[ds.item[mask]].tolist())


def all_histories(ds: InteractionDataset) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    mask = (ds.label == 1) & (ds.split == TRAIN)
    for u, e in zip(ds.user[mask].tolist(), ds.item_to_entity[ds.item[mask]].tolist()):
        out.setdefault(u, set()).add(e)
    return out


def read_ratings(path: str | Path) -> list[tuple[str, str, float]]:
    out = []
    for lineno, (u, v, s) in read_tsv(path, 3):
        try:
            score = float(s)
        except ValueError:
            raise ParseError(f"rating {s!r} is not a number", lineno, str(path)) from None
        if not np.isfinite(score):
            raise ParseError(f"rating {s!r} is not finite", lineno, str(path))
        out.append((u, v, score))
    return out


def read_item_entities(path: str | Path, kg: KnowledgeGraph) -> dict[str, int]:
    """Map item names to KG entity ids.

    Items linked to several entities, or to an entity the graph lacks, are
    left out.
    """
    links: dict[str, set[str]] = {}
    for _, (item, entity) in read_tsv(path, 2):
        links.setdefault(item, set()).add(entity)
    out = {}
    for item, ents in links.items():
        if len(ents) == 1:
            (name,) = ents
            if name in kg.entity_index:
                out[item] = kg.entity_index[name]
    return out


def save_dataset(ds: InteractionDataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "items.tsv", "w", encoding="utf-8") as fh:
        for name, ent in zip(ds.items, ds.item_to_entity.tolist()):
            fh.write(f"{name}\t{ent}\n")
    with open(d / "users.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{name}\n" for name in ds.users)
    with open(d / "examples.tsv", "w", encoding="utf-8") as fh:
        for row in zip(ds.user.tolist(), ds.item.tolist(), ds.label.tolist(), ds.split.tolist()):
            fh.write("\t".join(map(str, row)) + "\n")
    (d / "dataset_meta.tsv").write_text(f"dropped_items\t{ds.dropped_items}\n", encoding="utf-8")


def load_dataset(directory: str | Path) -> InteractionDataset:
    d = Path(directory)
    items = [fields for _, fields in read_tsv(d / "items.tsv", 2)]
    users = [fields[0] for _, fields in read_tsv(d / "users.tsv", 1)]
    rows = np.array([[int(x) for x in f] for _, f in read_tsv(d / "examples.tsv", 4)], dtype=np.int64).reshape(-1, 4)
    meta = dict(fields for _, fields in read_tsv(d / "dataset_meta.tsv", 2))
    return InteractionDataset(
        users=tuple(users),
        items=tuple(name for name, _ in items),
        user=rows[:, 0].copy(),
        item=rows[:, 1].copy(),
        label=rows[:, 2].copy(),
        split=rows[:, 3].copy(),
        item_to_entity=np.array([int(e) for _, e in items], dtype=np.int64),
        dropped_items=int(meta.get("dropped_items", 0)),
    )
