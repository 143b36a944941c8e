from dataclasses import replace

import numpy as np
import pytest

from ripplenet.dataset import (
    EVAL,
    TEST,
    TRAIN,
    implicit_transform,
    load_dataset,
    read_item_entities,
    read_ratings,
    save_dataset,
    split,
    user_history,
)
from ripplenet.errors import ParseError
from ripplenet.kg import load_kg


def _catalog(*items):
    return {v: i for i, v in enumerate(items)}


def test_threshold_excludes_low_rating_from_negatives():
    ratings = [("u", "A", 5), ("u", "B", 2), ("w", "C", 5), ("w", "D", 5)]
    ds = implicit_transform(ratings, threshold=4, rng_seed=1, item_entities=_catalog("A", "B", "C", "D"))
    mine = ds.user == ds.users.index("u")
    pos = {ds.items[v] for v in ds.item[mine & (ds.label == 1)]}
    neg = {ds.items[v] for v in ds.item[mine & (ds.label == 0)]}
    assert pos == {"A"}
    assert len(neg) == 1 and neg <= {"C", "D"}


def test_no_threshold_all_positive():
    ratings = [("u", "A", 1), ("u", "B", 2), ("u", "C", 0)]
    ds = implicit_transform(ratings, None, 0, _catalog(*"ABCDEFG"))
    assert (ds.label == 1).sum() == 3 and (ds.label == 0).sum() == 3


def test_full_catalog_rated_warns():
    ratings = [("u", "A", 5), ("u", "B", 5)]
    with pytest.warns(UserWarning):
        ds = implicit_transform(ratings, None, 0, _catalog("A", "B"))
    assert (ds.label == 0).sum() == 0


def test_label_balance_and_no_conflicts(rng):
    ratings = [(f"u{u}", f"i{v}", float(rng.integers(1, 6))) for u in range(30) for v in rng.choice(60, 8, replace=False)]
    ds = implicit_transform(ratings, 3, 5, _catalog(*[f"i{v}" for v in range(60)]))
    for u in range(ds.user_count):
        m = ds.user == u
        assert (ds.label[m] == 1).sum() == (ds.label[m] == 0).sum()
    pairs = {}
    for u, v, y in zip(ds.user.tolist(), ds.item.tolist(), ds.label.tolist()):
        assert pairs.setdefault((u, v), y) == y


def test_unmapped_items_dropped():
    ratings = [("u", "A", 5), ("u", "Z", 5)]
    ds = implicit_transform(ratings, None, 0, _catalog("A", "B", "C"))
    assert ds.dropped_items == 1
    assert "Z" not in ds.items


def test_transform_deterministic():
    ratings = [(f"u{u}", f"i{v}", 5) for u in range(5) for v in range(u, u + 4)]
    cat = _catalog(*[f"i{v}" for v in range(20)])
    a = implicit_transform(ratings, None, 9, cat)
    b = implicit_transform(ratings, None, 9, cat)
    assert np.array_equal(a.item, b.item)


def _toy(n_users=50, per_user=10):
    ratings = [(f"u{u}", f"i{(u + j) % 40}", 5) for u in range(n_users) for j in range(per_user)]
    return implicit_transform(ratings, None, 0, _catalog(*[f"i{v}" for v in range(40)]))


def test_split_sizes_ten():
    ds = implicit_transform([("u", f"i{j}", 5) for j in range(5)], None, 0, _catalog(*[f"i{j}" for j in range(12)]))
    assert len(ds) == 10
    s = split(ds, (0.6, 0.2, 0.2), 3)
    assert (len(s.train), len(s.eval), len(s.test)) == (6, 2, 2)


def test_split_all_train():
    s = split(_toy(), (1.0, 0.0, 0.0), 0)
    assert len(s.train) == len(s)


def test_split_tiny_warns():
    ds = implicit_transform([("u", "A", 5)], None, 0, _catalog("A", "B"))
    with pytest.warns(UserWarning):
        s = split(ds, (0.6, 0.2, 0.2), 0)
    assert len(s.train) == 2


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        split(_toy(), (0.5, 0.2, 0.2), 0)


def test_split_partition_reproducible():
    ds = _toy(50, 10)
    assert len(ds) == 1000
    a, b = split(ds, (0.6, 0.2, 0.2), 11), split(ds, (0.6, 0.2, 0.2), 11)
    tr, ev, te = set(a.train.tolist()), set(a.eval.tolist()), set(a.test.tolist())
    assert not (tr & ev or tr & te or ev & te)
    assert tr | ev | te == set(range(1000))
    assert np.array_equal(a.split, b.split)


def test_user_history_from_train_only():
    ds = implicit_transform([("u", "A", 5), ("u", "B", 5), ("u", "C", 5)], None, 0, {"A": 10, "B": 11, "C": 12, "D": 13, "E": 14, "F": 15})
    parts = np.full(len(ds), EVAL)
    item = ds.item
    parts[(ds.label == 1) & np.isin(item, [ds.items.index("A"), ds.items.index("B")])] = TRAIN
    parts[(ds.label == 1) & (item == ds.items.index("C"))] = TEST
    ds = replace(ds, split=parts)
    assert user_history(ds, 0) == {10, 11}


def test_user_history_empty_when_only_test():
    ds = implicit_transform([("u", "A", 5)], None, 0, {"A": 0, "B": 1})
    ds = replace(ds, split=np.full(len(ds), TEST))
    assert user_history(ds, 0) == set()


def test_user_history_matches_scan_and_never_leaks():
    ds = split(_toy(50, 10), (0.6, 0.2, 0.2), 4)
    for u in range(ds.user_count):
        expected, test_pos = set(), set()
        for i in range(len(ds)):
            if ds.user[i] == u and ds.label[i] == 1:
                ent = int(ds.item_to_entity[ds.item[i]])
                if ds.split[i] == TRAIN:
                    expected.add(ent)
                elif ds.split[i] == TEST:
                    test_pos.add(ent)
        hist = user_history(ds, u)
        assert hist == expected
        assert not hist & test_pos


def test_readers(tmp_path):
    (tmp_path / "kg.tsv").write_text("m1\tr\tx\nm2\tr\tx\n", encoding="utf-8")
    (tmp_path / "map.tsv").write_text("A\tm1\nB\tm2\nB\tm1\nC\tnope\n", encoding="utf-8")
    (tmp_path / "r.tsv").write_text("u\tA\t4\nu\tB\t3.5\n", encoding="utf-8")
    kg = load_kg([("m1", "r", "x"), ("m2", "r", "x")])
    mapping = read_item_entities(tmp_path / "map.tsv", kg)
    assert mapping == {"A": 0}  # B is ambiguous, C unknown
    assert read_ratings(tmp_path / "r.tsv") == [("u", "A", 4.0), ("u", "B", 3.5)]


def test_read_ratings_bad_number(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("u\tA\t4\nu\tB\tfive\n", encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        read_ratings(p)
    assert exc.value.line == 2


def test_save_load_roundtrip(tmp_path):
    ds = split(_toy(10, 4), (0.6, 0.2, 0.2), 1)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.users == ds.users and back.items == ds.items
    for name in ("user", "item", "label", "split", "item_to_entity"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
