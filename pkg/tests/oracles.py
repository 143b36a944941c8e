"""Independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data containers; each
routine is written the slow, obvious way.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def bfs_frontier(triples, seeds, k):
    """Level-k frontier by breadth-first expansion over an edge dict."""
    out = defaultdict(list)
    for h, _, t in triples:
        out[h].append(t)
    level = set(seeds)
    for _ in range(k):
        nxt = set()
        for node in level:
            for t in out.get(node, ()):
                nxt.add(t)
        level = nxt
    return level


def exact_pool(triples, frontier):
    frontier = set(frontier)
    return {tuple(t) for t in triples if t[0] in frontier}


def naive_softmax(z):
    e = [math.exp(x) for x in z]
    s = sum(e)
    return [x / s for x in e]


def bilinear(a, m, b):
    d = len(a)
    return sum(a[i] * m[i][j] * b[j] for i in range(d) for j in range(d))


def forward_example(E, V, R, item, hops):
    """Straight-line forward pass for one example; returns (user_vec, logit, per-hop probs)."""
    v = list(V[item])
    probe = v
    user = [0.0] * len(v)
    all_p = []
    for hop in hops:
        z = [bilinear(probe, R[r], E[h]) for h, r, _ in hop]
        p = naive_softmax(z)
        o = [sum(p[i] * E[hop[i][2]][j] for i in range(len(hop))) for j in range(len(v))]
        user = [a + b for a, b in zip(user, o)]
        probe = o
        all_p.append(p)
    logit = sum(a * b for a, b in zip(user, v))
    return user, logit, all_p


def loss_oracle(E, V, R, examples, triples, l1, l2):
    """Scalar reimplementation of the joint loss.

    ``examples``: list of (item, label, hops). ``triples``: list of (h, r, t, ind).
    """
    ctr = 0.0
    ent, itm, rel = set(), set(), set()
    for item, y, hops in examples:
        _, logit, _ = forward_example(E, V, R, item, hops)
        p = 1.0 / (1.0 + math.exp(-logit))
        p = min(max(p, 1e-12), 1 - 1e-12)
        ctr -= y * math.log(p) + (1 - y) * math.log(1 - p)
        itm.add(item)
        for hop in hops:
            for h, r, t in hop:
                ent.update((h, t))
                rel.add(r)
    kge = 0.0
    for h, r, t, ind in triples:
        kge += (ind - bilinear(E[h], R[r], E[t])) ** 2
        ent.update((h, t))
        rel.add(r)
    kge *= l2 / 2
    sq = sum(x * x for e in ent for x in E[e]) + sum(x * x for v in itm for x in V[v])
    sq += sum(x * x for r in rel for row in R[r] for x in row)
    return ctr + kge + l1 / 2 * sq


def pairwise_auc(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def naive_topk(scores, positives, k):
    """Per-user (precision, recall) via a full sort and set intersection."""
    out = {}
    for user, cand in scores.items():
        truth = positives.get(user, set())
        if not truth:
            continue
        ranked = [item for _, item in sorted((-s, item) for item, s in cand.items())]
        hits = len(set(ranked[:k]) & truth)
        out[user] = (hits / k, hits / len(truth))
    return out


def central_difference(f, arr, idx, step=1e-5):
    old = arr[idx]
    arr[idx] = old + step
    up = f()
    arr[idx] = old - step
    down = f()
    arr[idx] = old
    return (up - down) / (2 * step)


def random_graph(rng: np.random.Generator, n_entities: int, n_triples: int, n_relations: int = 3):
    rows = np.stack(
        [
            rng.integers(0, n_entities, n_triples),
            rng.integers(0, n_relations, n_triples),
            rng.integers(0, n_entities, n_triples),
        ],
        axis=1,
    )
    return [tuple(int(x) for x in r) for r in rows]


def gradient_mismatches(loss_fn, params, dense_grad, step=1e-5, rel_tol=1e-4, abs_tol=1e-7):
    """Compare every gradient entry against central differences.

    Returns ``(n_checked, failures, worst_rel)`` where a failure is an entry
    whose relative error is >= ``rel_tol`` and absolute error >= ``abs_tol``.
    ``worst_rel`` covers entries whose magnitude reaches ``abs_tol``.
    """
    failures = []
    worst = 0.0
    n = 0
    for name in ("entity_emb", "item_emb", "relation_mats"):
        arr = getattr(params, name)
        grad = getattr(dense_grad, name)
        for idx in np.ndindex(arr.shape):
            fd = central_difference(loss_fn, arr, idx, step)
            an = grad[idx]
            diff = abs(fd - an)
            rel = diff / max(abs(fd), abs(an), 1e-300)
            n += 1
            if max(abs(fd), abs(an)) >= abs_tol:
                worst = max(worst, rel)
            if diff >= abs_tol and rel >= rel_tol:
                failures.append((name, idx, an, fd))
    return n, failures, worst
