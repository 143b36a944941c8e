import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ripplenet.dataset import implicit_transform, split
from ripplenet.kg import KnowledgeGraph, load_kg
from ripplenet.model import ModelParams
from ripplenet.synthetic import planted_corpus


def kg_from_ints(triples, n_entities=None, n_relations=None):
    triples = list(triples)
    if n_entities is None:
        n_entities = 1 + max([max(h, t) for h, _, t in triples], default=-1)
    if n_relations is None:
        n_relations = 1 + max([r for _, r, _ in triples], default=-1)
    return KnowledgeGraph.from_arrays(
        [f"e{i}" for i in range(n_entities)], [f"r{i}" for i in range(n_relations)], triples
    )


def random_params(rng, n_entities, n_items, n_relations, d, scale=0.5):
    return ModelParams(
        rng.normal(0, scale, (n_entities, d)),
        rng.normal(0, scale, (n_items, d)),
        rng.normal(0, scale, (n_relations, d, d)),
    )


def planted(seed=0):
    corpus = planted_corpus(seed=seed)
    kg = load_kg(corpus.triples)
    mapping = {v: kg.entity_index[e] for v, e in corpus.item_entities.items()}
    ds = split(implicit_transform(corpus.ratings, None, seed, mapping), (0.6, 0.2, 0.2), seed)
    return corpus, kg, ds


@pytest.fixture(scope="session")
def planted_data():
    return planted(0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, d, n_hops, size, batch=3, n_kge=4, n_entities=10, n_items=4, n_relations=3):
    """Random parameters, an interaction batch and a triple batch."""
    from ripplenet.model import InteractionBatch

    params = random_params(rng, n_entities, n_items, n_relations, d)
    shape = (batch, n_hops, size)
    ripples = np.stack(
        [rng.integers(0, n_entities, shape), rng.integers(0, n_relations, shape), rng.integers(0, n_entities, shape)],
        axis=-1,
    )
    b = InteractionBatch(rng.integers(0, n_items, batch), rng.integers(0, 2, batch), ripples)
    triples = np.stack(
        [
            rng.integers(0, n_entities, n_kge),
            rng.integers(0, n_relations, n_kge),
            rng.integers(0, n_entities, n_kge),
            rng.integers(0, 2, n_kge),
        ],
        axis=1,
    )
    return params, b, triples
