"""Planted two-community benchmark used by the tests and the ``synth`` command."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .seeding import derive_rng


@dataclass
class PlantedCorpus:
    triples: list[tuple[str, str, str]]
    ratings: list[tuple[str, str, float]]
    item_entities: dict[str, str]
    user_community: dict[str, int]
    item_community: dict[str, int]

    def write(self, directory: str | Path) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"kg": d / "kg.tsv", "ratings": d / "ratings.tsv", "item_entity": d / "item_entity.tsv"}
        with open(paths["kg"], "w", encoding="utf-8") as fh:
            fh.writelines("\t".join(t) + "\n" for t in self.triples)
        with open(paths["ratings"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{u}\t{v}\t{s:g}\n" for u, v, s in self.ratings)
        with open(paths["item_entity"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{v}\t{e}\n" for v, e in self.item_entities.items())
        return paths


def planted_corpus(
    seed: int = 0,
    communities: int = 2,
    entities_per_community: int = 50,
    items: int = 40,
    users: int = 200,
    relations: int = 4,
    out_degree: int = 4,
    cross_rate: float = 0.05,
    clicks_per_user: int = 16,
    in_community_rate: float = 1.0,
) -> PlantedCorpus:
    """KG with dense intra-community links and a few cross links.

    Items are the first entities of each community. Every user belongs to one
    community and rates ``clicks_per_user`` items, each drawn from that
    community with probability ``in_community_rate``. Ratings are 4 or 5, so
    any threshold up to 4 keeps all of them.
    """
    rng = derive_rng(seed, "synthetic")
    per_items = items // communities
    if per_items > entities_per_community or clicks_per_user > per_items:
        raise ValueError("inconsistent planted corpus sizes")
    ents = [[f"c{c}_e{i}" for i in range(entities_per_community)] for c in range(communities)]
    rels = [f"rel{r}" for r in range(relations)]

    triples = []
    for c in range(communities):
        for i, head in enumerate(ents[c]):
            for _ in range(out_degree):
                if rng.random() < cross_rate:
                    other = (c + 1 + int(rng.integers(0, communities - 1))) % communities
                    tail = ents[other][int(rng.integers(0, entities_per_community))]
                else:
                    j = int(rng.integers(0, entities_per_community - 1))
                    tail = ents[c][j if j < i else j + 1]
                triples.append((head, rels[int(rng.integers(0, relations))], tail))

    item_entities, item_community = {}, {}
    pools = []
    for c in range(communities):
        pool = []
        for i in range(per_items):
            name = f"item_{c}_{i}"
            item_entities[name] = ents[c][i]
            item_community[name] = c
            pool.append(name)
        pools.append(pool)

    ratings, user_community = [], {}
    for u in range(users):
        c = u % communities
        name = f"user{u}"
        user_community[name] = c
        chosen: set[str] = set()
        while len(chosen) < clicks_per_user:
            cc = c if rng.random() < in_community_rate else int(rng.integers(0, communities))
            chosen.add(pools[cc][int(rng.integers(0, per_items))])
        for v in sorted(chosen):
            ratings.append((name, v, float(rng.choice([4.0, 5.0]))))
    return PlantedCorpus(triples, ratings, item_entities, user_community, item_community)
