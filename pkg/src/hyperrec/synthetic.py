"""Planted-cluster corpora with a hyper-relational knowledge graph.

Users and items are assigned to ``clusters`` groups; a user interacts with an
in-cluster item with probability ``p_in`` and an out-of-cluster item with
``p_out`` (both scaled by a per-item popularity factor). Every item owns a few
statements:

* *cluster statements* ``(item, rel_c, attr)`` whose relation and tail are
  specific to the item's cluster, and
* *shared statements* ``(item, rel_g, hub)`` whose tail is shared by a pair of
  clusters, so the bare triplet cannot tell the two apart.

A fraction ``qualifier_rate`` of statements carries 1-3 qualifier pairs whose
values are cluster-specific entities, which disambiguates the shared ones (the
way a pen-name qualifier separates two books by the same author).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    Statement,
    StatementStore,
    alignment_to_tsv,
    parse_alignment,
    parse_interactions,
    parse_statements,
)


class GeneratorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    users: int = 50
    items: int = 60
    clusters: int = 5
    p_in: float = 0.35
    p_out: float = 0.02
    qualifier_rate: float = 0.5
    statements_per_item: int = 3
    attrs_per_cluster: int = 4
    qualifier_values_per_cluster: int = 3
    generic_relations: int = 2
    qualifier_relations: int = 2
    shared_fraction: float = 0.5
    kg_noise: float = 0.1
    popularity_skew: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.p_in <= self.p_out:
            raise GeneratorConfigError(f"p_in ({self.p_in}) must exceed p_out ({self.p_out})")
        if not (0.0 <= self.p_out and self.p_in <= 1.0):
            raise GeneratorConfigError("probabilities must lie in [0, 1]")
        if not 0.0 <= self.qualifier_rate <= 1.0:
            raise GeneratorConfigError("qualifier_rate must lie in [0, 1]")
        if min(self.users, self.items, self.clusters) < 1:
            raise GeneratorConfigError("users, items and clusters must be positive")
        if self.clusters > min(self.users, self.items):
            raise GeneratorConfigError("more clusters than users or items")

    @property
    def n_hubs(self) -> int:
        return (self.clusters + 1) // 2

    @property
    def n_entities(self) -> int:
        c = self.clusters
        return self.items + c * self.attrs_per_cluster + self.n_hubs + c * self.qualifier_values_per_cluster

    @property
    def n_relations(self) -> int:
        return self.clusters + self.generic_relations + self.qualifier_relations


@dataclass
class Corpus:
    config: GeneratorConfig
    edges: list[tuple[int, int]]
    statements: StatementStore
    alignment: dict[int, int]
    user_cluster: np.ndarray
    item_cluster: np.ndarray

    def interactions_tsv(self) -> str:
        return "".join(f"{u}\t{v}\n" for u, v in self.edges)

    def clusters_tsv(self) -> str:
        lines = ["kind\tid\tcluster\n"]
        lines += [f"user\t{u}\t{c}\n" for u, c in enumerate(self.user_cluster.tolist())]
        lines += [f"item\t{v}\t{c}\n" for v, c in enumerate(self.item_cluster.tolist())]
        return "".join(lines)

    def dataset(self) -> Dataset:
        """Round-trip through the text formats, exactly as a file-based run would."""
        return Dataset.build(
            parse_interactions(self.interactions_tsv()),
            parse_statements(self.statements.to_tsv()),
            parse_alignment(alignment_to_tsv(self.alignment)),
        )

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "interactions": out / "interactions.tsv",
            "statements": out / "statements.tsv",
            "alignment": out / "alignment.tsv",
            "clusters": out / "clusters.tsv",
        }
        files["interactions"].write_text(self.interactions_tsv(), encoding="utf-8")
        files["statements"].write_text(self.statements.to_tsv(), encoding="utf-8")
        files["alignment"].write_text(alignment_to_tsv(self.alignment), encoding="utf-8")
        files["clusters"].write_text(self.clusters_tsv(), encoding="utf-8")
        return files


def generate(config: GeneratorConfig) -> Corpus:
    config.validate()
    rng = np.random.default_rng(config.seed)
    C = config.clusters
    user_cluster = rng.permutation(np.arange(config.users) % C)
    item_cluster = rng.permutation(np.arange(config.items) % C)

    popularity = np.exp(config.popularity_skew * rng.standard_normal(config.items))
    popularity /= popularity.mean()
    same = user_cluster[:, None] == item_cluster[None, :]
    prob = np.where(same, config.p_in, config.p_out) * popularity[None, :]
    y = rng.random(prob.shape) < np.clip(prob, 0.0, 1.0)
    # every user and item needs at least two interactions; top up inside the cluster
    for u in range(config.users):
        while y[u].sum() < 2:
            pool = np.flatnonzero(same[u] & ~y[u])
            pool = pool if len(pool) else np.flatnonzero(~y[u])
            y[u, rng.choice(pool)] = True
    for v in range(config.items):
        if not y[:, v].any():
            pool = np.flatnonzero(same[:, v])
            y[rng.choice(pool), v] = True
    edges = [(int(u), int(v)) for u, v in zip(*np.nonzero(y))]

    # entity id layout: items | cluster attributes | hubs | qualifier values
    item_entity = rng.permutation(config.items)
    attr_base = config.items
    hub_base = attr_base + C * config.attrs_per_cluster
    qual_base = hub_base + config.n_hubs
    # relation id layout: cluster relations | generic relations | qualifier relations
    generic_base = C
    qual_rel_base = C + config.generic_relations

    statements = []
    for v in range(config.items):
        true_c = int(item_cluster[v])
        for _ in range(config.statements_per_item):
            c = int(rng.integers(C)) if rng.random() < config.kg_noise else true_c
            if rng.random() < config.shared_fraction:
                rel = generic_base + int(rng.integers(config.generic_relations))
                tail = hub_base + c // 2
            else:
                rel = c
                tail = attr_base + c * config.attrs_per_cluster + int(rng.integers(config.attrs_per_cluster))
            quals = []
            if rng.random() < config.qualifier_rate:
                for _ in range(int(rng.integers(1, 4))):
                    qr = qual_rel_base + int(rng.integers(config.qualifier_relations))
                    qv = qual_base + c * config.qualifier_values_per_cluster + int(
                        rng.integers(config.qualifier_values_per_cluster)
                    )
                    quals.append((qr, qv))
            statements.append(Statement(int(item_entity[v]), rel, tail, tuple(quals)))

    return Corpus(
        config=config,
        edges=edges,
        statements=StatementStore.from_statements(statements),
        alignment={v: int(item_entity[v]) for v in range(config.items)},
        user_cluster=user_cluster,
        item_cluster=item_cluster,
    )


def generator_config_dict(config: GeneratorConfig) -> dict:
    return asdict(config)
