"""Interaction graph, hyper-relational statements and item/entity alignment.

All three inputs are tab-separated UTF-8 text. Blank lines and lines whose
first non-space character is ``#`` are ignored.

External user/item ids are densified to ``0..n-1`` in first-seen order; the
original ids stay available through ``InteractionGraph.user_ids`` /
``item_ids``. Entity and relation ids in the statement file are taken as
already-dense integers.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp


class ParseError(ValueError):
    """A malformed line in one of the input files."""

    def __init__(self, source: str, lineno: int, message: str):
        super().__init__(f"{source}:{lineno}: {message}")
        self.lineno = lineno


class AlignmentError(ValueError):
    """The item to entity alignment is not total or not injective."""


def _lines(stream: TextIO | str | Iterable[str]) -> Iterable[tuple[int, str]]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def _ints(fields: list[str], source: str, lineno: int) -> list[int]:
    try:
        return [int(f) for f in fields]
    except ValueError:
        raise ParseError(source, lineno, f"expected decimal integers, got {fields!r}") from None


# ---------------------------------------------------------------------------
# interactions


@dataclass(frozen=True)
class InteractionGraph:
    n_users: int
    n_items: int
    edges: frozenset[tuple[int, int]]
    user_neighbors: tuple[tuple[int, ...], ...]
    item_neighbors: tuple[tuple[int, ...], ...]
    user_ids: tuple[int, ...] = ()
    item_ids: tuple[int, ...] = ()

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int]],
        n_users: int | None = None,
        n_items: int | None = None,
        user_ids: Iterable[int] | None = None,
        item_ids: Iterable[int] | None = None,
    ) -> "InteractionGraph":
        edge_set = frozenset((int(u), int(v)) for u, v in edges)
        n_users = n_users if n_users is not None else 1 + max((u for u, _ in edge_set), default=-1)
        n_items = n_items if n_items is not None else 1 + max((v for _, v in edge_set), default=-1)
        by_user: list[list[int]] = [[] for _ in range(n_users)]
        by_item: list[list[int]] = [[] for _ in range(n_items)]
        for u, v in edge_set:
            if not (0 <= u < n_users and 0 <= v < n_items):
                raise ValueError(f"edge {(u, v)} outside {n_users} users x {n_items} items")
            by_user[u].append(v)
            by_item[v].append(u)
        return cls(
            n_users=n_users,
            n_items=n_items,
            edges=edge_set,
            user_neighbors=tuple(tuple(sorted(x)) for x in by_user),
            item_neighbors=tuple(tuple(sorted(x)) for x in by_item),
            user_ids=tuple(user_ids) if user_ids is not None else tuple(range(n_users)),
            item_ids=tuple(item_ids) if item_ids is not None else tuple(range(n_items)),
        )

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def user_degree(self) -> np.ndarray:
        return np.array([len(x) for x in self.user_neighbors], dtype=np.int64)

    @property
    def item_degree(self) -> np.ndarray:
        return np.array([len(x) for x in self.item_neighbors], dtype=np.int64)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Binary |U| x |V| interaction matrix."""
        if not self.edges:
            return sp.csr_matrix((self.n_users, self.n_items))
        rows, cols = zip(*self.sorted_edges())
        return sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_users, self.n_items)
        )

    def subgraph(self, edges: Iterable[tuple[int, int]]) -> "InteractionGraph":
        """Same node sets, a subset of the edges."""
        return InteractionGraph.from_edges(
            edges, self.n_users, self.n_items, self.user_ids, self.item_ids
        )

    def to_tsv(self) -> str:
        """Serialise using the original external ids."""
        return "".join(
            f"{self.user_ids[u]}\t{self.item_ids[v]}\n" for u, v in self.sorted_edges()
        )


def parse_interactions(stream, source: str = "interactions") -> InteractionGraph:
    users: dict[int, int] = {}
    items: dict[int, int] = {}
    edges: set[tuple[int, int]] = set()
    for lineno, line in _lines(stream):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(source, lineno, f"expected 'user<TAB>item', got {line!r}")
        u_ext, v_ext = _ints(fields, source, lineno)
        u = users.setdefault(u_ext, len(users))
        v = items.setdefault(v_ext, len(items))
        edges.add((u, v))
    return InteractionGraph.from_edges(
        edges, len(users), len(items), user_ids=users.keys(), item_ids=items.keys()
    )


# ---------------------------------------------------------------------------
# statements


@dataclass(frozen=True)
class Statement:
    head: int
    relation: int
    tail: int
    qualifiers: tuple[tuple[int, int], ...] = ()  # (qual_relation, qual_value)

    def to_tsv(self) -> str:
        fields = [self.head, self.relation, self.tail]
        for qr, qv in self.qualifiers:
            fields += [qr, qv]
        return "\t".join(map(str, fields)) + "\n"


@dataclass
class StatementStore:
    statements: list[Statement] = field(default_factory=list)
    head_index: dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def from_statements(cls, statements: Iterable[Statement]) -> "StatementStore":
        store = cls(list(statements), {})
        for i, st in enumerate(store.statements):
            store.head_index.setdefault(st.head, []).append(i)
        return store

    def __len__(self) -> int:
        return len(self.statements)

    @property
    def n_entities(self) -> int:
        ids = [-1]
        for st in self.statements:
            ids += [st.head, st.tail] + [qv for _, qv in st.qualifiers]
        return max(ids) + 1

    @property
    def n_relations(self) -> int:
        ids = [-1]
        for st in self.statements:
            ids += [st.relation] + [qr for qr, _ in st.qualifiers]
        return max(ids) + 1

    def to_tsv(self) -> str:
        return "".join(st.to_tsv() for st in self.statements)


def statements_for_head(store: StatementStore, h: int) -> list[Statement]:
    return [store.statements[i] for i in store.head_index.get(h, ())]


def parse_statements(stream, source: str = "statements") -> StatementStore:
    statements = []
    for lineno, line in _lines(stream):
        fields = line.split("\t")
        if len(fields) < 3:
            raise ParseError(
                source, lineno, f"expected 'h<TAB>r<TAB>t[<TAB>qr<TAB>qv]*', got {line!r}"
            )
        if (len(fields) - 3) % 2:
            raise ParseError(source, lineno, "odd number of qualifier fields")
        ids = _ints(fields, source, lineno)
        if min(ids) < 0:
            raise ParseError(source, lineno, "negative id")
        quals = tuple(zip(ids[3::2], ids[4::2]))
        statements.append(Statement(ids[0], ids[1], ids[2], quals))
    return StatementStore.from_statements(statements)


# ---------------------------------------------------------------------------
# alignment


def parse_alignment(stream, source: str = "alignment") -> dict[int, int]:
    """Map external item id -> entity id; rejects non-injective maps."""
    mapping: dict[int, int] = {}
    owner: dict[int, int] = {}
    for lineno, line in _lines(stream):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(source, lineno, f"expected 'item<TAB>entity', got {line!r}")
        item, entity = _ints(fields, source, lineno)
        if item in mapping and mapping[item] != entity:
            raise AlignmentError(f"{source}:{lineno}: item {item} aligned twice")
        if entity in owner and owner[entity] != item:
            raise AlignmentError(
                f"{source}:{lineno}: non-injective alignment, entity {entity} "
                f"claimed by items {owner[entity]} and {item}"
            )
        mapping[item] = entity
        owner[entity] = item
    return mapping


def resolve_alignment(graph: InteractionGraph, alignment: dict[int, int]) -> np.ndarray:
    """Entity id per dense item index. Raises if any graph item is unaligned."""
    missing = [ext for ext in graph.item_ids if ext not in alignment]
    if missing:
        raise AlignmentError(f"items missing from alignment: {sorted(missing)}")
    out = np.array([alignment[ext] for ext in graph.item_ids], dtype=np.int64)
    if len(set(out.tolist())) != len(out):
        raise AlignmentError("non-injective alignment")
    return out


def alignment_to_tsv(alignment: dict[int, int]) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in alignment.items())


# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Everything one training run needs, with items already aligned."""

    graph: InteractionGraph
    store: StatementStore
    item_entity: np.ndarray
    n_entities: int
    n_relations: int

    @classmethod
    def build(
        cls, graph: InteractionGraph, store: StatementStore, alignment: dict[int, int]
    ) -> "Dataset":
        item_entity = resolve_alignment(graph, alignment)
        n_entities = max(store.n_entities, int(item_entity.max(initial=-1)) + 1)
        return cls(graph, store, item_entity, n_entities, max(store.n_relations, 1))

    @classmethod
    def load(cls, interactions_path, statements_path, alignment_path) -> "Dataset":
        with open(interactions_path, encoding="utf-8") as fh:
            graph = parse_interactions(fh, str(interactions_path))
        with open(statements_path, encoding="utf-8") as fh:
            store = parse_statements(fh, str(statements_path))
        with open(alignment_path, encoding="utf-8") as fh:
            alignment = parse_alignment(fh, str(alignment_path))
        return cls.build(graph, store, alignment)
