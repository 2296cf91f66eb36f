"""Top-K ranking metrics, mean average (cosine) distance and density groups."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autodiff import NORM_EPS


def rank_items(scores: np.ndarray, exclude: Iterable[int] = (), k: int | None = None) -> list[int]:
    """Item indices by descending score, ``exclude`` removed; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64).copy()
    excluded = np.fromiter(exclude, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    if excluded.size:
        order = order[~np.isin(order, excluded)]
    return order[:k].tolist() if k is not None else order.tolist()


def recall_at_k(ranked: Sequence[int], relevant, k: int = 20) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall_at_k needs a non-empty relevant set")
    return len(relevant.intersection(ranked[:k])) / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant, k: int = 20) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("ndcg_at_k needs a non-empty relevant set")
    dcg = sum(1.0 / math.log2(i + 2) for i, v in enumerate(ranked[:k]) if v in relevant)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(len(relevant), k)))
    return dcg / idcg


def mad(embs) -> float:
    """Mean of 1 - cos(row_i, row_j) over ordered pairs i != j. Zero rows count as cosine 0."""
    x = np.asarray(getattr(embs, "data", embs), dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("mad needs at least two rows")
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.where(norm > NORM_EPS, x / np.where(norm > NORM_EPS, norm, 1.0), 0.0)
    cos = unit @ unit.T
    off = cos.sum() - np.trace(cos)
    return float((n * (n - 1) - off) / (n * (n - 1)))


@dataclass(frozen=True)
class Metrics:
    recall: float
    ndcg: float
    n_users: int
    mad_user: float = float("nan")
    mad_item: float = float("nan")

    def as_row(self, k: int = 20) -> dict[str, float]:
        return {
            f"recall@{k}": self.recall,
            f"ndcg@{k}": self.ndcg,
            "users": self.n_users,
            "mad_user": self.mad_user,
            "mad_item": self.mad_item,
        }


def ranked_lists(
    user_embs: np.ndarray,
    item_embs: np.ndarray,
    users: Iterable[int],
    exclude: Mapping[int, Iterable[int]],
    k: int,
) -> dict[int, list[int]]:
    users = list(users)
    if not users:
        return {}
    scores = np.asarray(user_embs)[users] @ np.asarray(item_embs).T
    return {u: rank_items(scores[i], exclude.get(u, ()), k) for i, u in enumerate(users)}


def ranking_metrics(
    user_embs: np.ndarray,
    item_embs: np.ndarray,
    relevant: Mapping[int, Iterable[int]],
    exclude: Mapping[int, Iterable[int]] | None = None,
    k: int = 20,
) -> Metrics:
    """Macro-averaged Recall@k / NDCG@k over users with a non-empty relevant set."""
    exclude = exclude or {}
    users = [u for u, items in sorted(relevant.items()) if len(set(items))]
    ranked = ranked_lists(user_embs, item_embs, users, exclude, k)
    if not users:
        return Metrics(float("nan"), float("nan"), 0)
    rec = [recall_at_k(ranked[u], relevant[u], k) for u in users]
    ndcg = [ndcg_at_k(ranked[u], relevant[u], k) for u in users]
    return Metrics(float(np.mean(rec)), float(np.mean(ndcg)), len(users))


def density_groups(item_degree: np.ndarray, n_groups: int) -> list[np.ndarray]:
    """Equal-count item buckets by ascending degree; equal degrees ordered by item index."""
    if n_groups < 2:
        raise ValueError("need at least two groups")
    order = np.lexsort((np.arange(len(item_degree)), np.asarray(item_degree)))
    return [np.sort(g) for g in np.array_split(order, n_groups)]


def density_group_eval(
    user_embs: np.ndarray,
    item_embs: np.ndarray,
    item_degree: np.ndarray,
    relevant: Mapping[int, Iterable[int]],
    exclude: Mapping[int, Iterable[int]] | None = None,
    n_groups: int = 4,
    k: int = 20,
) -> list[dict]:
    """Recall@k restricted to the test items of each density group.

    For group g a user contributes ``|top-k & relevant_g| / |relevant_g|`` if
    ``relevant_g`` is non-empty; the group score is the mean over those users.
    """
    exclude = exclude or {}
    groups = density_groups(item_degree, n_groups)
    users = [u for u, items in sorted(relevant.items()) if len(set(items))]
    ranked = ranked_lists(user_embs, item_embs, users, exclude, k)
    rows = []
    for gid, members in enumerate(groups):
        member_set = set(members.tolist())
        per_user = []
        n_interactions = 0
        for u in users:
            rel = set(relevant[u]) & member_set
            if rel:
                per_user.append(recall_at_k(ranked[u], rel, k))
                n_interactions += len(rel)
        rows.append(
            {
                "group": gid,
                "items": len(members),
                "min_degree": int(np.min(item_degree[members])) if len(members) else 0,
                "max_degree": int(np.max(item_degree[members])) if len(members) else 0,
                "interactions": n_interactions,
                "users": len(per_user),
                f"recall@{k}": float(np.mean(per_user)) if per_user else float("nan"),
            }
        )
    return rows
