"""Scores, hinge ranking loss, cross-view InfoNCE and the combined objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import InteractionGraph

MARGIN = 1.0
REJECTION_CAP = 100


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 2e-2
    lambda2: float = 1e-4
    tau: float = 0.5
    margin: float = MARGIN

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def score(z_u: Tensor, z_v: Tensor) -> Tensor:
    """Inner product along the last axis (row-wise for matrices)."""
    return ad.reduce_sum(ad.hadamard(z_u, z_v), axis=-1)


def margin_loss(pos: Tensor, neg: Tensor, margin: float = MARGIN) -> Tensor:
    """sum(max(0, margin - pos + neg)) over paired scores."""
    return ad.total(ad.relu(ad.add(ad.sub(neg, pos), margin)))


def infonce(local: Tensor, global_: Tensor, tau: float, include_positive: bool = False) -> Tensor:
    """Cross-view contrast: row i of ``local`` should match row i of ``global_``.

    Per row the loss is ``-s_ii/tau + logsumexp_{j != i} s_ij/tau`` with cosine
    ``s``. By default the positive pair is left out of the denominator, so the
    value can be negative; ``include_positive`` gives the usual InfoNCE.
    """
    n = local.shape[0]
    if n < 2:
        raise ValueError("infonce needs at least two rows")
    if local.shape != global_.shape:
        raise ad.ShapeError(f"infonce: shapes {local.shape} and {global_.shape}")
    sim = ad.scale(
        ad.matmul(ad.normalize_rows(local), ad.transpose(ad.normalize_rows(global_))),
        1.0 / tau,
    )
    eye = np.eye(n)
    positive = ad.reduce_sum(ad.hadamard(sim, eye), axis=-1)
    mask = None if include_positive else ~eye.astype(bool)
    return ad.total(ad.sub(ad.logsumexp(sim, mask=mask), positive))


def l2_penalty(params: Iterable[Tensor]) -> Tensor:
    terms = [ad.squared_norm(p) for p in params]
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc


def total_loss(
    L_m: Tensor,
    L_c_user,
    L_c_item,
    params: Mapping[str, Tensor] | Iterable[Tensor],
    weights: LossWeights,
) -> Tensor:
    """L_m + lambda1 (L_c_user + L_c_item) + lambda2 * sum of squared parameters."""
    loss = L_m
    if weights.lambda1:
        loss = ad.add(loss, ad.scale(ad.add(L_c_user, L_c_item), weights.lambda1))
    if weights.lambda2:
        values = params.values() if isinstance(params, Mapping) else params
        loss = ad.add(loss, ad.scale(l2_penalty(list(values)), weights.lambda2))
    return loss


def sample_negatives(graph: InteractionGraph, u: int, rng: np.random.Generator) -> int:
    """Uniform draw from the items ``u`` has not interacted with."""
    seen = graph.user_neighbors[u]
    if len(seen) >= graph.n_items:
        raise SamplingError(f"user {u} interacted with every item")
    seen_set = set(seen)
    for _ in range(REJECTION_CAP):
        v = int(rng.integers(graph.n_items))
        if v not in seen_set:
            return v
    complement = np.setdiff1d(np.arange(graph.n_items), np.asarray(seen, dtype=np.int64))
    return int(complement[rng.integers(len(complement))])
