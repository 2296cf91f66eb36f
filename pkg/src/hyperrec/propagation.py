"""Degree-normalised bipartite propagation, local/global fusion, layer pooling."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import InteractionGraph


def normalized_adjacency(graph: InteractionGraph) -> sp.csr_matrix:
    """|U| x |V| matrix with entries 1 / sqrt(deg(u) deg(v)) on observed edges."""
    R = graph.adjacency()
    du = np.asarray(R.sum(axis=1)).ravel()
    dv = np.asarray(R.sum(axis=0)).ravel()
    inv_u = np.where(du > 0, 1.0 / np.sqrt(np.maximum(du, 1)), 0.0)
    inv_v = np.where(dv > 0, 1.0 / np.sqrt(np.maximum(dv, 1)), 0.0)
    return sp.csr_matrix(sp.diags(inv_u) @ R @ sp.diags(inv_v))


def lightgcn_layer(
    graph_or_adj, user_embs: Tensor, item_embs: Tensor
) -> tuple[Tensor, Tensor]:
    """One propagation hop: users gather from items, items gather from users."""
    A = graph_or_adj
    if isinstance(A, InteractionGraph):
        A = normalized_adjacency(A)
    return ad.spmm(A, item_embs), ad.spmm(sp.csr_matrix(A.T), user_embs)


def fuse(local: Tensor, global_: Tensor) -> Tensor:
    if local.shape != global_.shape:
        raise ShapeError(f"fuse: shapes {local.shape} and {global_.shape}")
    return ad.add(global_, local)


def final_representation(per_layer: Sequence[Tensor]) -> Tensor:
    if not per_layer:
        raise ValueError("final_representation needs at least one layer")
    acc = per_layer[0]
    for z in per_layer[1:]:
        acc = ad.add(acc, z)
    return ad.scale(acc, 1.0 / len(per_layer))
