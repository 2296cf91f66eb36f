"""Top-K cosine dependency hypergraphs and normalised hypergraph convolution.

Row ``e`` of the incidence matrix is the hyperedge anchored at node ``e``;
its non-zero columns are the ``K`` nodes most cosine-similar to the anchor,
weighted by that similarity. Structure is built from detached embeddings, so
no gradient flows through the discrete selection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import NORM_EPS, Tensor

ROW_CHUNK = 1024
# above this many nodes the per-step operator is kept sparse
DENSE_LIMIT = 4096


@dataclass(frozen=True)
class Hypergraph:
    H: sp.csr_matrix  # (n edges, n nodes)
    node_degree: np.ndarray  # column sums
    edge_degree: np.ndarray  # row sums

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @classmethod
    def from_matrix(cls, H) -> "Hypergraph":
        H = sp.csr_matrix(H)
        return cls(
            H,
            np.asarray(H.sum(axis=0)).ravel(),
            np.asarray(H.sum(axis=1)).ravel(),
        )

    def rows(self) -> list[list[tuple[int, float]]]:
        out = []
        for e in range(self.n):
            lo, hi = self.H.indptr[e], self.H.indptr[e + 1]
            out.append(list(zip(self.H.indices[lo:hi].tolist(), self.H.data[lo:hi].tolist())))
        return out

    def to_tsv(self) -> str:
        """Debug dump: one ``edge<TAB>node<TAB>weight`` line per stored entry."""
        lines = []
        for e, row in enumerate(self.rows()):
            lines += [f"{e}\t{u}\t{w!r}\n" for u, w in row]
        return "".join(lines)


def _unit_rows(embs: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(embs, axis=1, keepdims=True)
    return np.where(norm > NORM_EPS, embs / np.where(norm > NORM_EPS, norm, 1.0), 0.0)


def pairwise_dependencies(embs, chunk: int = ROW_CHUNK) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(first_row, scores)`` blocks of the cosine matrix, ``chunk`` rows at a time."""
    embs = embs.data if isinstance(embs, Tensor) else np.asarray(embs, dtype=np.float64)
    unit = _unit_rows(embs)
    for lo in range(0, unit.shape[0], chunk):
        yield lo, unit[lo : lo + chunk] @ unit.T


def dependency_row(embs, u: int) -> np.ndarray:
    embs = embs.data if isinstance(embs, Tensor) else np.asarray(embs, dtype=np.float64)
    unit = _unit_rows(embs)
    return unit @ unit[u]


def build_hypergraph(embs, K: int, include_self: bool = False) -> Hypergraph:
    """Keep, per anchor, the K most similar other nodes with strictly positive cosine.

    Ties are broken by lower node index. ``include_self`` adds the anchor
    itself at weight 1 on top of its K neighbours.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    embs = embs.data if isinstance(embs, Tensor) else np.asarray(embs, dtype=np.float64)
    n = embs.shape[0]
    rows, cols, vals = [], [], []
    for lo, block in pairwise_dependencies(embs):
        anchors = np.arange(lo, lo + block.shape[0])
        block[np.arange(block.shape[0]), anchors] = -np.inf
        # stable sort on -score keeps index order among ties
        order = np.argsort(-block, axis=1, kind="stable")[:, :K]
        picked = np.take_along_axis(block, order, axis=1)
        keep = picked > 0
        rows.append(np.repeat(anchors, keep.sum(axis=1)))
        cols.append(order[keep])
        vals.append(picked[keep])
        if include_self:
            rows.append(anchors)
            cols.append(anchors)
            vals.append(np.ones(len(anchors)))
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    H = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    H.sort_indices()
    return Hypergraph.from_matrix(H)


def _inv_sqrt(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=np.float64)
    pos = x > 0
    out[pos] = 1.0 / np.sqrt(x[pos])
    return out


def normalize(hg: Hypergraph) -> sp.csr_matrix:
    """Entry (e, u) scaled by edge_degree[e]^-1/2 * node_degree[u]^-1/2; zero degrees give zeros."""
    if hg.H.nnz and hg.H.data.min() < 0:
        raise ValueError("hypergraph has negative weights")
    left = sp.diags(_inv_sqrt(hg.edge_degree))
    right = sp.diags(_inv_sqrt(hg.node_degree))
    return sp.csr_matrix(left @ hg.H @ right)


def propagation_operator(hg: Hypergraph) -> sp.csr_matrix:
    Ht = normalize(hg)
    return sp.csr_matrix(Ht @ Ht.T)


def topk_incidence_dense(embs: np.ndarray, K: int, include_self: bool = False) -> np.ndarray:
    """Dense incidence matrix with the same selection rule as :func:`build_hypergraph`."""
    unit = _unit_rows(embs)
    n = unit.shape[0]
    scores = unit @ unit.T
    idx = np.arange(n)
    scores[idx, idx] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")[:, :K]
    picked = np.take_along_axis(scores, order, axis=1)
    H = np.zeros((n, n))
    np.put_along_axis(H, order, np.where(picked > 0, picked, 0.0), axis=1)
    if include_self:
        H[idx, idx] = 1.0
    return H


def dependency_operator(embs, K: int, include_self: bool = False):
    """``H_norm H_norm^T`` for the top-K hypergraph of ``embs``, dense for small ``n``."""
    embs = embs.data if isinstance(embs, Tensor) else np.asarray(embs, dtype=np.float64)
    if embs.shape[0] > DENSE_LIMIT:
        return propagation_operator(build_hypergraph(embs, K, include_self))
    H = topk_incidence_dense(embs, K, include_self)
    Ht = H * _inv_sqrt(H.sum(axis=1))[:, None] * _inv_sqrt(H.sum(axis=0))[None, :]
    return Ht @ Ht.T


def hyper_convolve(H_norm, Z: Tensor, W: Tensor, slope: float = 0.2) -> Tensor:
    """LeakyReLU(H_norm H_norm^T Z W)."""
    op = sp.csr_matrix(H_norm @ H_norm.T) if sp.issparse(H_norm) else H_norm @ H_norm.T
    return convolve_with(op, Z, W, slope)


def convolve_with(op, Z: Tensor, W: Tensor, slope: float = 0.2) -> Tensor:
    """Same as :func:`hyper_convolve` with the product ``H_norm H_norm^T`` precomputed."""
    return ad.leaky_relu(ad.matmul(ad.spmm(op, Z), W), slope)
