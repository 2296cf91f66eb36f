"""Knowledge-enhanced item representations from hyper-relational statements.

Each statement ``(h, r, t, [(qr, qv), ...])`` becomes a token sequence
``[e_h, e_r, e_t, phi(e_qv1, e_qr1), ...]``. One relation-aware self-attention
pass refines the sequence; the refined head/relation/tail/qualifier vectors are
then aggregated per head entity.

Single-vector helpers use the column convention ``W @ x``; batched code uses
row-major ``X @ W.T`` so both agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import StatementStore

PHI_MODES = ("multiply", "subtract", "rotate")
ACTIVATIONS = {"tanh": ad.tanh, "leaky_relu": ad.leaky_relu, "identity": ad.identity}
VARIANTS = ("head_mean", "stare")

# token roles inside a statement sequence
HEAD, RELATION, TAIL, QUALIFIER, PAD = 0, 1, 2, 3, -1
# bias classes shared across statements: relation<->head, relation<->tail, relation<->qualifier
N_BIAS_CLASSES = 3


class ConfigError(ValueError):
    pass


@dataclass
class EncoderParams:
    entity_emb: Tensor
    relation_emb: Tensor
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    bias_K: Tensor  # (3, d)
    bias_V: Tensor  # (3, d)
    W_q: Tensor
    W_fwd: Tensor
    alpha: float = 0.5

    @classmethod
    def from_store(cls, params: Mapping[str, Tensor], alpha: float) -> "EncoderParams":
        return cls(
            params["entity_emb"], params["relation_emb"],
            params["W_Q"], params["W_K"], params["W_V"],
            params["bias_K"], params["bias_V"],
            params["W_q"], params["W_fwd"], alpha,
        )

    @property
    def dim(self) -> int:
        return self.entity_emb.shape[1]


# ---------------------------------------------------------------------------
# qualifier composition


def _rotation_selectors(d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    half = d // 2
    even = np.zeros((d, half))
    odd = np.zeros((d, half))
    even[2 * np.arange(half), np.arange(half)] = 1.0
    odd[2 * np.arange(half) + 1, np.arange(half)] = 1.0
    first = np.zeros((d, half))
    first[np.arange(half), np.arange(half)] = 1.0
    return even, odd, first


def compose(value: Tensor, rel: Tensor, mode: str = "multiply") -> Tensor:
    """phi(value, rel) along the last axis.

    ``rotate`` reads consecutive coordinate pairs of ``value`` as complex
    numbers and rotates pair ``k`` by the angle ``rel[..., k]`` (the first
    ``d/2`` coordinates of ``rel`` are the phases).
    """
    if mode == "multiply":
        return ad.hadamard(value, rel)
    if mode == "subtract":
        return ad.sub(value, rel)
    if mode == "rotate":
        d = value.shape[-1]
        if d % 2:
            raise ConfigError(f"rotate composition needs an even dimension, got d={d}")
        if value.data.ndim == 1:
            out = compose(ad.reshape(value, (1, d)), ad.reshape(rel, (1, d)), mode)
            return ad.reshape(out, (d,))
        even, odd, first = _rotation_selectors(d)
        re, im = ad.matmul(value, even), ad.matmul(value, odd)
        theta = ad.matmul(rel, first)
        c, s = ad.cos(theta), ad.sin(theta)
        out_re = ad.sub(ad.hadamard(re, c), ad.hadamard(im, s))
        out_im = ad.add(ad.hadamard(re, s), ad.hadamard(im, c))
        return ad.add(ad.matmul(out_re, even.T), ad.matmul(out_im, odd.T))
    raise ConfigError(f"unknown composition mode {mode!r}; expected one of {PHI_MODES}")


compose_qualifier = compose


# ---------------------------------------------------------------------------
# relation-aware self-attention


def bias_classes(roles: np.ndarray) -> np.ndarray:
    """One-hot (..., S, S, 3) bias class for each position pair given per-position roles."""
    roles = np.asarray(roles)
    ri, rj = roles[..., :, None], roles[..., None, :]
    other = np.where(ri == RELATION, rj, ri)
    pair_with_rel = (ri == RELATION) ^ (rj == RELATION)
    onehot = np.zeros(roles.shape + (roles.shape[-1], N_BIAS_CLASSES))
    for cls, role in enumerate((HEAD, TAIL, QUALIFIER)):
        onehot[..., cls] = pair_with_rel & (other == role)
    return onehot


def default_roles(S: int) -> np.ndarray:
    roles = np.full(S, QUALIFIER)
    roles[: min(S, 3)] = (HEAD, RELATION, TAIL)[: min(S, 3)]
    return roles


def attention_weights(E: Tensor, params: EncoderParams, roles: np.ndarray) -> Tensor:
    d = E.shape[-1]
    valid = roles != PAD
    onehot = bias_classes(roles)
    Q = ad.matmul(E, ad.transpose(params.W_Q))
    K = ad.matmul(E, ad.transpose(params.W_K))
    logits = ad.matmul(Q, ad.transpose(K))
    q_bias = ad.matmul(Q, ad.transpose(params.bias_K))  # (..., S, 3)
    if E.data.ndim == 2:
        logits = ad.add(logits, ad.einsum("ic,ijc->ij", q_bias, onehot))
    else:
        logits = ad.add(logits, ad.einsum("bic,bijc->bij", q_bias, onehot))
    logits = ad.scale(logits, 1.0 / math.sqrt(d))
    return ad.softmax(logits, mask=valid[..., None, :])


def relation_aware_attention(
    E: Tensor, params: EncoderParams, roles: np.ndarray | None = None
) -> Tensor:
    """Refine a statement sequence ``E`` of shape (S, d) or (B, S, d).

    ``roles`` marks each position as HEAD/RELATION/TAIL/QUALIFIER/PAD; by
    default positions 0, 1, 2 are head, relation, tail and the rest qualifiers.
    Padded positions are masked out as keys; their output rows are meaningless.
    """
    if roles is None:
        roles = default_roles(E.shape[-2])
        if E.data.ndim == 3:
            roles = np.broadcast_to(roles, E.shape[:2])
    roles = np.asarray(roles)
    weights = attention_weights(E, params, roles)
    V = ad.matmul(E, ad.transpose(params.W_V))
    out = ad.matmul(weights, V)
    onehot = bias_classes(roles)
    if E.data.ndim == 2:
        class_mass = ad.einsum("ij,ijc->ic", weights, onehot)
    else:
        class_mass = ad.einsum("bij,bijc->bic", weights, onehot)
    return ad.add(out, ad.matmul(class_mass, params.bias_V))


# ---------------------------------------------------------------------------
# qualifier merge, weighted sum


def merge_qualifiers(qual_vectors: Sequence[Tensor], W_q: Tensor) -> Tensor:
    """W_q @ sum(qual_vectors); the empty list gives the zero vector."""
    d = W_q.shape[0]
    if not qual_vectors:
        return Tensor(np.zeros(d))
    acc = qual_vectors[0]
    for x in qual_vectors[1:]:
        acc = ad.add(acc, x)
    return ad.reshape(ad.matmul(W_q, ad.reshape(acc, (d, 1))), (d,))


def gamma_mix(x_r: Tensor, x_qs: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return ad.add(ad.scale(x_r, alpha), ad.scale(x_qs, 1.0 - alpha))


# ---------------------------------------------------------------------------
# batched statement layout


@dataclass
class StatementLayout:
    """Padded token layout for every statement whose head is in ``heads``.

    Token ids index the table ``[entities; relations; composed qualifiers; zero row]``.
    """

    heads: np.ndarray  # entity id per segment
    segment: np.ndarray  # (B,) segment of each statement
    tokens: np.ndarray  # (B, S) token ids
    roles: np.ndarray  # (B, S)
    qual_rel: np.ndarray  # (nQ,)
    qual_val: np.ndarray  # (nQ,)
    counts: np.ndarray  # statements per segment
    n_entities: int
    n_relations: int

    @property
    def n_statements(self) -> int:
        return len(self.segment)

    def isolated_heads(self) -> np.ndarray:
        """Heads with no statements; the encoder passes their raw embedding through."""
        return self.heads[self.counts == 0]

    @classmethod
    def build(
        cls, store: StatementStore, heads: Sequence[int], n_entities: int, n_relations: int
    ) -> "StatementLayout":
        heads = np.asarray(heads, dtype=np.int64)
        rows, segment, qr, qv = [], [], [], []
        for seg, h in enumerate(heads.tolist()):
            for i in store.head_index.get(h, ()):
                st = store.statements[i]
                qual_tokens = []
                for rel, val in st.qualifiers:
                    qual_tokens.append(n_entities + n_relations + len(qr))
                    qr.append(rel)
                    qv.append(val)
                rows.append([st.head, n_entities + st.relation, st.tail] + qual_tokens)
                segment.append(seg)
        S = max((len(r) for r in rows), default=3)
        pad_token = n_entities + n_relations + len(qr)
        tokens = np.full((len(rows), S), pad_token, dtype=np.int64)
        roles = np.full((len(rows), S), PAD, dtype=np.int64)
        for b, r in enumerate(rows):
            tokens[b, : len(r)] = r
            roles[b, : len(r)] = default_roles(len(r))
        segment = np.asarray(segment, dtype=np.int64)
        return cls(
            heads=heads,
            segment=segment,
            tokens=tokens,
            roles=roles,
            qual_rel=np.asarray(qr, dtype=np.int64),
            qual_val=np.asarray(qv, dtype=np.int64),
            counts=np.bincount(segment, minlength=len(heads)),
            n_entities=n_entities,
            n_relations=n_relations,
        )


def encode_heads(
    layout: StatementLayout,
    params: EncoderParams,
    variant: str = "head_mean",
    phi: str = "multiply",
    activation: str = "tanh",
    attention: bool = True,
) -> Tensor:
    """Aggregated representation per head in ``layout.heads`` (rows in that order).

    Heads without statements fall back to their raw entity embedding.
    ``attention=False`` feeds the aggregator the unrefined input embeddings.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown aggregator variant {variant!r}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    f = ACTIVATIONS[activation]
    n_heads = len(layout.heads)
    raw = ad.gather_rows(params.entity_emb, layout.heads)
    if layout.n_statements == 0:
        return raw
    d = params.dim

    parts = [params.entity_emb, params.relation_emb]
    if len(layout.qual_rel):
        parts.append(
            compose(
                ad.gather_rows(params.entity_emb, layout.qual_val),
                ad.gather_rows(params.relation_emb, layout.qual_rel),
                phi,
            )
        )
    parts.append(Tensor(np.zeros((1, d))))
    table = ad.concat_rows(parts)
    E = ad.gather_rows(table, layout.tokens)  # (B, S, d)

    X = relation_aware_attention(E, params, layout.roles) if attention else E
    x_h = X[:, HEAD, :]
    x_r = X[:, RELATION, :]
    x_t = X[:, TAIL, :]
    qual_mask = (layout.roles == QUALIFIER).astype(np.float64)
    x_qs = ad.matmul(ad.einsum("bsd,bs->bd", X, qual_mask), ad.transpose(params.W_q))
    mixed = gamma_mix(x_r, x_qs, params.alpha)
    msg = ad.matmul(compose(x_t, mixed, phi), ad.transpose(params.W_fwd))
    pre = ad.segment_sum(msg, layout.segment, n_heads)
    if variant == "head_mean":
        inv = np.where(layout.counts > 0, 1.0 / np.maximum(layout.counts, 1), 0.0)
        head_mean = ad.hadamard(ad.segment_sum(x_h, layout.segment, n_heads), inv[:, None])
        pre = ad.add(head_mean, pre)
    has = (layout.counts > 0).astype(np.float64)[:, None]
    return ad.add(ad.hadamard(f(pre), has), ad.hadamard(raw, 1.0 - has))


def aggregate_head(
    h: int,
    store: StatementStore,
    params: EncoderParams,
    variant: str = "head_mean",
    phi: str = "multiply",
    activation: str = "tanh",
    attention: bool = True,
) -> Tensor:
    layout = StatementLayout.build(
        store, [h], params.entity_emb.shape[0], params.relation_emb.shape[0]
    )
    return encode_heads(layout, params, variant, phi, activation, attention)[0]


def encode_all_items(
    store: StatementStore,
    item_entity: np.ndarray,
    params: EncoderParams,
    variant: str = "head_mean",
    phi: str = "multiply",
    activation: str = "tanh",
    attention: bool = True,
) -> Tensor:
    layout = StatementLayout.build(
        store, item_entity, params.entity_emb.shape[0], params.relation_emb.shape[0]
    )
    return encode_heads(layout, params, variant, phi, activation, attention)
