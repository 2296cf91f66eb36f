"""Parameter store and the full forward pass.

Layer 0 users come from the user table, layer 0 items from the hyper-relational
encoder. Each layer then runs a bipartite propagation hop, builds user/item
dependency hypergraphs from the hop's output, convolves over them and adds the
two views. Final representations average all layers, layer 0 included.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainingConfig
from .data import Dataset, InteractionGraph
from .encoder import N_BIAS_CLASSES, EncoderParams, StatementLayout, encode_heads
from .hypergraph import DENSE_LIMIT, convolve_with, dependency_operator
from .propagation import final_representation, fuse, normalized_adjacency

log = logging.getLogger(__name__)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def param_shapes(n_users: int, n_entities: int, n_relations: int, config: TrainingConfig):
    d = config.dim
    shapes = {
        "user_emb": (n_users, d),
        "entity_emb": (n_entities, d),
        "relation_emb": (n_relations, d),
        "W_Q": (d, d),
        "W_K": (d, d),
        "W_V": (d, d),
        "bias_K": (N_BIAS_CLASSES, d),
        "bias_V": (N_BIAS_CLASSES, d),
        "W_q": (d, d),
        "W_fwd": (d, d),
    }
    for l in range(config.layers):
        shapes[f"W_hyper_{l}"] = (d, d)
    return shapes


def init_params(
    n_users: int, n_entities: int, n_relations: int, config: TrainingConfig, seed: int | None = None
) -> dict[str, Tensor]:
    """Xavier-uniform weights and embeddings, zero attention biases. Deterministic per seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(n_users, n_entities, n_relations, config).items():
        data = np.zeros(shape) if name.startswith("bias_") else xavier(rng, *shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


@dataclass
class Structure:
    """Everything about a dataset that is constant across steps."""

    graph: InteractionGraph
    adjacency: sp.csr_matrix | np.ndarray
    adjacency_t: sp.csr_matrix | np.ndarray
    layout: StatementLayout

    @classmethod
    def build(cls, dataset: Dataset, graph: InteractionGraph | None = None) -> "Structure":
        graph = graph if graph is not None else dataset.graph
        A = normalized_adjacency(graph)
        layout = StatementLayout.build(
            dataset.store, dataset.item_entity, dataset.n_entities, dataset.n_relations
        )
        isolated = layout.isolated_heads()
        if len(isolated):
            log.info(
                "%d of %d items have no statements and keep their raw entity embedding: %s",
                len(isolated), len(layout.heads), isolated[:10].tolist(),
            )
        if max(A.shape) <= DENSE_LIMIT:
            A = A.toarray()
            return cls(graph, A, np.ascontiguousarray(A.T), layout)
        return cls(graph, A, sp.csr_matrix(A.T), layout)


@dataclass
class ForwardResult:
    user_layers: list[Tensor] = field(default_factory=list)  # fused, incl. layer 0
    item_layers: list[Tensor] = field(default_factory=list)
    user_local: list[Tensor] = field(default_factory=list)  # propagation output per layer
    item_local: list[Tensor] = field(default_factory=list)
    user_global: list[Tensor] = field(default_factory=list)  # hypergraph output per layer
    item_global: list[Tensor] = field(default_factory=list)
    user_final: Tensor | None = None
    item_final: Tensor | None = None
    operators: list = field(default_factory=list)  # (user op, item op) used at each layer


def encode_items(structure: Structure, params: dict[str, Tensor], config: TrainingConfig) -> Tensor:
    enc = EncoderParams.from_store(params, config.alpha)
    return encode_heads(
        structure.layout,
        enc,
        variant=config.variant,
        phi=config.phi,
        activation=config.activation,
        attention=not config.no_sa,
    )


def forward_pass(
    structure: Structure,
    params: dict[str, Tensor],
    config: TrainingConfig,
    operators: list | None = None,
) -> ForwardResult:
    """Run every layer; ``operators`` (as in ``ForwardResult.operators``) pins the hypergraphs.

    Hypergraph structure is a constant of the step, so gradient checks pass the
    operators of the unperturbed point to compare like with like.
    """
    out = ForwardResult()
    zu = params["user_emb"]
    zv = encode_items(structure, params, config)
    out.user_layers.append(zu)
    out.item_layers.append(zv)
    frozen = None
    for l in range(config.layers):
        lu = ad.spmm(structure.adjacency, zv)
        lv = ad.spmm(structure.adjacency_t, zu)
        out.user_local.append(lu)
        out.item_local.append(lv)
        if config.hypergraph:
            if operators is not None:
                ops = operators[l]
            elif frozen is not None and config.no_dh:
                ops = frozen
            else:
                ops = (
                    dependency_operator(lu.data, config.K, config.include_self),
                    dependency_operator(lv.data, config.K, config.include_self),
                )
                if frozen is None:
                    frozen = ops
            out.operators.append(ops)
            W = params[f"W_hyper_{l}"]
            gu = convolve_with(ops[0], lu, W, config.leaky_slope)
            gv = convolve_with(ops[1], lv, W, config.leaky_slope)
            out.user_global.append(gu)
            out.item_global.append(gv)
            zu, zv = fuse(lu, gu), fuse(lv, gv)
        else:
            zu, zv = lu, lv
        out.user_layers.append(zu)
        out.item_layers.append(zv)
    out.user_final = final_representation(out.user_layers)
    out.item_final = final_representation(out.item_layers)
    return out
