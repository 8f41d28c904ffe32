"""Per-rating initial node embeddings and parameter-free propagation on rating subgraphs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import ContractError

ID_SLOT, USER_SLOT, ITEM_SLOT, ONEHOT_OFFSET = 0, 1, 2, 3


@dataclass
class EmbeddingTable:
    """One trainable ``(M + N + 3) x d`` table per rating category."""

    tables: list
    n_users: int
    n_items: int
    d: int

    @property
    def d_model(self):
        return 3 * self.d

    def __len__(self):
        return len(self.tables)


def init_embeddings(dataset, d: int, seed=None, rng=None) -> EmbeddingTable:
    if d < 1:
        raise ContractError(f"embedding width must be >= 1, got {d}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    n_slots = dataset.n_users + dataset.n_items + 3
    tables = [
        nd.parameter(nd.xavier_init(n_slots, d, rng=rng), name=f"E.{k}")
        for k in range(len(dataset.categories))
    ]
    return EmbeddingTable(tables, dataset.n_users, dataset.n_items, d)


def slot_indices(n_users: int, n_items: int):
    n = n_users + n_items
    identical = np.full(n, ID_SLOT, dtype=np.int64)
    role = np.concatenate([np.full(n_users, USER_SLOT), np.full(n_items, ITEM_SLOT)]).astype(np.int64)
    onehot = ONEHOT_OFFSET + np.arange(n, dtype=np.int64)
    return identical, role, onehot


def initial_features(table, n_users: int, n_items: int):
    """Row i is ``[E[identical], E[role(i)], E[3 + i]]``; users come first, then items."""
    identical, role, onehot = slot_indices(n_users, n_items)
    return nd.concat_cols([nd.index_rows(table, identical), nd.index_rows(table, role), nd.index_rows(table, onehot)])


@dataclass
class LocalEmbeddings:
    layers: list
    combined: object


def layer_weights(n_layers: int, theta: float) -> np.ndarray:
    w = theta ** np.arange(n_layers + 1, dtype=np.float64)
    return w / w.sum()


def propagate(x0, graph, n_layers: int, theta: float = 0.5) -> LocalEmbeddings:
    """Run ``n_layers`` rounds of normalized neighbour summation and combine layers.

    ``graph`` is a Subgraph (or any object with a sparse ``adjacency``); the output
    ``combined`` is the theta-geometric weighted average of all layers including layer 0.
    """
    if n_layers < 0:
        raise ContractError(f"layer count must be >= 0, got {n_layers}")
    if not 0.0 < theta <= 1.0:
        raise ContractError(f"theta must lie in (0, 1], got {theta}")
    adjacency = getattr(graph, "adjacency", graph)
    layers = [x0]
    for _ in range(n_layers):
        layers.append(nd.spmm(adjacency, layers[-1]))
    if n_layers == 0:
        return LocalEmbeddings(layers, x0)
    weights = layer_weights(n_layers, theta)
    combined = nd.scalar_mul(layers[0], weights[0])
    for w, layer in zip(weights[1:], layers[1:]):
        combined = nd.add(combined, nd.scalar_mul(layer, w))
    return LocalEmbeddings(layers, combined)
