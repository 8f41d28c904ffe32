"""Learned soft hypergraphs over users and items, and spectral hypergraph convolution."""
from __future__ import annotations

from dataclasses import dataclass

from . import ndcore as nd
from .errors import ContractError

DEGREE_FLOOR = 1e-12


@dataclass
class HypergraphPair:
    users: object  # M x K membership
    items: object  # N x K membership


def learn_hypergraph(x, weight, slope: float = 0.2, temperature: float = 1.0):
    """Soft hyperedge membership: row-wise softmax of LeakyReLU(x @ W) / temperature."""
    if weight.cols < 1:
        raise ContractError("need at least one hyperedge")
    return nd.rowwise_softmax(nd.leaky_relu(nd.matmul(x, weight), slope), temperature)


def hyper_conv(membership, x, degree_floor: float = DEGREE_FLOOR):
    """``H @ diag(1 / colsum(H)) @ H.T @ x``: nodes pool into hyperedges and back."""
    degree = nd.clamp_min(nd.reduce_sum(membership, axis=0), degree_floor)
    edges = nd.matmul(nd.transpose(membership), x)
    edges = nd.div(edges, nd.transpose(degree))
    return nd.matmul(membership, edges)


def global_embeddings(x, w_user, w_item, n_users: int, slope: float = 0.2, temperature: float = 1.0):
    """Hypergraph view of one rating channel; users and items get separate hypergraphs."""
    n = x.rows
    x_u = nd.slice_rows(x, 0, n_users)
    x_v = nd.slice_rows(x, n_users, n)
    h_u = learn_hypergraph(x_u, w_user, slope, temperature)
    h_v = learn_hypergraph(x_v, w_item, slope, temperature)
    out = nd.concat_rows([hyper_conv(h_u, x_u), hyper_conv(h_v, x_v)])
    return out, HypergraphPair(h_u, h_v)
