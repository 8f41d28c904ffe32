"""Attention over adjacent rating channels and the final local/global fusion."""
from __future__ import annotations

from dataclasses import dataclass

from . import ndcore as nd


def adjacent_ratings(n_ratings: int, r: int) -> list[int]:
    return [k for k in (r - 1, r + 1) if 0 <= k < n_ratings]


def attention_weights(views, query, neighbours, slope: float = 0.2):
    """Per-node softmax over neighbouring channels of LeakyReLU(view_row . query)."""
    logits = nd.concat_cols([nd.leaky_relu(nd.matmul(views[k], query), slope) for k in neighbours])
    return nd.rowwise_softmax(logits, 1.0)


def cross_rating_attend(views, queries, slope: float = 0.2):
    """``out[r] = views[r] + sum_k weight_k * views[k]`` over the channels adjacent to r."""
    out = []
    for r, view in enumerate(views):
        neighbours = adjacent_ratings(len(views), r)
        if not neighbours:
            out.append(view)
            continue
        weights = attention_weights(views, queries[r], neighbours, slope)
        acc = view
        for j, k in enumerate(neighbours):
            acc = nd.add(acc, nd.mul(nd.slice_cols(weights, j, j + 1), views[k]))
        out.append(acc)
    return out


@dataclass
class FusedEmbeddings:
    z: object
    gamma: object | None
    e: object


def _fuse_one(views, w_user, w_item, n_users):
    total = views[0]
    for v in views[1:]:
        total = nd.add(total, v)
    n = total.rows
    users = nd.matmul(nd.slice_rows(total, 0, n_users), w_user)
    items = nd.matmul(nd.slice_rows(total, n_users, n), w_item)
    return nd.tanh_op(nd.concat_rows([users, items]))


def fuse_views(local_views, global_views, wz_user, wz_item, wg_user, wg_item, n_users: int) -> FusedEmbeddings:
    """Sum channels, apply the side-specific linear map and tanh, then add the two views.

    With ``global_views`` set to None the global path is skipped and ``e = z``.
    """
    z = _fuse_one(local_views, wz_user, wz_item, n_users)
    if global_views is None:
        return FusedEmbeddings(z, None, z)
    gamma = _fuse_one(global_views, wg_user, wg_item, n_users)
    return FusedEmbeddings(z, gamma, nd.add(z, gamma))
