"""Rating-error and top-k ranking metrics."""
from __future__ import annotations

import numpy as np

from .errors import ContractError


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ContractError("cannot score an empty split")
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ContractError("cannot score an empty split")
    return float(np.mean(np.abs(pred - target)))


def grouped_mse(pred, target, groups, labels) -> dict:
    """MSE per group label; groups with no members map to NaN."""
    pred, target, groups = np.asarray(pred, float), np.asarray(target, float), np.asarray(groups)
    out = {}
    for label in labels:
        sel = groups == label
        out[label] = float(np.mean((pred[sel] - target[sel]) ** 2)) if sel.any() else float("nan")
    return out


def rank_items(scores, excluded=None):
    """Item order per user: descending score, ties by ascending item id; excluded items go last."""
    scores = np.array(scores, dtype=np.float64, copy=True)
    if excluded is not None:
        scores[excluded] = -np.inf
    # stable sort on the negated score keeps ascending ids among ties
    return np.argsort(-scores, axis=1, kind="stable")


def ranking_metrics(scores, relevant, excluded=None, k: int = 10):
    """Mean MRR@k and NDCG@k with binary relevance over users that have any relevant item.

    ``scores``: users x items; ``relevant`` and ``excluded``: boolean masks of the same shape.
    Returns ``(mrr, ndcg, n_users_scored)``.
    """
    relevant = np.asarray(relevant, dtype=bool)
    users = np.flatnonzero(relevant.any(axis=1))
    if len(users) == 0:
        return 0.0, 0.0, 0
    ex = None if excluded is None else np.asarray(excluded, dtype=bool)[users]
    order = rank_items(np.asarray(scores)[users], ex)[:, :k]
    hits = np.take_along_axis(relevant[users], order, axis=1)
    if ex is not None:
        hits &= ~np.take_along_axis(ex, order, axis=1)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    # accumulate rank by rank so the sum order is fixed (matmul may reassociate)
    dcg = np.zeros(len(users))
    for pos in range(hits.shape[1]):
        dcg += np.where(hits[:, pos], discounts[pos], 0.0)
    n_rel = np.minimum(relevant[users].sum(axis=1), k)
    idcg = np.cumsum(discounts)[n_rel - 1]
    first = np.where(hits.any(axis=1), hits.argmax(axis=1) + 1, 0)
    rr = np.where(first > 0, 1.0 / np.maximum(first, 1), 0.0)
    return float(rr.mean()), float((dcg / idcg).mean()), len(users)
