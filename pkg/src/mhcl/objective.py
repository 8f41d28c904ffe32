"""Loss terms and the bilinear rating decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import ContractError


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.01
    beta: float = 0.01
    lambda_nrr: float = 0.01
    tau: float = 0.2
    gamma: float = 0.2
    l_close: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lambda_nrr) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.tau <= 0 or self.gamma <= 0:
            raise ContractError("temperatures must be positive")
        if not 0.0 <= self.l_close < 1.0:
            raise ContractError(f"l_close must lie in [0, 1), got {self.l_close}")


def _zero():
    return nd.Tensor(np.zeros((1, 1)))


def infonce(anchors, positives, temperature: float, max_anchors=None, rng=None):
    """Mean over anchors of ``-log exp(s_ii / t) / sum_{j != i} exp(s_ij / t)``.

    Rows are L2-normalized first, so ``s`` is cosine similarity. The positive pair is
    left out of the denominator. With fewer than two anchors the loss is 0.
    ``max_anchors`` subsamples anchors (and with them the negatives) uniformly.
    """
    n = anchors.rows
    if positives.rows != n:
        raise ContractError(f"views disagree on anchor count: {n} vs {positives.rows}")
    if max_anchors is not None and n > max_anchors:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(n, size=max_anchors, replace=False))
        anchors, positives, n = nd.index_rows(anchors, keep), nd.index_rows(positives, keep), max_anchors
    if n < 2:
        return _zero()
    a = nd.l2_normalize_rows(anchors)
    b = nd.l2_normalize_rows(positives)
    sim = nd.scalar_mul(nd.matmul(a, nd.transpose(b)), 1.0 / temperature)
    pos = nd.scalar_mul(nd.reduce_sum(nd.mul(a, b), axis=1), 1.0 / temperature)
    off_diag = ~np.eye(n, dtype=bool)
    per_anchor = nd.sub(nd.logsumexp_rows(sim, off_diag), pos)
    return nd.mean(per_anchor)


def cross_rating_infonce(x_k, x_next, tau: float, max_anchors=None, rng=None):
    return infonce(x_k, x_next, tau, max_anchors, rng)


def _sides(x, n_users):
    return nd.slice_rows(x, 0, n_users), nd.slice_rows(x, n_users, x.rows)


def cross_rating_loss(local_views, n_users: int, tau: float, max_anchors=None, rng=None):
    """Sum over adjacent channel pairs (k, k+1) and both node sides."""
    total = _zero()
    for k in range(len(local_views) - 1):
        for a, b in zip(_sides(local_views[k], n_users), _sides(local_views[k + 1], n_users)):
            total = nd.add(total, cross_rating_infonce(a, b, tau, max_anchors, rng))
    return total


def global_local_infonce(z, gamma_view, temperature: float, n_users: int, max_anchors=None, rng=None):
    """User-side plus item-side contrast between the local and global fused views."""
    total = _zero()
    for a, b in zip(_sides(z, n_users), _sides(gamma_view, n_users)):
        total = nd.add(total, infonce(a, b, temperature, max_anchors, rng))
    return total


# decoder -------------------------------------------------------------------------


def decoder_logits(e, users, items, decoders, n_users: int):
    """``logit[b, r] = e[user_b] . Q_r . e[item_b]`` for a batch of (user, item) pairs."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64) + n_users
    e_v = nd.index_rows(e, items)
    # project the user block once per category, then gather: far cheaper than per-pair products
    user_block = nd.slice_rows(e, 0, n_users)
    cols = [nd.reduce_sum(nd.mul(nd.index_rows(nd.matmul(user_block, q), users), e_v), axis=1) for q in decoders]
    return nd.concat_cols(cols)


@dataclass
class Prediction:
    prob: np.ndarray
    expected_rating: np.ndarray


def predict_from_logits(logits, categories) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    prob = np.exp(shifted)
    prob /= prob.sum(axis=-1, keepdims=True)
    return Prediction(prob, prob @ np.asarray(categories, dtype=np.float64))


def decode(e_u, e_v, decoders, categories) -> Prediction:
    """Rating distribution for row-aligned user and item embeddings (plain arrays)."""
    e_u = np.atleast_2d(np.asarray(e_u, dtype=np.float64))
    e_v = np.atleast_2d(np.asarray(e_v, dtype=np.float64))
    mats = [q.data if isinstance(q, nd.Tensor) else np.asarray(q) for q in decoders]
    logits = np.stack([np.sum((e_u @ q) * e_v, axis=1) for q in mats], axis=1)
    return predict_from_logits(logits, categories)


def soft_targets(true_index, n_categories: int, l_close: float) -> np.ndarray:
    """1 on the true category, ``l_close`` on its neighbours, renormalized to sum 1."""
    true_index = np.asarray(true_index, dtype=np.int64)
    if np.any(true_index < 0) or np.any(true_index >= n_categories):
        raise ContractError("true rating is not one of the declared categories")
    t = np.zeros((len(true_index), n_categories))
    rows = np.arange(len(true_index))
    t[rows, true_index] = 1.0
    for step in (-1, 1):
        nb = true_index + step
        ok = (nb >= 0) & (nb < n_categories)
        t[rows[ok], nb[ok]] = l_close
    return t / t.sum(axis=1, keepdims=True)


def balanced_ce(log_prob, true_index, l_close: float):
    """Mean over pairs of ``-sum_r target[r] * log p[r]`` with neighbour-smoothed targets.

    ``log_prob`` is a tensor of per-pair log-probabilities (rows sum to 1 after exp).
    """
    if not 0.0 <= l_close < 1.0:
        raise ContractError(f"l_close must lie in [0, 1), got {l_close}")
    target = soft_targets(true_index, log_prob.cols, l_close)
    return nd.scalar_mul(nd.reduce_sum(nd.mul(log_prob, target)), -1.0 / log_prob.rows)


def nrr_penalty(tables):
    """Mean squared Frobenius distance between tables of adjacent rating channels."""
    if len(tables) < 2:
        raise ContractError("node relation regularization needs at least two rating channels")
    total = _zero()
    for a, b in zip(tables[:-1], tables[1:]):
        total = nd.add(total, nd.frobenius_sq(nd.sub(a, b)))
    return nd.scalar_mul(total, 1.0 / (len(tables) - 1))


def total_loss(main, ls, lp, nrr, weights: LossWeights):
    total = main
    for w, term in ((weights.alpha, ls), (weights.beta, lp), (weights.lambda_nrr, nrr)):
        if w and term is not None:
            total = nd.add(total, nd.scalar_mul(term, w))
    return total


def bpr_loss(e_u, e_pos, e_neg, reg: float = 0.0, params=()):
    """Mean of ``-log sigmoid(<u, v+> - <u, v->)`` plus ``reg * sum ||p||^2`` over ``params``."""
    pos = nd.reduce_sum(nd.mul(e_u, e_pos), axis=1)
    neg = nd.reduce_sum(nd.mul(e_u, e_neg), axis=1)
    loss = nd.scalar_mul(nd.mean(nd.log_sigmoid(nd.sub(pos, neg))), -1.0)
    if reg:
        for p in params:
            loss = nd.add(loss, nd.scalar_mul(nd.frobenius_sq(p), reg))
    return loss


def ordinal_ce(*_args, **_kwargs):
    raise NotImplementedError("ordinal cross-entropy is not implemented; use main_loss=bce or ce")
