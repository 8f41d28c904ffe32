"""Training loop with early stopping, evaluation and long-tail reports."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .checkpoint import Checkpoint
from .config import TrainConfig, worker_count
from .data import COHORTS, RatingDataset, assign_cohorts, build_subgraphs
from .errors import ContractError, DivergenceError
from .metrics import grouped_mse, mae, mse, ranking_metrics
from .model import MHCLModel
from .objective import (
    LossWeights,
    balanced_ce,
    bpr_loss,
    cross_rating_loss,
    decode,
    decoder_logits,
    global_local_infonce,
    nrr_penalty,
    ordinal_ce,
    total_loss,
)

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    mse: float = float("nan")
    mae: float = float("nan")
    mrr_at_10: float = float("nan")
    ndcg_at_10: float = float("nan")
    per_cohort: dict = field(default_factory=dict)
    per_rating: dict = field(default_factory=dict)

    def lines(self):
        out = []
        for key in ("mse", "mae", "mrr_at_10", "ndcg_at_10"):
            value = getattr(self, key)
            if not math.isnan(value):
                out.append(f"{key}={value:.6f}")
        out += [f"mse_cohort_{k}={v:.6f}" for k, v in self.per_cohort.items()]
        out += [f"mse_rating_{k}={v:.6f}" for k, v in self.per_rating.items()]
        return out


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    model: MHCLModel


def loss_weights(cfg: TrainConfig) -> LossWeights:
    beta = cfg.beta if cfg.use_hypergraph else 0.0
    return LossWeights(cfg.alpha, beta, cfg.lambda_nrr, cfg.tau, cfg.gamma, cfg.l_close)


def _train_sets(dataset: RatingDataset):
    sets = [set() for _ in range(dataset.n_users)]
    for u, v in zip(dataset.train.users, dataset.train.items):
        sets[u].add(int(v))
    return sets


def sample_negatives(users, seen, n_items, rng):
    """One uniformly drawn item per user that the user has not interacted with in training."""
    out = rng.integers(0, n_items, size=len(users))
    for i, u in enumerate(users):
        if len(seen[u]) >= n_items:
            raise ContractError(f"user {u} has interacted with every item; no negative exists")
        while int(out[i]) in seen[u]:
            out[i] = rng.integers(0, n_items)
    return out


def loss_terms(model: MHCLModel, views, dataset: RatingDataset, rng, seen=None) -> dict:
    """Named loss terms for one full-batch step; disabled terms are omitted."""
    cfg = model.config
    w = loss_weights(cfg)
    m = dataset.n_users
    train = dataset.train
    cap = cfg.cl_neg_samples or None
    terms = {}
    if cfg.task == "completion":
        logits = decoder_logits(views.e, train.users, train.items, model.decoders, m)
        log_prob = nd.log_softmax_rows(logits)
        idx = dataset.category_index(train.ratings)
        if cfg.main_loss == "oce":
            ordinal_ce(log_prob, idx)
        terms["main"] = balanced_ce(log_prob, idx, cfg.l_close if cfg.main_loss == "bce" else 0.0)
    else:
        seen = seen if seen is not None else _train_sets(dataset)
        neg = sample_negatives(train.users, seen, dataset.n_items, rng)
        e = views.e
        terms["main"] = bpr_loss(
            nd.index_rows(e, train.users), nd.index_rows(e, train.items + m), nd.index_rows(e, neg + m),
            cfg.bpr_reg, model.embeddings.tables,
        )
    if w.alpha > 0 and len(views.local) > 1:
        terms["cross_rating"] = cross_rating_loss(views.local, m, w.tau, cap, rng)
    if w.beta > 0 and views.fused.gamma is not None:
        terms["global_local"] = global_local_infonce(views.fused.z, views.fused.gamma, w.gamma, m, cap, rng)
    if w.lambda_nrr > 0 and len(model.embeddings) > 1:
        terms["nrr"] = nrr_penalty(model.embeddings.tables)
    return terms


def combine(terms: dict, cfg: TrainConfig):
    return total_loss(terms["main"], terms.get("cross_rating"), terms.get("global_local"),
                      terms.get("nrr"), loss_weights(cfg))


# evaluation --------------------------------------------------------------------


def completion_predictions(model, e, split):
    e_data = e.data if isinstance(e, nd.Tensor) else e
    m = model.n_users
    pred = decode(e_data[split.users], e_data[split.items + m], model.decoders, model.categories)
    return pred.expected_rating


def _completion_report(model, e, split) -> MetricsReport:
    if len(split) == 0:
        raise ContractError("cannot evaluate an empty split")
    pred = completion_predictions(model, e, split)
    return MetricsReport(mse=mse(pred, split.ratings), mae=mae(pred, split.ratings))


def _recommendation_report(model, e, dataset, split, k=10) -> MetricsReport:
    e_data = e.data if isinstance(e, nd.Tensor) else e
    m, n = dataset.n_users, dataset.n_items
    scores = e_data[:m] @ e_data[m:].T
    relevant = np.zeros((m, n), dtype=bool)
    relevant[split.users, split.items] = True
    excluded = np.zeros((m, n), dtype=bool)
    excluded[dataset.train.users, dataset.train.items] = True
    mrr, ndcg, _ = ranking_metrics(scores, relevant & ~excluded, excluded, k)
    return MetricsReport(mrr_at_10=mrr, ndcg_at_10=ndcg)


def _resolve(model_or_ckpt, dataset):
    if isinstance(model_or_ckpt, Checkpoint):
        return model_from_checkpoint(model_or_ckpt, dataset)
    return model_or_ckpt


def model_from_checkpoint(ckpt: Checkpoint, dataset: RatingDataset | None = None) -> MHCLModel:
    if dataset is not None:
        n_users, n_items, cats = dataset.n_users, dataset.n_items, dataset.categories
    else:
        n_users, n_items = int(ckpt.meta["n_users"]), int(ckpt.meta["n_items"])
        cats = tuple(int(c) for c in ckpt.meta["categories"].split(","))
    return ckpt.apply_to(MHCLModel(ckpt.config, n_users, n_items, cats))


def final_embeddings(model, dataset, workers=None):
    graphs = build_subgraphs(dataset)
    with nd.no_grad():
        return model.forward(graphs, workers or worker_count()).e.data


def evaluate_completion(model_or_ckpt, dataset: RatingDataset, split: str = "test", workers=None) -> MetricsReport:
    model = _resolve(model_or_ckpt, dataset)
    return _completion_report(model, final_embeddings(model, dataset, workers), getattr(dataset, split))


def evaluate_recommendation(model_or_ckpt, dataset: RatingDataset, split: str = "test", k: int = 10,
                            workers=None) -> MetricsReport:
    model = _resolve(model_or_ckpt, dataset)
    return _recommendation_report(model, final_embeddings(model, dataset, workers), dataset,
                                  getattr(dataset, split), k)


def report_longtail(model_or_ckpt, dataset: RatingDataset, split: str = "test", workers=None) -> MetricsReport:
    """Test MSE broken down by user cohort and by true rating."""
    model = _resolve(model_or_ckpt, dataset)
    part = getattr(dataset, split)
    pred = completion_predictions(model, final_embeddings(model, dataset, workers), part)
    cohorts = assign_cohorts(dataset)
    groups = np.array([cohorts.labels[u] for u in part.users])
    report = MetricsReport(mse=mse(pred, part.ratings), mae=mae(pred, part.ratings))
    report.per_cohort = grouped_mse(pred, part.ratings, groups, COHORTS)
    report.per_rating = grouped_mse(pred, part.ratings, part.ratings, dataset.categories)
    return report


# training ----------------------------------------------------------------------


def train(config: TrainConfig, dataset: RatingDataset, workers=None, verbose=False,
          initial: Checkpoint | None = None) -> TrainResult:
    """Full-batch Adam with early stopping on validation MSE (completion) or NDCG@10.

    Each epoch's validation score is measured on the same forward pass used for the
    gradient step, i.e. for the parameters before that step; the best such parameters
    are what the returned checkpoint holds.
    """
    if len(dataset.train) == 0 or len(dataset.val) == 0:
        raise ContractError("training needs non-empty train and validation splits")
    workers = workers or worker_count()
    graphs = build_subgraphs(dataset)
    model = MHCLModel(config, dataset.n_users, dataset.n_items, dataset.categories)
    if initial is not None:
        initial.apply_to(model)
    params = model.parameters()
    state = nd.AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    seen = _train_sets(dataset) if config.task == "recommendation" else None
    higher_is_better = config.task == "recommendation"
    best, best_ckpt, stale, log = None, None, 0, []
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        views = model.forward(graphs, workers, rng)
        terms = loss_terms(model, views, dataset, rng, seen)
        for name, term in terms.items():
            if not np.isfinite(term.item()):
                raise DivergenceError(f"epoch {epoch}: loss term {name!r} is {term.item()}")
        loss = combine(terms, config)
        # with dropout on, score the same parameters on the intact graph
        if config.dropout > 0:
            with nd.no_grad():
                e_eval = model.forward(graphs, workers).e
        else:
            e_eval = views.e
        if config.task == "completion":
            score = _completion_report(model, e_eval, dataset.val).mse
        else:
            score = _recommendation_report(model, e_eval, dataset, dataset.val).ndcg_at_10
        improved = best is None or (score > best if higher_is_better else score < best)
        if improved:
            best, stale = score, 0
            best_ckpt = Checkpoint.from_model(model, score, state)
            best_ckpt.tensors["cache.e"] = e_eval.data.copy()
        else:
            stale += 1
        grads = nd.backward(loss)
        nd.adam_step(params, grads, state)
        entry = {"epoch": epoch, "loss": loss.item(), "val": score,
                 **{k: v.item() for k, v in terms.items()}, "seconds": time.perf_counter() - started}
        log.append(entry)
        if verbose:
            logger.info(" ".join(f"{k}={v:.5f}" if isinstance(v, float) else f"{k}={v}" for k, v in entry.items()))
        if stale >= config.patience:
            break
    best_ckpt.meta.update(epochs_run=len(log))
    best_ckpt.meta.setdefault("user_ids", "\t".join(map(str, dataset.user_ids)))
    best_ckpt.meta.setdefault("item_ids", "\t".join(map(str, dataset.item_ids)))
    best_ckpt.apply_to(model)
    return TrainResult(best_ckpt, log, model)
