"""Parameter container and forward pass wiring embed -> hyper -> fuse."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import ndcore as nd
from .config import TrainConfig
from .embed import init_embeddings, initial_features, propagate
from .fuse import FusedEmbeddings, cross_rating_attend, fuse_views
from .hyper import global_embeddings


@dataclass
class ViewEmbeddings:
    local: list
    global_: list | None
    z_channels: list
    gamma_channels: list | None
    fused: FusedEmbeddings

    @property
    def e(self):
        return self.fused.e


class MHCLModel:
    """All trainable tensors, created in a fixed order from a single seeded generator."""

    def __init__(self, config: TrainConfig, n_users: int, n_items: int, categories):
        self.config = config
        self.n_users = n_users
        self.n_items = n_items
        self.categories = tuple(categories)
        rng = np.random.default_rng(config.seed)
        n_r = len(self.categories)
        dm = config.d_model
        shape = SimpleNamespace(n_users=n_users, n_items=n_items, categories=self.categories)
        self.embeddings = init_embeddings(shape, config.d, rng=rng)

        def make(name, rows, cols):
            return nd.parameter(nd.xavier_init(rows, cols, rng=rng), name=name)

        self.hyper_user = [make(f"Wh_u.{k}", dm, config.K) for k in range(n_r)]
        self.hyper_item = [make(f"Wh_v.{k}", dm, config.K) for k in range(n_r)]
        self.q_local = [make(f"q_local.{k}", dm, 1) for k in range(n_r)]
        self.q_global = [make(f"q_global.{k}", dm, 1) for k in range(n_r)]
        self.wz_user = make("Wz_u", dm, dm)
        self.wz_item = make("Wz_v", dm, dm)
        self.wg_user = make("Wg_u", dm, dm)
        self.wg_item = make("Wg_v", dm, dm)
        self.decoders = [make(f"Q.{k}", dm, dm) for k in range(n_r)]

    def parameters(self) -> list:
        params = list(self.embeddings.tables)
        if self.config.use_hypergraph:
            params += self.hyper_user + self.hyper_item
        params += self.q_local
        if self.config.use_hypergraph:
            params += self.q_global
        params += [self.wz_user, self.wz_item]
        if self.config.use_hypergraph:
            params += [self.wg_user, self.wg_item]
        params += self.decoders
        return params

    def all_parameters(self) -> list:
        """Every tensor, including ones unused when the hypergraph path is disabled."""
        return (list(self.embeddings.tables) + self.hyper_user + self.hyper_item + self.q_local
                + self.q_global + [self.wz_user, self.wz_item, self.wg_user, self.wg_item] + self.decoders)

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.all_parameters()}

    def node_masks(self, rng) -> list:
        """One inverted-dropout row multiplier per channel: a dropped node loses its own
        features and every message it would send in that channel for this step."""
        p = self.config.dropout
        n = self.n_users + self.n_items
        return [(rng.random((n, 1)) >= p) / (1.0 - p) for _ in self.categories]

    def _channel(self, k, graphs, masks=None):
        cfg = self.config
        x0 = initial_features(self.embeddings.tables[k], self.n_users, self.n_items)
        if masks is not None:
            x0 = nd.mul(x0, masks[k])
        local = propagate(x0, graphs[k], cfg.L, cfg.theta).combined
        glob = None
        if cfg.use_hypergraph:
            glob, _ = global_embeddings(local, self.hyper_user[k], self.hyper_item[k], self.n_users,
                                        cfg.leaky_slope, cfg.hyper_temperature)
        return local, glob

    def forward(self, graphs, workers: int = 1, rng=None) -> ViewEmbeddings:
        """Full forward pass. Channels may run on ``workers`` threads; results merge in rating order.

        Passing ``rng`` switches on node dropout (when the config asks for it).
        """
        ks = range(len(self.categories))
        masks = self.node_masks(rng) if rng is not None and self.config.dropout > 0 else None
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                channels = list(pool.map(lambda k: self._channel(k, graphs, masks), ks))
        else:
            channels = [self._channel(k, graphs, masks) for k in ks]
        local = [c[0] for c in channels]
        slope = self.config.leaky_slope
        z_channels = cross_rating_attend(local, self.q_local, slope)
        if self.config.use_hypergraph:
            glob = [c[1] for c in channels]
            gamma_channels = cross_rating_attend(glob, self.q_global, slope)
        else:
            glob = gamma_channels = None
        fused = fuse_views(z_channels, gamma_channels, self.wz_user, self.wz_item,
                           self.wg_user, self.wg_item, self.n_users)
        return ViewEmbeddings(local, glob, z_channels, gamma_channels, fused)
