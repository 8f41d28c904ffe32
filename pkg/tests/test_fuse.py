import numpy as np
import pytest
from conftest import tiny_dataset

from mhcl import ndcore as nd
from mhcl.config import TrainConfig
from mhcl.data import build_subgraphs
from mhcl.fuse import adjacent_ratings, attention_weights, cross_rating_attend, fuse_views
from mhcl.gradcheck import check_gradients
from mhcl.harness import combine, loss_terms
from mhcl.model import MHCLModel


def leaky(x, slope=0.2):
    return x if x > 0 else slope * x


def attend_oracle(views, queries, slope=0.2):
    n_r = len(views)
    out = []
    for r in range(n_r):
        nbrs = [k for k in (r - 1, r + 1) if 0 <= k < n_r]
        res = views[r].copy()
        for i in range(views[r].shape[0]):
            logits = np.array([leaky(float(views[k][i] @ queries[r][:, 0]), slope) for k in nbrs])
            lam = np.exp(logits - logits.max())
            lam /= lam.sum()
            for j, k in enumerate(nbrs):
                res[i] += lam[j] * views[k][i]
        out.append(res)
    return out


def tensors(arrays):
    return [nd.Tensor(a) for a in arrays]


class TestAttend:
    def test_adjacent_sets(self):
        assert adjacent_ratings(5, 0) == [1]
        assert adjacent_ratings(5, 2) == [1, 3]
        assert adjacent_ratings(5, 4) == [3]
        assert adjacent_ratings(1, 0) == []

    def test_equal_logits_split_evenly(self, rng):
        x = [rng.normal(size=(4, 3)) for _ in range(3)]
        x[2] = x[0].copy()
        q = [rng.normal(size=(3, 1)) for _ in range(3)]
        w = attention_weights(tensors(x), nd.Tensor(q[1]), [0, 2]).data
        np.testing.assert_allclose(w, 0.5, atol=1e-15)
        z = cross_rating_attend(tensors(x), tensors(q))[1].data
        np.testing.assert_allclose(z, x[1] + 0.5 * (x[0] + x[2]), atol=1e-12)

    def test_boundary_has_single_neighbour(self, rng):
        x = [rng.normal(size=(4, 3)) for _ in range(3)]
        q = [rng.normal(size=(3, 1)) for _ in range(3)]
        z = cross_rating_attend(tensors(x), tensors(q))
        np.testing.assert_allclose(z[0].data, x[0] + x[1], atol=1e-15)
        np.testing.assert_allclose(z[2].data, x[2] + x[1], atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_per_node_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = [rng.normal(size=(4, 3)) for _ in range(3)]
        q = [rng.normal(size=(3, 1)) for _ in range(3)]
        got = cross_rating_attend(tensors(x), tensors(q))
        for a, b in zip(got, attend_oracle(x, q)):
            np.testing.assert_allclose(a.data, b, atol=1e-12, rtol=0)

    def test_weights_sum_to_one(self, rng):
        x = tensors([rng.normal(size=(10, 4)) * 5 for _ in range(5)])
        for r in range(5):
            w = attention_weights(x, nd.Tensor(rng.normal(size=(4, 1))), adjacent_ratings(5, r)).data
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)

    def test_argmax_follows_raw_logits(self, rng):
        x = [rng.normal(size=(20, 4)) for _ in range(3)]
        q = rng.normal(size=(4, 1))
        w = attention_weights(tensors(x), nd.Tensor(q), [0, 2]).data
        raw = np.stack([np.where(x[k] @ q > 0, x[k] @ q, 0.2 * (x[k] @ q))[:, 0] for k in (0, 2)], axis=1)
        np.testing.assert_array_equal(w.argmax(axis=1), raw.argmax(axis=1))

    def test_scaling_a_neighbour_changes_weights(self, rng):
        x = [rng.normal(size=(6, 3)) for _ in range(3)]
        q = nd.Tensor(rng.normal(size=(3, 1)))
        before = attention_weights(tensors(x), q, [0, 2]).data
        x[0] = 3.0 * x[0]
        after = attention_weights(tensors(x), q, [0, 2]).data
        assert not np.allclose(before, after)


class TestFuse:
    def test_zero_views(self, rng):
        zero = [nd.Tensor(np.zeros((5, 3))) for _ in range(2)]
        w = [nd.Tensor(rng.normal(size=(3, 3))) for _ in range(4)]
        out = fuse_views(zero, None, *w, n_users=2)
        np.testing.assert_array_equal(out.z.data, 0.0)

    def test_identity_single_channel(self, rng):
        x = 0.1 * rng.normal(size=(5, 3))
        eye = nd.Tensor(np.eye(3))
        out = fuse_views([nd.Tensor(x)], None, eye, eye, eye, eye, n_users=2)
        np.testing.assert_allclose(out.z.data, np.tanh(x), atol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_composed_oracle(self, seed):
        rng = np.random.default_rng(seed)
        z = [rng.normal(size=(5, 3)) for _ in range(3)]
        g = [rng.normal(size=(5, 3)) for _ in range(3)]
        wz_u, wz_v, wg_u, wg_v = (rng.normal(size=(3, 3)) for _ in range(4))
        out = fuse_views(tensors(z), tensors(g), *tensors([wz_u, wz_v, wg_u, wg_v]), n_users=2)
        sz, sg = sum(z), sum(g)
        exp_z = np.tanh(np.vstack([sz[:2] @ wz_u, sz[2:] @ wz_v]))
        exp_g = np.tanh(np.vstack([sg[:2] @ wg_u, sg[2:] @ wg_v]))
        np.testing.assert_allclose(out.z.data, exp_z, atol=1e-12, rtol=0)
        np.testing.assert_allclose(out.gamma.data, exp_g, atol=1e-12, rtol=0)
        np.testing.assert_array_equal(out.e.data, out.z.data + out.gamma.data)
        assert np.all(np.abs(out.z.data) < 1) and np.all(np.abs(out.gamma.data) < 1)


class TestEndToEnd:
    def test_full_loss_gradients_six_nodes(self):
        ds = tiny_dataset(3, 3, seed=0)
        cfg = TrainConfig(d=2, L=2, K=3, seed=0, alpha=0.5, beta=0.5, lambda_nrr=0.1)
        model = MHCLModel(cfg, ds.n_users, ds.n_items, ds.categories)
        # xavier init is tiny; spread the tables so every term has signal
        for t in model.embeddings.tables:
            t.data *= 20.0
        graphs = build_subgraphs(ds)

        def loss():
            views = model.forward(graphs)
            return combine(loss_terms(model, views, ds, np.random.default_rng(0)), cfg)

        errs = check_gradients(loss, model.parameters())
        bad = {k: v for k, v in errs.items() if v > 1e-4}
        assert not bad, bad

    def test_threaded_forward_matches(self):
        ds = tiny_dataset(3, 3, seed=1)
        model = MHCLModel(TrainConfig(d=3, K=4), ds.n_users, ds.n_items, ds.categories)
        graphs = build_subgraphs(ds)
        np.testing.assert_array_equal(model.forward(graphs, 1).e.data, model.forward(graphs, 3).e.data)


class TestNodeDropout:
    def test_dropped_nodes_vanish_and_kept_nodes_scale(self):
        ds = tiny_dataset(3, 3, seed=2)
        model = MHCLModel(TrainConfig(d=2, L=0, K=2, dropout=0.5), ds.n_users, ds.n_items, ds.categories)
        graphs = build_subgraphs(ds)
        clean = model.forward(graphs).local
        masks = model.node_masks(np.random.default_rng(9))
        dropped = model.forward(graphs, rng=np.random.default_rng(9)).local
        for k in range(len(ds.categories)):
            np.testing.assert_array_equal(dropped[k].data, clean[k].data * masks[k])
            assert set(np.unique(masks[k])) <= {0.0, 2.0}

    def test_no_rng_means_no_dropout(self):
        ds = tiny_dataset(3, 3, seed=2)
        model = MHCLModel(TrainConfig(d=2, K=2, dropout=0.9), ds.n_users, ds.n_items, ds.categories)
        graphs = build_subgraphs(ds)
        np.testing.assert_array_equal(model.forward(graphs).e.data, model.forward(graphs).e.data)
        assert not np.array_equal(model.forward(graphs).e.data,
                                  model.forward(graphs, rng=np.random.default_rng(0)).e.data)
