import json

import numpy as np
import pytest

from graf import autodiff as ad
from graf.attention import (
    AttentionBundle,
    AttentionHyperparams,
    HierarchicalAttention,
    association_softmax,
    extract_averaged_attention,
    han_predict,
    train_attention_model,
)
from graf.autodiff import Tensor
from graf.graph import AssociationNetwork, DatasetBundle, Splits
from graf.metrics import classification_metrics

from conftest import max_gradient_error

SMALL = dict(hidden_size=8, heads=2, semantic_dim=6, dropout=0.0)


def small_model(n_features, names, seed=0, **kw):
    hp = AttentionHyperparams(**{**SMALL, **kw})
    return HierarchicalAttention(n_features, 3, names, hp, seed)


def random_network(name, n, p, rng):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    src, dst = zip(*pairs) if pairs else ((), ())
    return AssociationNetwork.from_pairs(name, n, src, dst)


def planted_two_association(seed):
    """12 nodes; one association links same-label nodes only, the other is random."""
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], 6)
    pure = [(i, j) for i in range(12) for j in range(i + 1, 12) if labels[i] == labels[j]]
    nets = [AssociationNetwork.from_pairs("pure", 12, *zip(*pure)), random_network("random", 12, 0.45, rng)]
    x = rng.normal(size=(12, 4))
    perm = rng.permutation(12)
    train = np.sort(np.r_[perm[labels[perm] == 0][:3], perm[labels[perm] == 1][:3]])
    rest = np.setdiff1d(np.arange(12), train)
    return DatasetBundle(x, labels, nets, Splits(train, rest[::2], rest[1::2]))


class TestNodeAttention:
    def test_isolated_node_attends_to_itself(self):
        net = AssociationNetwork.from_pairs("X", 3, [0], [1])
        model = small_model(4, ["X"])
        h = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        alpha, z = model.node_attention(h, net.edges, model.attention["X"][0])
        loop = np.flatnonzero((net.edges.rows == 2) & (net.edges.cols == 2))
        assert alpha.values[loop] == 1.0
        np.testing.assert_allclose(z.values[2], ad.elu(h.values[2]).values)

    def test_identical_features_give_uniform_attention(self):
        rng = np.random.default_rng(1)
        net = random_network("X", 7, 0.5, rng)
        model = small_model(3, ["X"])
        h = Tensor(np.tile(rng.normal(size=model.hp.head_dim), (7, 1)))
        alpha, _ = model.node_attention(h, net.edges, model.attention["X"][0])
        deg = np.bincount(net.edges.rows)
        np.testing.assert_allclose(alpha.values, 1.0 / deg[net.edges.rows])

    def test_three_node_hand_evaluation(self):
        net = AssociationNetwork.from_pairs("X", 3, [0, 1], [1, 2])
        model = small_model(2, ["X"])
        a = np.array([[0.3, -0.5], [0.8, 0.1]])
        h = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
        alpha, z = model.node_attention(Tensor(h), net.edges, Tensor(a))
        a_self, a_nbr = a[:, 0], a[:, 1]
        lrelu = lambda v: v if v >= 0 else 0.2 * v
        expected = {}
        for i in range(3):
            nbrs = [j for j in range(3) if net.to_dense()[i, j]]
            e = np.array([lrelu(h[i] @ a_self + h[j] @ a_nbr) for j in nbrs])
            w = np.exp(e) / np.exp(e).sum()
            expected.update({(i, j): wj for j, wj in zip(nbrs, w)})
            agg = sum(wj * h[j] for j, wj in zip(nbrs, w))
            np.testing.assert_allclose(z.values[i], np.where(agg > 0, agg, np.expm1(agg)), rtol=1e-12)
        got = {(int(i), int(j)): v for i, j, v in zip(net.edges.rows, net.edges.cols, alpha.values)}
        assert got.keys() == expected.keys()
        for k in got:
            assert got[k] == pytest.approx(expected[k], rel=1e-12)


class TestAssociationAttention:
    def test_single_association(self):
        model = small_model(3, ["X"])
        _, beta, _ = model.association_attention([Tensor(np.ones((4, 8)))])
        np.testing.assert_array_equal(beta.values, [1.0])

    def test_identical_embeddings(self):
        model = small_model(3, ["X", "Y"])
        z = Tensor(np.random.default_rng(2).normal(size=(5, 8)))
        _, beta, _ = model.association_attention([z, z])
        np.testing.assert_allclose(beta.values, [0.5, 0.5])

    def test_closed_form_softmax(self):
        beta = association_softmax(Tensor([np.log(2.0), np.log(1.0)])).values
        np.testing.assert_allclose(beta, [2 / 3, 1 / 3], rtol=1e-12)

    def test_empty(self):
        model = small_model(3, ["X"])
        with pytest.raises(ValueError):
            model.association_attention([])


def test_full_forward_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    nets = [random_network("A", 10, 0.3, rng), random_network("B", 10, 0.4, rng)]
    model = small_model(5, ["A", "B"], hidden_size=4, semantic_dim=3)
    x = Tensor(rng.normal(size=(10, 5)))
    labels = rng.integers(3, size=10)
    loss = lambda: ad.cross_entropy(model.forward(x, nets).logits, labels, np.arange(6))
    assert max_gradient_error(loss, model.parameters) < 1e-4


def test_normalization_and_asymmetry(planted):
    hp = AttentionHyperparams(**SMALL, max_epochs=15)
    run = train_attention_model(planted, hp, seed=2)
    assert sum(run.attention.beta.values()) == pytest.approx(1.0, abs=1e-6)
    asymmetric = False
    for net in planted.associations:
        alpha = run.attention.alpha[net.name]
        np.testing.assert_allclose(np.bincount(net.edges.rows, weights=alpha), 1.0, atol=1e-6)
        lookup = {(i, j): a for i, j, a in zip(net.edges.rows, net.edges.cols, alpha)}
        asymmetric |= any(abs(lookup[(i, j)] - lookup[(j, i)]) > 1e-6 for (i, j) in lookup)
    assert asymmetric


def test_permuting_associations_permutes_beta(planted):
    hp = AttentionHyperparams(**SMALL, max_epochs=10, patience=100)
    a = train_attention_model(planted, hp, seed=4)
    reversed_bundle = DatasetBundle(planted.features, planted.labels, planted.associations[::-1], planted.splits)
    b = train_attention_model(reversed_bundle, hp, seed=4)
    for name in a.attention.beta:
        assert a.attention.beta[name] == pytest.approx(b.attention.beta[name], abs=1e-9)
        np.testing.assert_allclose(a.attention.alpha[name], b.attention.alpha[name], atol=1e-9)


def test_pure_association_wins():
    hp = AttentionHyperparams(**{**SMALL, "semantic_dim": 8}, max_epochs=100, patience=100)
    wins = 0
    for seed in range(10):
        run = train_attention_model(planted_two_association(seed), hp, seed)
        wins += run.attention.beta["pure"] > run.attention.beta["random"]
    assert wins >= 9


class TestAveraging:
    def test_single_repeat_equals_run(self, planted):
        hp = AttentionHyperparams(**SMALL, max_epochs=5)
        single = train_attention_model(planted, hp, 11).attention
        avg = extract_averaged_attention(planted, hp, 1, [11])
        assert avg.beta == single.beta
        for k in single.alpha:
            np.testing.assert_array_equal(avg.alpha[k], single.alpha[k])

    def test_arithmetic(self):
        edges = {"A": ad.EdgeList([0], [0], 1), "B": ad.EdgeList([0], [0], 1)}
        one = AttentionBundle({"A": np.array([1.0]), "B": np.array([1.0])}, {"A": 0.6, "B": 0.4}, edges)
        two = AttentionBundle({"A": np.array([1.0]), "B": np.array([1.0])}, {"A": 0.4, "B": 0.6}, edges)
        avg = AttentionBundle.average([one, two])
        assert avg.beta == pytest.approx({"A": 0.5, "B": 0.5})
        assert avg.repeats == 2

    def test_averaged_still_normalised(self, planted):
        hp = AttentionHyperparams(**SMALL, max_epochs=5)
        avg = extract_averaged_attention(planted, hp, 3, [1, 2, 3])
        assert sum(avg.beta.values()) == pytest.approx(1.0, abs=1e-6)
        for net in planted.associations:
            np.testing.assert_allclose(np.bincount(net.edges.rows, weights=avg.alpha[net.name]), 1.0, atol=1e-6)

    def test_bad_repeats(self, planted):
        with pytest.raises(ValueError):
            extract_averaged_attention(planted, AttentionHyperparams(**SMALL), 0, [])


def test_attention_json_roundtrip(tmp_path, planted):
    hp = AttentionHyperparams(**SMALL, max_epochs=3)
    att = train_attention_model(planted, hp, 0).attention
    path = att.save(tmp_path / "attention.json")
    data = json.loads(path.read_text())
    assert set(data) >= {"beta", "alpha", "repeats"}
    assert len(data["alpha"]["PAP"][0]) == 3
    back = AttentionBundle.load(path)
    for k in att.alpha:
        np.testing.assert_array_equal(back.alpha[k], att.alpha[k])
        np.testing.assert_array_equal(back.edges[k].rows, att.edges[k].rows)
    assert back.beta == att.beta


def test_han_perfect_information():
    rng = np.random.default_rng(0)
    labels = np.arange(30) % 3
    pairs = [(i, j) for i in range(30) for j in range(i + 1, 30) if labels[i] == labels[j] and rng.random() < 0.3]
    nets = [AssociationNetwork.from_pairs("A", 30, *zip(*pairs))]
    perm = rng.permutation(30)
    bundle = DatasetBundle(np.eye(3)[labels], labels, nets, Splits(perm[:12], perm[12:18], perm[18:]))
    hp = AttentionHyperparams(hidden_size=8, heads=2, semantic_dim=4, dropout=0.0, learning_rate=0.05,
                              max_epochs=100)
    pred, _ = han_predict(bundle, hp, seed=1)
    assert classification_metrics(labels[bundle.splits.test], pred, 3).accuracy == 1.0
