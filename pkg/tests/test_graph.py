import json

import numpy as np
import pytest

from graf.graph import (
    AssociationNetwork,
    CompositionError,
    EdgeRangeError,
    LabelRangeError,
    MissingFileError,
    RaggedFeaturesError,
    SplitError,
    Splits,
    TypedGraph,
    compose_meta_path,
    generate_splits,
    load_dataset,
    load_original_splits,
    write_dataset,
)

from oracles import walk_adjacency


def test_pap_hand_example():
    g = TypedGraph({"P": 3, "A": 1})
    g.add_relation("P", "A", [0, 1], [0, 0])
    net = compose_meta_path(g, ["P", "A", "P"])
    arcs = set(zip(net.edges.rows.tolist(), net.edges.cols.tolist()))
    assert arcs == {(0, 1), (1, 0), (0, 0), (1, 1), (2, 2)}
    assert net.name == "PAP"


def test_no_typed_edges_gives_self_loops():
    g = TypedGraph({"P": 4, "A": 2})
    g.add_relation("P", "A", [], [])
    net = compose_meta_path(g, ["P", "A", "P"])
    np.testing.assert_array_equal(net.to_dense(), np.eye(4))


def test_unknown_type_pair():
    g = TypedGraph({"P": 2, "A": 1, "S": 1})
    g.add_relation("P", "A", [0], [0])
    with pytest.raises(CompositionError):
        compose_meta_path(g, ["P", "S", "P"])


def test_path_must_start_and_end_at_anchor():
    g = TypedGraph({"P": 2, "A": 1})
    g.add_relation("P", "A", [0], [0])
    with pytest.raises(CompositionError):
        compose_meta_path(g, ["P", "A"])


def test_relation_endpoint_range():
    g = TypedGraph({"P": 2, "A": 1})
    with pytest.raises(EdgeRangeError):
        g.add_relation("P", "A", [2], [0])


def test_reverse_relation_is_used_transposed():
    g = TypedGraph({"P": 3, "A": 2})
    g.add_relation("A", "P", [0, 0, 1], [0, 2, 1])
    net = compose_meta_path(g, ["P", "A", "P"])
    assert net.to_dense()[0, 2] == 1 and net.to_dense()[0, 1] == 0


@pytest.mark.parametrize("trial", range(20))
def test_composition_matches_walk_enumeration(trial):
    rng = np.random.default_rng(trial)
    counts = {"P": int(rng.integers(2, 9)), "A": int(rng.integers(1, 6)), "S": int(rng.integers(1, 5))}
    g = TypedGraph(counts)
    typed = {}
    for a, b in (("P", "A"), ("A", "S")):
        m = int(rng.integers(0, 10))
        s, t = rng.integers(counts[a], size=m), rng.integers(counts[b], size=m)
        g.add_relation(a, b, s, t)
        typed[(a, b)] = (s, t)
    for path in (["P", "A", "P"], ["P", "A", "S", "A", "P"]):
        net = compose_meta_path(g, path)
        np.testing.assert_array_equal(net.to_dense().astype(bool), walk_adjacency(counts, typed, path))


def test_network_invariants():
    net = AssociationNetwork.from_pairs("X", 5, [0, 1, 1], [1, 2, 2])
    a = net.to_dense()
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.diag(a) == 1)
    assert net.num_arcs == 4 + 5 and net.num_pairs == 2 + 5
    np.testing.assert_array_equal(net.neighbors(1), [0, 1, 2])


class TestSplits:
    def test_sizes(self):
        labels = np.repeat([0, 1], 50)
        s = generate_splits(labels, 0.2, seed=0)
        assert (s.test.size, s.train.size, s.val.size) == (20, 16, 64)

    @pytest.mark.parametrize("fraction", [0.2, 0.4, 0.6, 0.8])
    def test_stratified_partition(self, fraction):
        rng = np.random.default_rng(1)
        labels = rng.choice(3, size=157, p=[0.5, 0.3, 0.2])
        s = generate_splits(labels, fraction, seed=4)
        joined = np.concatenate([s.train, s.val, s.test])
        np.testing.assert_array_equal(np.sort(joined), np.arange(labels.size))
        overall = np.bincount(labels) / labels.size
        for part in (s.train, s.val, s.test):
            counts = np.bincount(labels[part], minlength=3)
            assert np.all(counts >= 1)
            assert np.all(np.abs(counts - overall * part.size) <= 1.0 + 1e-9)

    def test_deterministic_and_shared_test(self):
        labels = np.arange(60) % 3
        a, b = generate_splits(labels, 0.4, 7), generate_splits(labels, 0.4, 7)
        for x, y in zip(a.as_dict().values(), b.as_dict().values()):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(generate_splits(labels, 0.8, 7).test, a.test)

    def test_tiny_class(self):
        with pytest.raises(SplitError):
            generate_splits(np.array([0, 0, 0, 0, 1, 1]), 0.5, 0)

    def test_minimum_class_size(self):
        s = generate_splits(np.array([0] * 3 + [1] * 20), 0.5, 0)
        for part in s.as_dict().values():
            assert 0 in np.array([0] * 3 + [1] * 20)[part]


def _write_small(tmp_path, **over):
    parts = dict(
        features=np.arange(12.0).reshape(4, 3),
        labels=[0, 1, 0, 1],
        relations={"PA": ([0, 1, 2], [0, 0, 1])},
        meta_paths=[["P", "A", "P"]],
        splits=Splits([0, 1], [2], [3]),
    )
    parts.update(over)
    return write_dataset(tmp_path, **parts)


class TestLoading:
    def test_roundtrip(self, tmp_path):
        d = _write_small(tmp_path)
        b = load_dataset(d)
        assert b.n == 4 and b.features.shape == (4, 3) and b.n_classes == 2
        np.testing.assert_array_equal(b.splits.train, [0, 1])
        assert b.associations[0].name == "PAP"
        assert b.summary()["associations"]["PAP"] == {"arcs": 6, "pairs": 5}

    def test_empty_directory(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_dataset(tmp_path)

    def test_ragged_features(self, tmp_path):
        d = _write_small(tmp_path)
        (d / "features.csv").write_text("1,2,3\n4,5\n1,1,1\n2,2,2\n")
        with pytest.raises(RaggedFeaturesError):
            load_dataset(d)

    def test_label_out_of_range(self, tmp_path):
        d = _write_small(tmp_path)
        (d / "labels.tsv").write_text("0\t0\n1\t1\n2\t0\n7\t1\n")
        with pytest.raises(LabelRangeError):
            load_dataset(d)

    def test_edge_out_of_range(self, tmp_path):
        d = _write_small(tmp_path)
        (d / "edges_PA.tsv").write_text("0\t0\n9\t0\n")
        with pytest.raises(EdgeRangeError):
            load_dataset(d)

    def test_overlapping_original_splits(self, tmp_path):
        d = _write_small(tmp_path)
        (d / "split_val.txt").write_text("1\n2\n")
        with pytest.raises(SplitError):
            load_original_splits(d)

    def test_multi_letter_types(self, tmp_path):
        d = _write_small(tmp_path, relations={"paper-author": ([0, 1], [0, 0])},
                         meta_paths=[["paper", "author", "paper"]])
        assert load_dataset(d).associations[0].name == "paper-author-paper"

    def test_meta_paths_file_is_json_list(self, tmp_path):
        d = _write_small(tmp_path)
        assert json.loads((d / "meta_paths.json").read_text()) == [["P", "A", "P"]]
