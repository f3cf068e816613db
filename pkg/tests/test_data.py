"""Dataset generators, TU loading, splits, normalization, serialization."""

import json

import numpy as np
import pytest

from graphdm import data

HOUSE_EDGES = {(0, 1), (1, 2), (2, 3), (0, 3), (2, 4), (3, 4)}
CYCLE_EDGES = {(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)}


def _assert_graph_invariants(g: data.Graph):
    a = g.adjacency
    assert a.shape == (g.n, g.n)
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert g.features.shape[0] == g.n


# ---------------------------------------------------------------------------
# BA-Motif
# ---------------------------------------------------------------------------

def test_ba_motif_statistics():
    ds = data.gen_ba_motif(1000, 7)
    assert len(ds.graphs) == 1000
    assert ds.num_classes == 2
    assert all(g.n == 25 for g in ds.graphs)
    # base tree 19 edges + motif (6 house / 5 cycle) + 1 attachment, so the
    # directed-count average is exactly (52 + 50) / 2
    avg_directed = np.mean([2 * g.num_edges() for g in ds.graphs])
    assert avg_directed == 51.0
    assert abs(avg_directed - 50.93) < 0.5


def test_ba_motif_two_graphs_one_per_class():
    ds = data.gen_ba_motif(2, 1)
    assert sorted(g.label for g in ds.graphs) == [0, 1]


def test_ba_motif_rejects_odd_count():
    with pytest.raises(ValueError):
        data.gen_ba_motif(3, 0)


def _motif_block_edges(g: data.Graph) -> set:
    block = g.adjacency[20:, 20:]
    return {(i, j) for i in range(5) for j in range(i + 1, 5) if block[i, j]}


def test_ba_motif_motif_blocks():
    ds = data.gen_ba_motif(60, 3)
    for g in ds.graphs:
        want = HOUSE_EDGES if g.label == 0 else CYCLE_EDGES
        assert _motif_block_edges(g) == want
        cross = g.adjacency[:20, 20:]
        assert cross.sum() == 1.0  # exactly one attachment edge


def test_ba_motif_invariants_and_determinism():
    a = data.gen_ba_motif(60, 11)
    b = data.gen_ba_motif(60, 11)
    for ga, gb in zip(a.graphs, b.graphs):
        _assert_graph_invariants(ga)
        assert np.array_equal(ga.adjacency, gb.adjacency)
        assert ga.label == gb.label
    counts = [sum(1 for g in a.graphs if g.label == c) for c in range(2)]
    assert counts[0] == counts[1]


# ---------------------------------------------------------------------------
# BA-LRP
# ---------------------------------------------------------------------------

def test_ba_lrp_shapes_and_degree_ordering():
    ds = data.gen_ba_lrp(200, 7)
    assert len(ds.graphs) == 200
    assert all(g.n == 20 for g in ds.graphs)
    for g in ds.graphs[:50]:
        _assert_graph_invariants(g)
    max_deg = {0: [], 1: []}
    for g in ds.graphs[:100]:
        max_deg[g.label].append(g.adjacency.sum(axis=1).max())
    assert np.mean(max_deg[1]) > np.mean(max_deg[0])


def test_ba_lrp_two_graphs():
    ds = data.gen_ba_lrp(2, 1)
    assert sorted(g.label for g in ds.graphs) == [0, 1]
    with pytest.raises(ValueError):
        data.gen_ba_lrp(5, 1)


# ---------------------------------------------------------------------------
# Shape
# ---------------------------------------------------------------------------

def test_shape_statistics():
    ds = data.gen_shape(100, 7)
    assert len(ds.graphs) == 100
    assert ds.num_classes == 4
    counts = [sum(1 for g in ds.graphs if g.label == c) for c in range(4)]
    assert counts == [25, 25, 25, 25]
    for g in ds.graphs[:40]:
        _assert_graph_invariants(g)


def test_star_and_wheel_edge_counts():
    ds = data.gen_shape(40, 5)
    for g in ds.graphs:
        if g.label == data.SHAPE_CLASSES.index("star"):
            assert g.num_edges() == g.n - 1
            assert g.adjacency.sum(axis=1).max() == g.n - 1
        if g.label == data.SHAPE_CLASSES.index("wheel"):
            assert g.num_edges() == 2 * (g.n - 1)


def test_grid_4x5_has_31_edges():
    # lattice edge count r(c-1) + c(r-1) = 4*4 + 5*3
    a = data._grid(4, 5)
    assert a.sum() / 2 == 31


def test_shape_rejects_non_multiple_of_4():
    with pytest.raises(ValueError):
        data.gen_shape(10, 0)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def test_split_1000_ba_motif():
    ds = data.gen_ba_motif(1000, 7)
    train, test = data.split_dataset(ds, 0.85, seed=0)
    assert len(train) == 850 and len(test) == 150
    for c in range(2):
        assert sum(1 for i in train if ds.graphs[i].label == c) == 425
        assert sum(1 for i in test if ds.graphs[i].label == c) == 75


def test_split_deterministic_and_disjoint():
    ds = data.gen_ba_motif(100, 2)
    a = data.split_dataset(ds, 0.85, seed=9)
    b = data.split_dataset(ds, 0.85, seed=9)
    assert a == b
    train, test = a
    assert set(train).isdisjoint(test)
    assert sorted(train + test) == list(range(100))


def test_split_floor_rule_on_125_63():
    # class sizes 125/63: floor(125*.85)=106, floor(63*.85)=53 -> 159 train,
    # 29 test, matching a 188-graph two-class corpus
    graphs = []
    for i in range(188):
        label = 0 if i < 125 else 1
        a = np.zeros((2, 2))
        a[0, 1] = a[1, 0] = 1.0
        graphs.append(data.Graph(n=2, adjacency=a, features=np.eye(2), label=label))
    ds = data.GraphDataset("toy", 2, 2, graphs)
    train, test = data.split_dataset(ds, 0.85, seed=4)
    assert len(train) == 159 and len(test) == 29


def test_split_rejects_tiny_class():
    ds = data.gen_ba_motif(2, 1)
    with pytest.raises(ValueError):
        data.split_dataset(ds, 0.85, seed=0)


def test_apply_split_roundtrip():
    ds = data.gen_ba_motif(20, 1)
    train, test = data.split_dataset(ds, 0.85, seed=0)
    ds.apply_split(train, test)
    assert ds.train_indices() == train
    assert ds.test_indices() == test


# ---------------------------------------------------------------------------
# normalization and surrogate features
# ---------------------------------------------------------------------------

def test_normalize_single_node():
    assert np.array_equal(data.normalize_adjacency(np.zeros((1, 1))), [[1.0]])


def test_normalize_one_edge():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(data.normalize_adjacency(a), [[0.5, 0.5], [0.5, 0.5]])


def test_normalize_relaxed_range_and_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.uniform(size=(6, 6))
        a = (a + a.T) / 2
        np.fill_diagonal(a, 0.0)
        out = data.normalize_adjacency(a)
        assert np.allclose(out, out.T)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_surrogate_index_features():
    f = data.surrogate_index_features(3, 5)
    assert np.array_equal(f, np.eye(5)[:3])
    assert np.array_equal(f.sum(axis=1), np.ones(3))
    assert np.array_equal(data.surrogate_index_features(1, 1), [[1.0]])
    with pytest.raises(ValueError):
        data.surrogate_index_features(4, 3)


# ---------------------------------------------------------------------------
# TU-format loading
# ---------------------------------------------------------------------------

def _write_tu_fixture(root, name="TINY"):
    d = root / name
    d.mkdir()
    # graph 1: nodes 1,2 with one edge; graph 2: nodes 3,4,5 path
    (d / f"{name}_A.txt").write_text(
        "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n")
    (d / f"{name}_graph_indicator.txt").write_text("1\n1\n2\n2\n2\n")
    (d / f"{name}_graph_labels.txt").write_text("3\n7\n")
    (d / f"{name}_node_labels.txt").write_text("0\n2\n1\n0\n2\n")
    return d


def test_tu_loader_tiny_fixture(tmp_path):
    ds = data.load_tu_dataset(_write_tu_fixture(tmp_path))
    assert len(ds.graphs) == 2
    assert ds.num_classes == 2
    assert ds.semantic_features
    g1, g2 = ds.graphs
    assert g1.n == 2 and g1.num_edges() == 1
    assert g1.adjacency[0, 1] == 1.0 and g1.adjacency[1, 0] == 1.0
    assert g2.n == 3
    assert {tuple(e) for e in g2.edge_list()} == {(0, 1), (1, 2)}
    # labels 3/7 remap to 0/1 by sorted order
    assert (g1.label, g2.label) == (0, 1)
    # node types one-hot over 3 observed types
    assert ds.feature_dim == 3
    assert np.array_equal(g1.features, [[1, 0, 0], [0, 0, 1]])


def test_tu_loader_missing_file(tmp_path):
    d = _write_tu_fixture(tmp_path)
    (d / "TINY_graph_labels.txt").unlink()
    with pytest.raises(FileNotFoundError, match="graph_labels"):
        data.load_tu_dataset(d)


def test_tu_loader_edge_across_graphs_names_location(tmp_path):
    d = _write_tu_fixture(tmp_path)
    (d / "TINY_A.txt").write_text("1, 2\n2, 1\n2, 3\n3, 2\n3, 4\n4, 3\n4, 5\n5, 4\n")
    with pytest.raises(ValueError, match=r"TINY_A\.txt:3"):
        data.load_tu_dataset(d)


def test_tu_loader_malformed_line(tmp_path):
    d = _write_tu_fixture(tmp_path)
    (d / "TINY_A.txt").write_text("1, x\n")
    with pytest.raises(ValueError, match=r"TINY_A\.txt:1"):
        data.load_tu_dataset(d)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_dataset_json_roundtrip_and_byte_determinism(tmp_path):
    ds = data.gen_ba_motif(10, 5)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    data.save_dataset(ds, p1)
    data.save_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = data.load_dataset(p1)
    assert back.name == ds.name
    assert back.num_classes == ds.num_classes
    assert back.feature_dim == ds.feature_dim
    for ga, gb in zip(ds.graphs, back.graphs):
        assert np.array_equal(ga.adjacency, gb.adjacency)
        assert np.array_equal(ga.features, gb.features)
        assert ga.label == gb.label


def test_dataset_json_schema(tmp_path):
    ds = data.gen_ba_motif(4, 5)
    p = tmp_path / "d.json"
    data.save_dataset(ds, p)
    doc = json.loads(p.read_text())
    assert set(doc) == {"name", "num_classes", "feature_dim", "graphs"}
    g = doc["graphs"][0]
    assert set(g) == {"n", "edges", "features", "label"}
    assert g["features"] is None  # index features are rebuilt, not stored
    assert all(i < j for i, j in g["edges"])


def test_dataset_or_path(tmp_path):
    ds = data.gen_ba_motif(4, 5)
    p = tmp_path / "d.json"
    data.save_dataset(ds, p)
    assert len(data.dataset_or_path(str(p)).graphs) == 4
    tu = _write_tu_fixture(tmp_path)
    assert len(data.dataset_or_path(str(tu)).graphs) == 2
    with pytest.raises(FileNotFoundError):
        data.dataset_or_path(str(tmp_path / "nope.json"))
