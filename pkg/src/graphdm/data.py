"""Benchmark graph datasets: generators, TU-format loading, splits, features.

All generators are written directly against numpy Generator streams so a
master seed reproduces every dataset bit-for-bit. Graphs are small dense
adjacency matrices; featureless datasets carry one-hot node-index rows
padded to the dataset-wide maximum node count so every graph shares one
feature dimensionality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad


@dataclass
class Graph:
    """Undirected graph: symmetric 0/1 adjacency, zero diagonal, node features."""

    n: int
    adjacency: np.ndarray  # (n, n) float64
    features: np.ndarray   # (n, d) float64
    label: int

    def edge_list(self) -> list[tuple[int, int]]:
        """Edges as (i, j) with i < j, each undirected edge once."""
        iu, ju = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, k=1).sum())


@dataclass
class GraphDataset:
    name: str
    num_classes: int
    feature_dim: int
    graphs: list[Graph]
    semantic_features: bool = False
    class_index: dict[int, list[int]] = field(default_factory=dict)
    split: list[str] | None = None  # per-graph "train"/"test" tag, set by apply_split

    def __post_init__(self):
        if not self.class_index:
            self.class_index = {c: [] for c in range(self.num_classes)}
            for i, g in enumerate(self.graphs):
                if not 0 <= g.label < self.num_classes:
                    raise ValueError(f"graph {i} label {g.label} outside 0..{self.num_classes - 1}")
                self.class_index[g.label].append(i)

    def subset(self, indices) -> list[Graph]:
        return [self.graphs[i] for i in indices]

    def apply_split(self, train_idx, test_idx) -> None:
        tags = [None] * len(self.graphs)
        for i in train_idx:
            tags[i] = "train"
        for i in test_idx:
            tags[i] = "test"
        if any(t is None for t in tags):
            raise ValueError("split does not cover every graph")
        self.split = tags

    def train_indices(self) -> list[int]:
        if self.split is None:
            raise ValueError("dataset has no split applied")
        return [i for i, t in enumerate(self.split) if t == "train"]

    def test_indices(self) -> list[int]:
        if self.split is None:
            raise ValueError("dataset has no split applied")
        return [i for i, t in enumerate(self.split) if t == "test"]


def validate_graph(g: Graph) -> None:
    """Raise if a graph violates the structural invariants."""
    a = g.adjacency
    if a.shape != (g.n, g.n):
        raise ValueError(f"adjacency shape {a.shape} does not match n={g.n}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency is not symmetric")
    if np.diag(a).any():
        raise ValueError("adjacency has nonzero diagonal")
    if not np.isin(a, (0.0, 1.0)).all():
        raise ValueError("adjacency entries must be 0 or 1")
    if g.features.ndim != 2 or g.features.shape[0] != g.n:
        raise ValueError(f"features shape {g.features.shape} does not match n={g.n}")


def graph_from_edges(n: int, edges, features: np.ndarray, label: int) -> Graph:
    a = np.zeros((n, n))
    for i, j in edges:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"invalid edge ({i}, {j}) for {n} nodes")
        a[i, j] = a[j, i] = 1.0
    return Graph(n=n, adjacency=a, features=features, label=label)


def surrogate_index_features(n: int, d_max: int) -> np.ndarray:
    """One-hot node-index features padded to d_max columns."""
    if n > d_max:
        raise ValueError(f"n={n} exceeds feature dimension d_max={d_max}")
    return np.eye(d_max)[:n]


def normalize_adjacency(a):
    """Symmetrically normalized adjacency with self-loops.

    Accepts a plain array (returns an array) or a DiffTensor from a relaxed
    adjacency (returns a DiffTensor so gradients flow through).
    """
    if isinstance(a, ad.DiffTensor):
        return ad.sym_normalize(a)
    return ad.sym_normalize(ad.constant(a)).data


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _grow_ba(rng: np.random.Generator, n: int, inverse: bool = False) -> np.ndarray:
    """Preferential-attachment tree: a seeded pair plus one edge per new node.

    Attachment weight is the current degree, or its reciprocal when
    `inverse` (new nodes then prefer low-degree targets).
    """
    a = np.zeros((n, n))
    a[0, 1] = a[1, 0] = 1.0
    deg = np.zeros(n)
    deg[0] = deg[1] = 1.0
    for v in range(2, n):
        w = 1.0 / deg[:v] if inverse else deg[:v].copy()
        target = int(rng.choice(v, p=w / w.sum()))
        a[v, target] = a[target, v] = 1.0
        deg[v] += 1.0
        deg[target] += 1.0
    return a


HOUSE_MOTIF_EDGES = [(0, 1), (1, 2), (2, 3), (0, 3), (2, 4), (3, 4)]  # 4-cycle + roof apex
CYCLE_MOTIF_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]

BA_MOTIF_BASE_NODES = 20
MOTIF_NODES = 5


def gen_ba_motif(n_graphs: int, seed: int) -> GraphDataset:
    """Binary motif dataset: BA tree base plus a house or five-cycle block.

    Each graph has 25 nodes: a 20-node preferential-attachment base, a
    5-node motif on the last five indices (class 0: house, class 1: cycle)
    and a single attachment edge between a uniform base node and a uniform
    motif node.
    """
    if n_graphs < 2 or n_graphs % 2:
        raise ValueError(f"n_graphs must be even and >= 2, got {n_graphs}")
    rng = np.random.default_rng(seed)
    n = BA_MOTIF_BASE_NODES + MOTIF_NODES
    ident = np.eye(n)
    graphs = []
    for i in range(n_graphs):
        label = i % 2
        a = np.zeros((n, n))
        a[:BA_MOTIF_BASE_NODES, :BA_MOTIF_BASE_NODES] = _grow_ba(rng, BA_MOTIF_BASE_NODES)
        motif = HOUSE_MOTIF_EDGES if label == 0 else CYCLE_MOTIF_EDGES
        for u, v in motif:
            a[BA_MOTIF_BASE_NODES + u, BA_MOTIF_BASE_NODES + v] = 1.0
            a[BA_MOTIF_BASE_NODES + v, BA_MOTIF_BASE_NODES + u] = 1.0
        base = int(rng.integers(0, BA_MOTIF_BASE_NODES))
        anchor = BA_MOTIF_BASE_NODES + int(rng.integers(0, MOTIF_NODES))
        a[base, anchor] = a[anchor, base] = 1.0
        graphs.append(Graph(n=n, adjacency=a, features=ident[:n], label=label))
    return GraphDataset("ba-motif", 2, n, graphs)


BA_LRP_NODES = 20


def gen_ba_lrp(n_graphs: int, seed: int) -> GraphDataset:
    """Binary growth-rule dataset on 20-node preferential-attachment trees.

    Class 0 grows attaching new nodes with weight 1/degree (hubs avoided),
    class 1 with weight degree (hubs reinforced).
    """
    if n_graphs < 2 or n_graphs % 2:
        raise ValueError(f"n_graphs must be even and >= 2, got {n_graphs}")
    rng = np.random.default_rng(seed)
    n = BA_LRP_NODES
    ident = np.eye(n)
    graphs = []
    for i in range(n_graphs):
        label = i % 2
        a = _grow_ba(rng, n, inverse=(label == 0))
        graphs.append(Graph(n=n, adjacency=a, features=ident, label=label))
    return GraphDataset("ba-lrp", 2, n, graphs)


SHAPE_CLASSES = ("lollipop", "wheel", "grid", "star")


def _lollipop(n: int) -> np.ndarray:
    # clique on the first n//2 nodes, path on the rest, joined by one edge
    k = n // 2
    a = np.zeros((n, n))
    a[:k, :k] = 1.0 - np.eye(k)
    for v in range(k, n - 1):
        a[v, v + 1] = a[v + 1, v] = 1.0
    a[k - 1, k] = a[k, k - 1] = 1.0
    return a


def _wheel(n: int) -> np.ndarray:
    # hub 0 joined to every rim node, rim 1..n-1 forms a cycle
    a = np.zeros((n, n))
    a[0, 1:] = a[1:, 0] = 1.0
    for v in range(1, n - 1):
        a[v, v + 1] = a[v + 1, v] = 1.0
    a[1, n - 1] = a[n - 1, 1] = 1.0
    return a


def _grid(rows: int, cols: int) -> np.ndarray:
    n = rows * cols
    a = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                a[v, v + 1] = a[v + 1, v] = 1.0
            if r + 1 < rows:
                a[v, v + cols] = a[v + cols, v] = 1.0
    return a


def _star(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    a[0, 1:] = a[1:, 0] = 1.0
    return a


def gen_shape(n_graphs: int, seed: int, n_range: tuple[int, int] = (20, 80)) -> GraphDataset:
    """Four-class structural dataset: lollipop, wheel, grid, star.

    Node counts are drawn uniformly from `n_range`; grids draw row and
    column counts so their sizes land in the same range.
    """
    if n_graphs < 4 or n_graphs % 4:
        raise ValueError(f"n_graphs must be a positive multiple of 4, got {n_graphs}")
    lo, hi = n_range
    if lo < 6 or hi < lo:
        raise ValueError(f"invalid node-count range {n_range}")
    rng = np.random.default_rng(seed)
    adjacencies = []
    for i in range(n_graphs):
        label = i % 4
        if label == 2:
            rows = int(rng.integers(4, 9))
            cols = int(rng.integers(5, 11))
            adjacencies.append((_grid(rows, cols), label))
        else:
            n = int(rng.integers(lo, hi + 1))
            builder = (_lollipop, _wheel, None, _star)[label]
            adjacencies.append((builder(n), label))
    d_max = max(a.shape[0] for a, _ in adjacencies)
    ident = np.eye(d_max)
    graphs = [Graph(n=a.shape[0], adjacency=a, features=ident[: a.shape[0]], label=lab)
              for a, lab in adjacencies]
    return GraphDataset("shape", 4, d_max, graphs)


GENERATORS = {
    "ba-motif": gen_ba_motif,
    "ba-lrp": gen_ba_lrp,
    "shape": gen_shape,
}


# ---------------------------------------------------------------------------
# TU-format loader
# ---------------------------------------------------------------------------

def _read_int_lines(path: Path, per_line: int) -> list[tuple[int, ...]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                values = tuple(int(p) for p in parts)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed line {line!r}") from None
            if len(values) != per_line:
                raise ValueError(f"{path}:{lineno}: expected {per_line} values, got {len(values)}")
            rows.append(values)
    return rows


def load_tu_dataset(directory) -> GraphDataset:
    """Load a TU-format dataset directory (adjacency, indicator, labels files).

    Node labels become one-hot features; graph labels are remapped to
    contiguous class ids by sorted raw value.
    """
    d = Path(directory)
    a_files = sorted(d.glob("*_A.txt"))
    if not a_files:
        raise FileNotFoundError(f"no *_A.txt file in {d}")
    prefix = a_files[0].name[: -len("_A.txt")]
    paths = {key: d / f"{prefix}_{key}.txt"
             for key in ("A", "graph_indicator", "graph_labels", "node_labels")}
    for key, p in paths.items():
        if not p.exists():
            raise FileNotFoundError(f"missing TU file {p}")

    indicator = [v[0] for v in _read_int_lines(paths["graph_indicator"], 1)]
    raw_graph_labels = [v[0] for v in _read_int_lines(paths["graph_labels"], 1)]
    raw_node_labels = [v[0] for v in _read_int_lines(paths["node_labels"], 1)]
    if len(raw_node_labels) != len(indicator):
        raise ValueError(f"{paths['node_labels']}: {len(raw_node_labels)} node labels "
                         f"for {len(indicator)} nodes")

    n_graphs = max(indicator)
    # global 1-based node id -> (graph id, local 0-based index)
    local_of = []
    counts = [0] * (n_graphs + 1)
    for gid in indicator:
        if not 1 <= gid <= n_graphs:
            raise ValueError(f"{paths['graph_indicator']}: graph id {gid} out of range")
        local_of.append((gid, counts[gid]))
        counts[gid] += 1

    label_values = sorted(set(raw_graph_labels))
    class_of = {v: c for c, v in enumerate(label_values)}
    node_values = sorted(set(raw_node_labels))
    type_of = {v: t for t, v in enumerate(node_values)}
    feature_dim = len(node_values)

    adjacencies = [np.zeros((counts[g], counts[g])) for g in range(1, n_graphs + 1)]
    with open(paths["A"]) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                u, v = int(parts[0]), int(parts[1])
            except (ValueError, IndexError):
                raise ValueError(f"{paths['A']}:{lineno}: malformed edge line {line!r}") from None
            if not (1 <= u <= len(local_of) and 1 <= v <= len(local_of)):
                raise ValueError(f"{paths['A']}:{lineno}: node id out of range")
            gu, lu = local_of[u - 1]
            gv, lv = local_of[v - 1]
            if gu != gv:
                raise ValueError(f"{paths['A']}:{lineno}: edge across graphs {gu} and {gv}")
            if lu == lv:
                raise ValueError(f"{paths['A']}:{lineno}: self-loop on node {u}")
            adjacencies[gu - 1][lu, lv] = 1.0
            adjacencies[gu - 1][lv, lu] = 1.0

    if len(raw_graph_labels) != n_graphs:
        raise ValueError(f"{paths['graph_labels']}: {len(raw_graph_labels)} labels "
                         f"for {n_graphs} graphs")

    node_types = [[] for _ in range(n_graphs)]
    for (gid, _), raw in zip(local_of, raw_node_labels):
        node_types[gid - 1].append(type_of[raw])
    eye = np.eye(feature_dim)
    graphs = []
    for g in range(n_graphs):
        feats = eye[np.asarray(node_types[g], dtype=np.intp)]
        graphs.append(Graph(n=counts[g + 1], adjacency=adjacencies[g],
                            features=feats, label=class_of[raw_graph_labels[g]]))
    return GraphDataset(prefix, len(label_values), feature_dim, graphs,
                        semantic_features=True)


# ---------------------------------------------------------------------------
# splits and serialization
# ---------------------------------------------------------------------------

def split_dataset(ds: GraphDataset, train_frac: float, seed: int) -> tuple[list[int], list[int]]:
    """Stratified train/test index split.

    Per class the train count is floor(class_size * train_frac); both sides
    must be non-empty, so classes need at least two graphs.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.num_classes):
        members = ds.class_index.get(c, [])
        if len(members) < 2:
            raise ValueError(f"class {c} has {len(members)} graphs; need at least 2 to split")
        order = rng.permutation(len(members))
        n_train = int(np.floor(len(members) * train_frac))
        n_train = min(max(n_train, 1), len(members) - 1)
        picked = [members[i] for i in order]
        train.extend(picked[:n_train])
        test.extend(picked[n_train:])
    return sorted(train), sorted(test)


def save_dataset(ds: GraphDataset, path) -> None:
    """Write the dataset JSON; index features are stored as null and rebuilt on load."""
    payload = {
        "name": ds.name,
        "num_classes": ds.num_classes,
        "feature_dim": ds.feature_dim,
        "graphs": [
            {
                "n": g.n,
                "edges": [[int(i), int(j)] for i, j in g.edge_list()],
                "features": g.features.tolist() if ds.semantic_features else None,
                "label": int(g.label),
            }
            for g in ds.graphs
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_dataset(path) -> GraphDataset:
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("name", "num_classes", "feature_dim", "graphs"):
        if key not in payload:
            raise ValueError(f"{path}: dataset file missing field {key!r}")
    # stored features mark a semantic dataset; null features are index one-hots
    semantic = any(rec.get("features") is not None for rec in payload["graphs"])
    d = int(payload["feature_dim"])
    ident = np.eye(d)
    graphs = []
    for k, rec in enumerate(payload["graphs"]):
        n = int(rec["n"])
        if rec.get("features") is not None:
            feats = np.asarray(rec["features"], dtype=np.float64)
        else:
            if n > d:
                raise ValueError(f"{path}: graph {k} has {n} nodes but feature_dim {d}")
            feats = ident[:n]
        graphs.append(graph_from_edges(n, rec["edges"], feats, int(rec["label"])))
    return GraphDataset(payload["name"], int(payload["num_classes"]), d, graphs,
                        semantic_features=semantic)


def dataset_or_path(spec: str) -> GraphDataset:
    """Resolve a dataset argument: JSON file or TU directory."""
    p = Path(spec)
    if p.is_dir():
        return load_tu_dataset(p)
    if p.is_file():
        return load_dataset(p)
    raise FileNotFoundError(f"dataset path {spec} does not exist")
