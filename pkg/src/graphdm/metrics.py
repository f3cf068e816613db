"""Evaluation protocol: surrogate training, agreement metrics, baselines.

The central question is whether a handful of synthetic graphs can stand in
for the training set: a surrogate classifier is trained from scratch on the
interpretive graphs alone and compared to the target model (fidelity) and
to ground truth (utility).  Each evaluation repeats with independent
surrogate seeds and reports mean and population std.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gcn
from .data import Graph, GraphDataset
from .interpret import GdmConfig, init_interpretations, interpretation_step, \
    interpretation_graphs
from .seeding import substream, stream_seed


@dataclass
class MetricsReport:
    fidelity_runs: list[float]
    utility_runs: list[float]
    predictive_accuracy: float
    mean_sparsity: float
    seeds: list[int]
    config: dict | None = None

    @staticmethod
    def _mean(runs: list[float]) -> float:
        return float(np.mean(runs))

    @staticmethod
    def _std(runs: list[float]) -> float:
        return float(np.std(runs))  # population std over the repetitions

    @property
    def fidelity(self) -> float:
        return self._mean(self.fidelity_runs)

    @property
    def utility(self) -> float:
        return self._mean(self.utility_runs)

    def to_dict(self) -> dict:
        reps = len(self.fidelity_runs)
        return {
            "fidelity": {"mean": self.fidelity, "std": self._std(self.fidelity_runs),
                         "runs": list(self.fidelity_runs)},
            "utility": {"mean": self.utility, "std": self._std(self.utility_runs),
                        "runs": list(self.utility_runs)},
            "predictive_accuracy": {"mean": self.predictive_accuracy, "std": 0.0,
                                    "runs": [self.predictive_accuracy] * reps},
            "mean_sparsity": self.mean_sparsity,
            "seeds": list(self.seeds),
            "config": self.config,
        }


def train_surrogate(interps: list[Graph], feature_dim: int, num_classes: int,
                    seed: int, epochs: int = 300, hidden_dim: int = gcn.HIDDEN_DIM,
                    lr: float = 1e-3) -> gcn.GcnModel:
    """Fresh model trained by full-batch Adam CE on the interpretive graphs only."""
    present = {g.label for g in interps}
    missing = set(range(num_classes)) - present
    if missing:
        raise ValueError(f"interpretive set is missing classes {sorted(missing)}")
    model = gcn.init_model(feature_dim, num_classes, hidden_dim=hidden_dim, seed=seed)
    opt_theta = gcn.AdamState.for_params(model.params(gcn.THETA_NAMES), lr=lr)
    opt_psi = gcn.AdamState.for_params(model.params(gcn.PSI_NAMES), lr=lr)
    a_norms = gcn.precompute_a_norms(interps)
    for _ in range(epochs):
        gcn.train_model_step(model, interps, opt_theta, opt_psi, a_norms=a_norms)
    return model


def _check_test_set(test: list[Graph]) -> None:
    if not test:
        raise ValueError("empty test set")


def model_fidelity(surrogate: gcn.GcnModel, target: gcn.GcnModel,
                   test: list[Graph]) -> float:
    """Percentage of test graphs where surrogate and target predictions agree."""
    _check_test_set(test)
    if surrogate.feature_dim != target.feature_dim:
        raise ValueError(f"feature dims differ: {surrogate.feature_dim} "
                         f"vs {target.feature_dim}")
    a_norms = gcn.precompute_a_norms(test)
    agree = gcn.predict(surrogate, test, a_norms) == gcn.predict(target, test, a_norms)
    return float(100.0 * agree.mean())


def model_utility(surrogate: gcn.GcnModel, test: list[Graph]) -> float:
    """Percentage of test graphs the surrogate labels correctly."""
    _check_test_set(test)
    return 100.0 * gcn.accuracy(surrogate, test)


def predictive_accuracy(target: gcn.GcnModel, interps: list[Graph]) -> float:
    """Percentage of interpretive graphs the target classifies as their own class."""
    if not interps:
        raise ValueError("empty interpretive set")
    return 100.0 * gcn.accuracy(target, interps)


def mean_sparsity(interps: list[Graph]) -> float:
    """Mean fraction of absent edges over the off-diagonal pair count."""
    if not interps:
        raise ValueError("empty interpretive set")
    fractions = []
    for g in interps:
        pairs = g.n * (g.n - 1) // 2
        fractions.append(1.0 - g.num_edges() / pairs)
    return float(np.mean(fractions))


def evaluate_interpretations(target: gcn.GcnModel, interps: list[Graph],
                             test: list[Graph], seed: int, reps: int = 5,
                             epochs: int = 300, config: dict | None = None) -> MetricsReport:
    """The repeated-surrogate protocol: fidelity and utility over `reps` seeds."""
    fid_runs, util_runs, seeds = [], [], []
    for rep in range(reps):
        rep_seed = stream_seed(seed, f"surrogate-rep{rep}") % (2 ** 63)
        seeds.append(rep_seed)
        surrogate = train_surrogate(interps, target.feature_dim, target.num_classes,
                                    seed=rep_seed, epochs=epochs,
                                    hidden_dim=target.hidden_dim)
        fid_runs.append(model_fidelity(surrogate, target, test))
        util_runs.append(model_utility(surrogate, test))
    return MetricsReport(
        fidelity_runs=fid_runs,
        utility_runs=util_runs,
        predictive_accuracy=predictive_accuracy(target, interps),
        mean_sparsity=mean_sparsity(interps),
        seeds=seeds,
        config=config,
    )


# ---------------------------------------------------------------------------
# trajectory fidelity
# ---------------------------------------------------------------------------

def _mean_logit_cosine(a: np.ndarray, b: np.ndarray) -> float:
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return float((num / np.maximum(den, 1e-300)).mean())


def trajectory_fidelity(ds: GraphDataset, cfg: GdmConfig,
                        surrogate_source: str = "interp") -> list[float]:
    """Per-iteration logit agreement between target and lockstep surrogate.

    Both models start from the same initialization.  The target trains on
    real batches while the interpretive graphs track it; the surrogate
    trains full-batch on the current discretized interpretations (or, for
    the control, on exactly the target's real batches).  The curve holds
    the mean test-set cosine similarity of the two logit vectors, recorded
    before any update (1.0) and after each iteration.
    """
    if surrogate_source not in ("interp", "real"):
        raise ValueError(f"surrogate_source {surrogate_source!r} not in ('interp', 'real')")
    if ds.split is None:
        raise ValueError("trajectory_fidelity needs a dataset with split applied")
    train_idx = ds.train_indices()
    train = GraphDataset(ds.name, ds.num_classes, ds.feature_dim,
                         [ds.graphs[i] for i in train_idx],
                         semantic_features=ds.semantic_features)
    test = [ds.graphs[i] for i in ds.test_indices()]
    test_norms = gcn.precompute_a_norms(test)
    flat_norms = gcn.precompute_a_norms(train.graphs)
    a_norms_by_class = [[flat_norms[i] for i in train.class_index[c]]
                        for c in range(train.num_classes)]

    state = init_interpretations(train, cfg)
    batch_rng = substream(cfg.seed, "batch-sampling")
    init_seed = substream(cfg.seed, "model-init-k0").integers(2 ** 63)
    target = gcn.init_model(train.feature_dim, train.num_classes,
                            hidden_dim=cfg.hidden_dim, seed=init_seed)
    surrogate = target.copy()
    t_theta = gcn.AdamState.for_params(target.params(gcn.THETA_NAMES), lr=cfg.conv_lr)
    t_psi = gcn.AdamState.for_params(target.params(gcn.PSI_NAMES), lr=cfg.head_lr)
    s_theta = gcn.AdamState.for_params(surrogate.params(gcn.THETA_NAMES), lr=cfg.conv_lr)
    s_psi = gcn.AdamState.for_params(surrogate.params(gcn.PSI_NAMES), lr=cfg.head_lr)

    curve = [_mean_logit_cosine(gcn.logits_many(target, test, test_norms),
                                gcn.logits_many(surrogate, test, test_norms))]
    for _ in range(cfg.iterations):
        interpretation_step(state, target, train, cfg, batch_rng, a_norms_by_class)
        batch_idx = []
        for c in range(train.num_classes):
            members = train.class_index[c]
            take = min(cfg.train_batch, len(members))
            sel = np.sort(batch_rng.choice(len(members), size=take, replace=False))
            batch_idx.extend(members[i] for i in sel)
        batch = [train.graphs[i] for i in batch_idx]
        norms = [flat_norms[i] for i in batch_idx]
        gcn.train_model_step(target, batch, t_theta, t_psi, a_norms=norms)
        if surrogate_source == "real":
            gcn.train_model_step(surrogate, batch, s_theta, s_psi, a_norms=norms)
        else:
            interp_graphs = interpretation_graphs(state)
            gcn.train_model_step(surrogate, interp_graphs, s_theta, s_psi)
        curve.append(_mean_logit_cosine(gcn.logits_many(target, test, test_norms),
                                        gcn.logits_many(surrogate, test, test_norms)))
    return curve


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def random_baseline(train: GraphDataset, per_class: int, seed: int) -> list[Graph]:
    """Uniform without-replacement draws of real training graphs per class."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(train.num_classes):
        members = train.class_index.get(c, [])
        if len(members) < per_class:
            raise ValueError(f"class {c} has {len(members)} graphs, need {per_class}")
        sel = np.sort(rng.choice(len(members), size=per_class, replace=False))
        picked.extend(train.graphs[members[i]] for i in sel)
    return picked


def degree_sorted_laplacian_features(g: Graph, max_n: int) -> np.ndarray:
    """Flattened Laplacian after sorting nodes by degree, zero-padded.

    Nodes order by descending degree with ties broken by node index, so
    isomorphic placements of the same structure align feature positions.
    """
    if g.n > max_n:
        raise ValueError(f"graph has {g.n} nodes, exceeding max_n={max_n}")
    deg = g.adjacency.sum(axis=1)
    order = np.lexsort((np.arange(g.n), -deg))
    a_sorted = g.adjacency[np.ix_(order, order)]
    lap = np.diag(a_sorted.sum(axis=1)) - a_sorted
    padded = np.zeros((max_n, max_n))
    padded[: g.n, : g.n] = lap
    return padded.reshape(-1)


def lr_baseline(train: list[Graph], test: list[Graph], top_k_edges: int = 10,
                seed: int = 0, epochs: int = 400, lr: float = 0.05
                ) -> tuple[float, list[list[tuple[int, int]]]]:
    """Multinomial logistic regression on degree-sorted Laplacian features.

    Returns the test accuracy percentage and, per class, the top-k feature
    positions by absolute weight mapped back to matrix coordinates (i, j).
    """
    if not train or not test:
        raise ValueError("lr_baseline needs non-empty train and test sets")
    max_n = max(g.n for g in train + test)
    x_train = np.stack([degree_sorted_laplacian_features(g, max_n) for g in train])
    y_train = np.asarray([g.label for g in train], dtype=np.intp)
    x_test = np.stack([degree_sorted_laplacian_features(g, max_n) for g in test])
    y_test = np.asarray([g.label for g in test])
    num_classes = int(max(y_train.max(), y_test.max())) + 1

    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.01, 0.01, size=(x_train.shape[1], num_classes))
    b = np.zeros(num_classes)
    opt = gcn.AdamState.for_params([w, b], lr=lr)
    for _ in range(epochs):
        tape = ad.Tape()
        wv, bv = tape.var(w), tape.var(b)
        logits = ad.add(ad.matmul(ad.constant(x_train), wv), bv)
        loss = ad.scale(ad.sum(ad.nll(ad.log_softmax(logits), y_train)),
                        1.0 / len(train))
        ad.backward(loss)
        gcn.adam_step(opt, [w, b], [wv.grad, bv.grad])

    pred = np.argmax(x_test @ w + b, axis=1)
    utility = float(100.0 * (pred == y_test).mean())
    edges = []
    for c in range(num_classes):
        top = np.argsort(-np.abs(w[:, c]), kind="stable")[:top_k_edges]
        edges.append([(int(f) // max_n, int(f) % max_n) for f in top])
    return utility, edges


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def write_metrics_json(report: MetricsReport, path, dataset: str, variant: str,
                       graphs_per_class: int, config_hash: str | None = None) -> None:
    payload = {"dataset": dataset, "variant": variant,
               "graphs_per_class": graphs_per_class,
               "config_hash": config_hash}
    payload.update(report.to_dict())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def write_metrics_csv(report: MetricsReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repetition", "seed", "fidelity", "utility",
                         "predictive_accuracy", "mean_sparsity"])
        for i, (f, u) in enumerate(zip(report.fidelity_runs, report.utility_runs)):
            writer.writerow([i, report.seeds[i], f, u,
                             report.predictive_accuracy, report.mean_sparsity])
