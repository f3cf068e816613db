"""Per-class interpretive graph synthesis by embedding-distribution matching.

Interpretive graphs hold edge logits; each forward pass relaxes them into a
fractional adjacency with fresh concrete-relaxation noise, normalizes, and
embeds with the current classifier.  The objective per class is

    squared distance of mean embeddings (train batch vs interpretive batch)
    + alpha * squared distance of mean feature vectors
    + beta  * sum of per-graph hinge penalties on edge density

and one plain gradient step updates the logits (and features, when the
dataset has semantic features) after every classifier training step, so the
interpretive graphs track the whole training trajectory.  Restarting the
classifier several times matches a distribution of trajectories instead of
a single one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from . import gcn
from .data import Graph, GraphDataset, surrogate_index_features
from .seeding import substream

# finite stand-in for -inf on the masked diagonal: sigmoid underflows to
# exactly 0.0, gradients through it are exactly 0, and JSON can store it
NEG_LOGIT = -1.0e9

INIT_LOGIT = 3.0

VARIANTS = ("full", "first", "last", "ensemble", "frozen")


@dataclass
class InterpretiveGraph:
    class_id: int
    m: int
    omega: np.ndarray     # (m, m) symmetric edge logits, diagonal NEG_LOGIT
    features: np.ndarray  # (m, d)
    tau: float
    features_trainable: bool = False

    def density(self) -> float:
        """Mean off-diagonal relaxed edge probability."""
        p = expit(self.omega)
        return float(p.sum() / (self.m * self.m - self.m))


@dataclass
class GdmConfig:
    graphs_per_class: int = 10
    iterations: int = 200          # outer steps per restart
    restarts: int = 5
    interp_batch: int | None = None  # defaults to min(graphs_per_class, 16)
    train_batch: int = 64            # per class, capped at class size
    interp_lr: float = 0.01
    conv_lr: float = 1e-3
    head_lr: float = 1e-3
    feature_weight: float = 0.01   # alpha; forced to 0 for index features
    sparsity_weight: float = 0.1   # beta
    tau: float = 1.0
    model_steps_per_iter: int = 1
    variant: str = "full"
    snapshot_every: int = 10       # ensemble variant snapshot cadence
    hidden_dim: int = gcn.HIDDEN_DIM
    seed: int = 0

    def __post_init__(self):
        if self.interp_batch is None:
            self.interp_batch = min(self.graphs_per_class, 16)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant {self.variant!r} not one of {VARIANTS}")
        if self.graphs_per_class < 1:
            raise ValueError(f"graphs_per_class must be >= 1, got {self.graphs_per_class}")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError(f"iterations and restarts must be >= 1, "
                             f"got {self.iterations}, {self.restarts}")
        for name in ("interp_lr", "conv_lr", "head_lr", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("feature_weight", "sparsity_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.interp_batch < 1 or self.train_batch < 1 or self.model_steps_per_iter < 1:
            raise ValueError("batch sizes and model_steps_per_iter must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be >= 1, got {self.snapshot_every}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GdmState:
    interps: list[list[InterpretiveGraph]]  # per class
    sparsity_target: float                  # mean initialized density, fixed
    rng: np.random.Generator                # relaxation noise stream
    semantic_features: bool = False

    def all_interps(self) -> list[InterpretiveGraph]:
        return [ig for group in self.interps for ig in group]


def init_interpretations(train: GraphDataset, cfg: GdmConfig) -> GdmState:
    """Per-class interpretive graphs seeded from random induced subgraphs.

    Node count per class is the rounded mean train node count; logits start
    at +-INIT_LOGIT reproducing the sampled subgraph in expectation; the
    sparsity target is the mean initialized density, frozen here.
    """
    rng = substream(cfg.seed, "interp-init")
    interps: list[list[InterpretiveGraph]] = []
    for c in range(train.num_classes):
        members = train.class_index.get(c, [])
        if not members:
            raise ValueError(f"class {c} has no training graphs")
        m = int(round(float(np.mean([train.graphs[i].n for i in members]))))
        eligible = [i for i in members if train.graphs[i].n >= m]
        group = []
        for _ in range(cfg.graphs_per_class):
            src = train.graphs[eligible[int(rng.integers(0, len(eligible)))]]
            nodes = np.sort(rng.choice(src.n, size=m, replace=False))
            sub_adj = src.adjacency[np.ix_(nodes, nodes)]
            omega = np.where(sub_adj > 0, INIT_LOGIT, -INIT_LOGIT)
            np.fill_diagonal(omega, NEG_LOGIT)
            if train.semantic_features:
                feats = src.features[nodes].copy()
            else:
                feats = surrogate_index_features(m, train.feature_dim).copy()
            group.append(InterpretiveGraph(
                class_id=c, m=m, omega=omega, features=feats, tau=cfg.tau,
                features_trainable=train.semantic_features))
        interps.append(group)
    state = GdmState(interps=interps, sparsity_target=0.0,
                     rng=substream(cfg.seed, "relax-draws"),
                     semantic_features=train.semantic_features)
    state.sparsity_target = float(np.mean([ig.density() for ig in state.all_interps()]))
    return state


def relax_adjacency(ig: InterpretiveGraph, rng: np.random.Generator,
                    omega=None) -> ad.DiffTensor:
    """Concrete-relaxed adjacency: sigmoid((logit(eps) + omega) / tau).

    One fresh uniform draw per upper-triangle entry, mirrored for symmetry.
    The masked diagonal stays exactly zero.  Pass a tape-bound `omega` to
    make the output differentiable w.r.t. the logits.
    """
    m = ig.m
    iu = np.triu_indices(m, k=1)
    eps = rng.random(iu[0].size).clip(1e-12, 1.0 - 1e-12)
    noise = np.zeros((m, m))
    noise[iu] = np.log(eps) - np.log1p(-eps)
    noise = noise + noise.T
    om = omega if omega is not None else ad.constant(ig.omega)
    return ad.sigmoid(ad.scale(ad.add(om, noise), 1.0 / ig.tau))


def _mean_tensor(parts: list[ad.DiffTensor]) -> ad.DiffTensor:
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return ad.scale(total, 1.0 / len(parts))


def _interp_embeds(model: gcn.GcnModel, interp_batch: list[InterpretiveGraph],
                   rng: np.random.Generator, leaves=None) -> list[ad.DiffTensor]:
    embeds = []
    for ig in interp_batch:
        om = leaves[id(ig)]["omega"] if leaves else None
        xv = leaves[id(ig)]["features"] if leaves else ad.constant(ig.features)
        if xv is None:
            xv = ad.constant(ig.features)
        relaxed = relax_adjacency(ig, rng, omega=om)
        embeds.append(gcn.gcn_embed(model, ad.sym_normalize(relaxed), xv))
    return embeds


def dm_loss(model: gcn.GcnModel, train_batch: list[Graph],
            interp_batch: list[InterpretiveGraph], rng: np.random.Generator,
            leaves=None, a_norms=None) -> ad.DiffTensor:
    """Squared distance between mean train and mean interpretive embeddings.

    The train side is a plain forward (no gradient); the interpretive side
    goes relax -> normalize -> embed so gradients reach the edge logits but
    never the classifier parameters.
    """
    if not train_batch or not interp_batch:
        raise ValueError("dm_loss needs non-empty train and interpretive batches")
    target = gcn.embed_many(model, train_batch, a_norms).mean(axis=0)
    mean_emb = _mean_tensor(_interp_embeds(model, interp_batch, rng, leaves))
    return ad.sq_norm(ad.sub(ad.constant(target), mean_emb))


def feature_loss(train_batch: list[Graph], interp_batch: list[InterpretiveGraph],
                 leaves=None) -> ad.DiffTensor:
    """Squared distance between mean per-graph feature means of the batches."""
    if not train_batch or not interp_batch:
        raise ValueError("feature_loss needs non-empty batches")
    d = train_batch[0].features.shape[1]
    for ig in interp_batch:
        if ig.features.shape[1] != d:
            raise ValueError(f"feature dim mismatch: {ig.features.shape[1]} vs {d}")
    target = np.mean([g.features.mean(axis=0) for g in train_batch], axis=0)
    parts = []
    for ig in interp_batch:
        xv = leaves[id(ig)]["features"] if leaves else None
        parts.append(ad.row_mean(xv if xv is not None else ad.constant(ig.features)))
    return ad.sq_norm(ad.sub(ad.constant(target), _mean_tensor(parts)))


def sparsity_loss(state: GdmState, batch: list[InterpretiveGraph] | None = None,
                  leaves=None) -> ad.DiffTensor:
    """Sum over interpretive graphs of max(density - sparsity_target, 0)."""
    graphs = batch if batch is not None else state.all_interps()
    total = None
    for ig in graphs:
        om = leaves[id(ig)]["omega"] if leaves else ad.constant(ig.omega)
        # the masked diagonal contributes exactly 0 to the sigmoid sum
        dens = ad.scale(ad.sum(ad.sigmoid(om)), 1.0 / (ig.m * ig.m - ig.m))
        hinge = ad.max_zero(ad.add(dens, -state.sparsity_target))
        total = hinge if total is None else ad.add(total, hinge)
    return total if total is not None else ad.constant(0.0)


def _sample(rng: np.random.Generator, count: int, take: int) -> np.ndarray:
    take = min(take, count)
    return np.sort(rng.choice(count, size=take, replace=False))


def interpretation_step(state: GdmState, model: gcn.GcnModel, train: GraphDataset,
                        cfg: GdmConfig, rng: np.random.Generator,
                        a_norms_by_class=None) -> dict:
    """One plain gradient step on all sampled interpretive graphs.

    Samples per class a training batch and an interpretive batch, builds
    the combined objective, runs backward once, and applies
    omega <- omega - lr * (grad + grad^T) (features likewise when
    trainable).  Returns per-class loss values for logging.
    """
    tape = ad.Tape()
    leaves: dict[int, dict] = {}
    alpha = cfg.feature_weight if state.semantic_features else 0.0
    per_class = {"dm": [], "feat": [], "sparsity": []}
    total = None
    for c in range(train.num_classes):
        members = train.class_index[c]
        sel = _sample(rng, len(members), cfg.train_batch)
        train_batch = [train.graphs[members[i]] for i in sel]
        batch_norms = None
        if a_norms_by_class is not None:
            batch_norms = [a_norms_by_class[c][i] for i in sel]
        isel = _sample(rng, len(state.interps[c]), cfg.interp_batch)
        interp_batch = [state.interps[c][i] for i in isel]
        for ig in interp_batch:
            leaves[id(ig)] = {
                "omega": tape.var(ig.omega),
                "features": tape.var(ig.features) if ig.features_trainable else None,
                "graph": ig,
            }
        dm = dm_loss(model, train_batch, interp_batch, state.rng,
                     leaves=leaves, a_norms=batch_norms)
        loss_c = dm
        feat_val = 0.0
        if alpha > 0:
            feat = feature_loss(train_batch, interp_batch, leaves=leaves)
            feat_val = feat.item()
            loss_c = ad.add(loss_c, ad.scale(feat, alpha))
        sp = sparsity_loss(state, batch=interp_batch, leaves=leaves)
        loss_c = ad.add(loss_c, ad.scale(sp, cfg.sparsity_weight))
        per_class["dm"].append(dm.item())
        per_class["feat"].append(feat_val)
        per_class["sparsity"].append(sp.item())
        total = loss_c if total is None else ad.add(total, loss_c)
    ad.backward(total)
    for entry in leaves.values():
        ig = entry["graph"]
        g = entry["omega"].grad
        # mirrored upper-triangle parameterization: the shared logit of the
        # (i, j) pair collects both directed contributions
        ig.omega -= cfg.interp_lr * (g + g.T)
        if entry["features"] is not None:
            ig.features -= cfg.interp_lr * entry["features"].grad
    return per_class


def discretize(ig: InterpretiveGraph) -> Graph:
    """Threshold the relaxed graph: edge iff sigmoid(omega) > 0.5."""
    adj = ((ig.omega > 0.0) & ~np.eye(ig.m, dtype=bool)).astype(np.float64)
    adj = np.maximum(adj, adj.T)
    if ig.features_trainable:
        types = np.argmax(ig.features, axis=1)
        feats = np.eye(ig.features.shape[1])[types]
    else:
        feats = ig.features.copy()
    return Graph(n=ig.m, adjacency=adj, features=feats, label=ig.class_id)


def interpretation_graphs(state: GdmState) -> list[Graph]:
    """All interpretive graphs, discretized, class-major order."""
    return [discretize(ig) for group in state.interps for ig in group]


# ---------------------------------------------------------------------------
# the joint loop
# ---------------------------------------------------------------------------

def _log_row(restart, phase, iteration, ce, per_class) -> dict:
    return {
        "restart": restart,
        "phase": phase,
        "iteration": iteration,
        "ce_loss": ce,
        "dm": list(per_class["dm"]) if per_class else None,
        "feat": list(per_class["feat"]) if per_class else None,
        "sparsity": list(per_class["sparsity"]) if per_class else None,
    }


def run_gdm(ds: GraphDataset, cfg: GdmConfig) -> tuple[GdmState, gcn.GcnModel, dict]:
    """Joint training-and-interpretation loop with model restarts.

    Variants reshape the loop: `full` alternates interpretation and model
    steps; `frozen` never trains the model; `first` matches only the
    restart's initial parameters while the model trains in the background;
    `last` and `ensemble` train first and interpret afterwards (against the
    final model, or cycling stored snapshots).
    """
    if ds.split is None:
        raise ValueError("run_gdm needs a dataset with train/test split applied")
    train_idx = ds.train_indices()
    train = GraphDataset(ds.name, ds.num_classes, ds.feature_dim,
                         [ds.graphs[i] for i in train_idx],
                         semantic_features=ds.semantic_features)
    state = init_interpretations(train, cfg)
    batch_rng = substream(cfg.seed, "batch-sampling")
    flat_norms = gcn.precompute_a_norms(train.graphs)
    a_norms_by_class = [[flat_norms[i] for i in train.class_index[c]]
                        for c in range(train.num_classes)]
    test_graphs = [ds.graphs[i] for i in ds.test_indices()]
    test_norms = gcn.precompute_a_norms(test_graphs)

    rows = []
    restart_train_acc, restart_test_acc = [], []
    model = None

    def model_step(mdl, opt_theta, opt_psi):
        batch_idx = []
        for c in range(train.num_classes):
            members = train.class_index[c]
            sel = _sample(batch_rng, len(members), cfg.train_batch)
            batch_idx.extend(members[i] for i in sel)
        batch = [train.graphs[i] for i in batch_idx]
        norms = [flat_norms[i] for i in batch_idx]
        return gcn.train_model_step(mdl, batch, opt_theta, opt_psi, a_norms=norms)

    for k in range(cfg.restarts):
        model = gcn.init_model(train.feature_dim, train.num_classes,
                               hidden_dim=cfg.hidden_dim,
                               seed=substream(cfg.seed, f"model-init-k{k}").integers(2**63))
        opt_theta = gcn.AdamState.for_params(model.params(gcn.THETA_NAMES), lr=cfg.conv_lr)
        opt_psi = gcn.AdamState.for_params(model.params(gcn.PSI_NAMES), lr=cfg.head_lr)

        if cfg.variant in ("full", "first", "frozen"):
            frozen_ce = None
            snapshot = model.copy() if cfg.variant == "first" else None
            for t in range(cfg.iterations):
                target = snapshot if cfg.variant == "first" else model
                per_class = interpretation_step(state, target, train, cfg,
                                                batch_rng, a_norms_by_class)
                if cfg.variant == "frozen":
                    if frozen_ce is None:
                        frozen_ce = gcn.ce_loss(model, train.graphs,
                                                a_norms=flat_norms).item()
                    ce = frozen_ce
                else:
                    ce = None
                    for _ in range(cfg.model_steps_per_iter):
                        ce = model_step(model, opt_theta, opt_psi)
                rows.append(_log_row(k, "joint", t, ce, per_class))
        elif cfg.variant in ("last", "ensemble"):
            snapshots = []
            for t in range(cfg.iterations):
                if cfg.variant == "ensemble" and t % cfg.snapshot_every == 0:
                    snapshots.append(model.copy())
                ce = None
                for _ in range(cfg.model_steps_per_iter):
                    ce = model_step(model, opt_theta, opt_psi)
                rows.append(_log_row(k, "train", t, ce, None))
            for t in range(cfg.iterations):
                target = model if cfg.variant == "last" \
                    else snapshots[t % len(snapshots)]
                per_class = interpretation_step(state, target, train, cfg,
                                                batch_rng, a_norms_by_class)
                rows.append(_log_row(k, "interp", t, None, per_class))
        else:  # pragma: no cover - GdmConfig.validate guards this
            raise ValueError(f"variant {cfg.variant!r} not one of {VARIANTS}")

        restart_train_acc.append(gcn.accuracy(model, train.graphs, flat_norms))
        restart_test_acc.append(gcn.accuracy(model, test_graphs, test_norms)
                                if test_graphs else float("nan"))

    log = {
        "rows": rows,
        "restart_train_accuracy": restart_train_acc,
        "restart_test_accuracy": restart_test_acc,
    }
    return state, model, log


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_interpretations(state: GdmState, path, dataset_name: str, feature_dim: int,
                         num_classes: int, config: dict | None = None,
                         config_hash: str | None = None) -> None:
    payload = {
        "dataset": dataset_name,
        "num_classes": num_classes,
        "feature_dim": feature_dim,
        "sparsity_target": state.sparsity_target,
        "semantic_features": state.semantic_features,
        "config": config,
        "config_hash": config_hash,
        "interpretations": [
            {
                "class_id": ig.class_id,
                "m": ig.m,
                "tau": ig.tau,
                "omega": ig.omega.reshape(-1).tolist(),
                "features": ig.features.tolist(),
                "edges": [[int(i), int(j)] for i, j in discretize(ig).edge_list()],
            }
            for group in state.interps for ig in group
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_interpretations(path) -> tuple[list[InterpretiveGraph], dict]:
    """Read an interpretation file; returns the graphs and the full payload."""
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("num_classes", "feature_dim", "interpretations"):
        if key not in payload:
            raise ValueError(f"{path}: interpretation file missing field {key!r}")
    semantic = bool(payload.get("semantic_features", False))
    interps = []
    for rec in payload["interpretations"]:
        m = int(rec["m"])
        omega = np.asarray(rec["omega"], dtype=np.float64).reshape(m, m)
        interps.append(InterpretiveGraph(
            class_id=int(rec["class_id"]), m=m, omega=omega,
            features=np.asarray(rec["features"], dtype=np.float64),
            tau=float(rec["tau"]), features_trainable=semantic))
    return interps, payload
