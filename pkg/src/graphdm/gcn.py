"""Graph convolutional classifier trained with Adam on cross-entropy.

Three convolution layers (feature_dim -> hidden -> hidden -> hidden) with
relu, mean pooling over nodes, and a dense classification head.  Every
forward is expressed through the autodiff ops so the same code serves
plain evaluation (constants, no tape) and training (parameter leaves on a
tape).  Graphs of equal node count are stacked into (B, n, *) tensors;
tests pin the stacked path to the per-graph path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Graph, normalize_adjacency

HIDDEN_DIM = 256

THETA_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")  # convolution stack
PSI_NAMES = ("wc", "bc")                            # classification head
PARAM_NAMES = THETA_NAMES + PSI_NAMES


@dataclass
class GcnModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    wc: np.ndarray
    bc: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.wc.shape[1]

    def params(self, names=PARAM_NAMES) -> list[np.ndarray]:
        return [getattr(self, name) for name in names]

    def leaves(self, tape: ad.Tape) -> dict[str, ad.DiffTensor]:
        """Gradient-tracked views of the parameters for one training step."""
        return {name: tape.var(getattr(self, name)) for name in PARAM_NAMES}

    def copy(self) -> "GcnModel":
        return GcnModel(*(getattr(self, name).copy() for name in PARAM_NAMES))


def init_model(feature_dim: int, num_classes: int, hidden_dim: int = HIDDEN_DIM,
               seed: int = 0) -> GcnModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if feature_dim < 1 or num_classes < 1 or hidden_dim < 1:
        raise ValueError(f"bad dimensions d={feature_dim} h={hidden_dim} C={num_classes}")
    rng = np.random.default_rng(seed)

    def uniform(fan_in: int, shape) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return GcnModel(
        w1=uniform(feature_dim, (feature_dim, hidden_dim)),
        b1=np.zeros(hidden_dim),
        w2=uniform(hidden_dim, (hidden_dim, hidden_dim)),
        b2=np.zeros(hidden_dim),
        w3=uniform(hidden_dim, (hidden_dim, hidden_dim)),
        b3=np.zeros(hidden_dim),
        wc=uniform(hidden_dim, (hidden_dim, num_classes)),
        bc=np.zeros(num_classes),
    )


def _as_params(model: GcnModel, params) -> dict[str, ad.DiffTensor]:
    if params is not None:
        return params
    return {name: ad.constant(getattr(model, name)) for name in PARAM_NAMES}


def gcn_embed(model: GcnModel, a_norm, x, params=None) -> ad.DiffTensor:
    """Mean-pooled node representation after the three convolutions.

    `a_norm` is a normalized adjacency (n, n) and `x` node features (n, d);
    stacked (B, n, n)/(B, n, d) inputs give a (B, hidden) result.  Either
    input may be a DiffTensor, so gradients can flow into a relaxed
    adjacency while the parameters stay constant.
    """
    p = _as_params(model, params)
    h = ad.relu(ad.add(ad.matmul(a_norm, ad.matmul(x, p["w1"])), p["b1"]))
    h = ad.relu(ad.add(ad.matmul(a_norm, ad.matmul(h, p["w2"])), p["b2"]))
    h = ad.relu(ad.add(ad.matmul(a_norm, ad.matmul(h, p["w3"])), p["b3"]))
    return ad.row_mean(h)


def gcn_logits(model: GcnModel, a_norm, x, params=None) -> ad.DiffTensor:
    """Class logits for one graph (C,) or a stack of graphs (B, C)."""
    p = _as_params(model, params)
    emb = gcn_embed(model, a_norm, x, params=params)
    return ad.add(ad.matmul(emb, p["wc"]), p["bc"])


def precompute_a_norms(graphs: list[Graph]) -> list[np.ndarray]:
    return [normalize_adjacency(g.adjacency) for g in graphs]


def _size_groups(graphs: list[Graph], a_norms) -> list[tuple[list[int], np.ndarray, np.ndarray]]:
    """Stack graphs of equal node count: (member indices, A stack, X stack)."""
    if a_norms is None:
        a_norms = precompute_a_norms(graphs)
    by_n: dict[int, list[int]] = {}
    for k, g in enumerate(graphs):
        by_n.setdefault(g.n, []).append(k)
    groups = []
    for n in sorted(by_n):
        idx = by_n[n]
        a3 = np.stack([a_norms[k] for k in idx])
        x3 = np.stack([graphs[k].features for k in idx])
        groups.append((idx, a3, x3))
    return groups


def ce_loss(model: GcnModel, graphs: list[Graph], params=None, a_norms=None) -> ad.DiffTensor:
    """Mean cross-entropy of the batch, as a scalar DiffTensor."""
    if not graphs:
        raise ValueError("ce_loss needs a non-empty batch")
    for g in graphs:
        if g.features.shape[1] != model.feature_dim:
            raise ValueError(f"feature dim {g.features.shape[1]} does not match "
                             f"model feature_dim {model.feature_dim}")
    total = None
    for idx, a3, x3 in _size_groups(graphs, a_norms):
        logits = gcn_logits(model, a3, x3, params=params)
        labels = np.asarray([graphs[k].label for k in idx], dtype=np.intp)
        part = ad.sum(ad.nll(ad.log_softmax(logits), labels))
        total = part if total is None else ad.add(total, part)
    return ad.scale(total, 1.0 / len(graphs))


def logits_many(model: GcnModel, graphs: list[Graph], a_norms=None) -> np.ndarray:
    """Eager (N, C) logits for a graph list, in input order."""
    out = np.empty((len(graphs), model.num_classes))
    for idx, a3, x3 in _size_groups(graphs, a_norms):
        out[idx] = gcn_logits(model, a3, x3).data
    return out


def embed_many(model: GcnModel, graphs: list[Graph], a_norms=None) -> np.ndarray:
    """Eager (N, hidden) embeddings for a graph list, in input order."""
    out = np.empty((len(graphs), model.hidden_dim))
    for idx, a3, x3 in _size_groups(graphs, a_norms):
        out[idx] = gcn_embed(model, a3, x3).data
    return out


def predict(model: GcnModel, graphs: list[Graph], a_norms=None) -> np.ndarray:
    """Argmax class per graph; ties resolve to the lowest class index."""
    return np.argmax(logits_many(model, graphs, a_norms), axis=-1)


def accuracy(model: GcnModel, graphs: list[Graph], a_norms=None) -> float:
    """Fraction of graphs whose predicted class matches the stored label."""
    pred = predict(model, graphs, a_norms)
    labels = np.asarray([g.label for g in graphs])
    return float((pred == labels).mean())


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment buffers for one parameter group."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls(lr=lr,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError(f"adam_step got {len(params)} params, {len(grads)} grads, "
                         f"state holds {len(state.m)}")
    state.step_count += 1
    t = state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def train_model_step(model: GcnModel, graphs: list[Graph], opt_theta: AdamState,
                     opt_psi: AdamState, a_norms=None) -> float:
    """One CE step: fresh tape, backward, Adam on the conv stack and the head."""
    tape = ad.Tape()
    leaves = model.leaves(tape)
    loss = ce_loss(model, graphs, params=leaves, a_norms=a_norms)
    ad.backward(loss)
    adam_step(opt_theta, model.params(THETA_NAMES),
              [leaves[n].grad for n in THETA_NAMES])
    adam_step(opt_psi, model.params(PSI_NAMES),
              [leaves[n].grad for n in PSI_NAMES])
    return loss.item()


def fit_model(model: GcnModel, graphs: list[Graph], steps: int, batch_per_class: int,
              rng: np.random.Generator, lr: float = 1e-3, a_norms=None) -> list[float]:
    """Train with per-class batches sampled without replacement each step."""
    opt_theta = AdamState.for_params(model.params(THETA_NAMES), lr=lr)
    opt_psi = AdamState.for_params(model.params(PSI_NAMES), lr=lr)
    by_class: dict[int, list[int]] = {}
    for k, g in enumerate(graphs):
        by_class.setdefault(g.label, []).append(k)
    if a_norms is None:
        a_norms = precompute_a_norms(graphs)
    losses = []
    for _ in range(steps):
        batch_idx = []
        for c in sorted(by_class):
            members = by_class[c]
            take = min(batch_per_class, len(members))
            picked = rng.choice(len(members), size=take, replace=False)
            batch_idx.extend(members[i] for i in np.sort(picked))
        batch = [graphs[k] for k in batch_idx]
        sub_norms = [a_norms[k] for k in batch_idx]
        losses.append(train_model_step(model, batch, opt_theta, opt_psi, a_norms=sub_norms))
    return losses


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(model: GcnModel, path, config: dict | None = None,
               config_hash: str | None = None) -> None:
    payload = {
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "num_classes": model.num_classes,
        "weights": {name: getattr(model, name).tolist() for name in PARAM_NAMES},
        "config": config,
        "config_hash": config_hash,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> tuple[GcnModel, dict]:
    """Load a checkpoint; returns the model and the full payload (config echo)."""
    with open(path) as fh:
        payload = json.load(fh)
    weights = payload.get("weights")
    if weights is None or any(name not in weights for name in PARAM_NAMES):
        raise ValueError(f"{path}: checkpoint missing parameter tensors")
    model = GcnModel(*(np.asarray(weights[name], dtype=np.float64) for name in PARAM_NAMES))
    if model.feature_dim != payload.get("feature_dim") \
            or model.num_classes != payload.get("num_classes"):
        raise ValueError(f"{path}: checkpoint header does not match weight shapes")
    return model, payload
