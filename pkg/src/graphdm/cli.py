"""Command-line pipeline: dataset generation, runs, evaluation, export.

Every artifact embeds the configuration it was produced with and a hash of
its canonical JSON form, so eval can refuse mismatched model/interpretation
pairs and a single master seed reproduces the whole pipeline bit-for-bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data, gcn, metrics
from .interpret import GdmConfig, discretize, load_interpretations, run_gdm, \
    save_interpretations
from .seeding import stream_seed

MUTAG_ATOMS = ("C", "N", "O", "F", "I", "Cl", "Br")

GRAD_CHECK_TOL = 1e-4


class ConfigError(Exception):
    """Configuration problem the user must fix; maps to exit code 2."""


@dataclass
class ExperimentConfig:
    dataset: str
    out: str
    seed: int = 0
    dataset_size: int = 1000
    train_frac: float = 0.85
    reps: int = 5
    graphs_per_class: int = 10
    iterations: int = 200
    restarts: int = 5
    interp_batch: int | None = None
    train_batch: int = 64
    interp_lr: float = 0.01
    conv_lr: float = 1e-3
    head_lr: float = 1e-3
    feature_weight: float = 0.01
    sparsity_weight: float = 0.1
    tau: float = 1.0
    model_steps_per_iter: int = 1
    variant: str = "full"
    snapshot_every: int = 10
    hidden_dim: int = gcn.HIDDEN_DIM
    surrogate_epochs: int = 300

    def to_dict(self) -> dict:
        return asdict(self)

    def gdm_config(self) -> GdmConfig:
        names = {f.name for f in fields(GdmConfig)}
        kwargs = {k: v for k, v in self.to_dict().items() if k in names}
        return GdmConfig(**kwargs)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {unknown}")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    required = [f.name for f in fields(ExperimentConfig)
                if f.default is MISSING and f.default_factory is MISSING]
    missing = [name for name in required if name not in raw]
    if missing:
        raise ConfigError(f"{path}: missing required config field(s) {missing}")
    try:
        exp = ExperimentConfig(**raw)
        exp.gdm_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return exp


def resolve_dataset(spec: str, size: int, seed: int) -> data.GraphDataset:
    if spec in data.GENERATORS:
        return data.GENERATORS[spec](size, seed)
    return data.dataset_or_path(spec)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.dataset not in data.GENERATORS:
        print(f"error: unknown dataset {args.dataset!r}; valid names: "
              f"{', '.join(sorted(data.GENERATORS))}", file=sys.stderr)
        return 2
    ds = data.GENERATORS[args.dataset](args.n, args.seed)
    out = Path(args.out) if args.out else Path(f"{args.dataset}.json")
    data.save_dataset(ds, out)
    print(f"wrote {len(ds.graphs)} graphs to {out}")
    return 0


def _write_training_log(rows: list[dict], num_classes: int, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["restart", "phase", "iteration", "ce_loss"]
        header += [f"dm_class{c}" for c in range(num_classes)]
        header += [f"feat_class{c}" for c in range(num_classes)]
        header += [f"sparsity_class{c}" for c in range(num_classes)]
        writer.writerow(header)
        for row in rows:
            line = [row["restart"], row["phase"], row["iteration"],
                    "" if row["ce_loss"] is None else row["ce_loss"]]
            for key in ("dm", "feat", "sparsity"):
                vals = row[key] if row[key] is not None else [""] * num_classes
                line.extend(vals)
            writer.writerow(line)


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "out": args.out, "variant": args.variant,
                 "graphs_per_class": args.graphs_per_class, "reps": args.reps}
    exp = load_experiment_config(args.config, overrides)
    ds = resolve_dataset(exp.dataset, exp.dataset_size, exp.seed)
    tr, te = data.split_dataset(ds, exp.train_frac,
                                stream_seed(exp.seed, "split") % (2 ** 63))
    ds.apply_split(tr, te)
    cfg = exp.gdm_config()
    state, model, log = run_gdm(ds, cfg)

    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    conf = exp.to_dict()
    h = config_hash(conf)
    with open(out / "config.json", "w") as fh:
        json.dump({"config": conf, "config_hash": h}, fh,
                  sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    save_interpretations(state, out / "interpretations.json", ds.name,
                         ds.feature_dim, ds.num_classes, config=conf,
                         config_hash=h)
    gcn.save_model(model, out / "model.json", config=conf, config_hash=h)
    _write_training_log(log["rows"], ds.num_classes, out / "training_log.csv")
    for k, (a_tr, a_te) in enumerate(zip(log["restart_train_accuracy"],
                                         log["restart_test_accuracy"])):
        print(f"restart {k}: train acc {100 * a_tr:.2f}%  test acc {100 * a_te:.2f}%")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    model, model_payload = gcn.load_model(args.model)
    interps, interp_payload = load_interpretations(args.interps)
    mh, ih = model_payload.get("config_hash"), interp_payload.get("config_hash")
    if mh != ih:
        print(f"error: config hash mismatch between {args.model} ({mh}) and "
              f"{args.interps} ({ih}); artifacts are not from the same run",
              file=sys.stderr)
        return 1
    conf = interp_payload.get("config") or {}
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    size = conf.get("dataset_size", 1000)
    train_frac = conf.get("train_frac", 0.85)
    ds = resolve_dataset(args.dataset, size, seed)
    if ds.feature_dim != model.feature_dim or ds.num_classes != model.num_classes:
        raise ValueError(f"model expects {model.feature_dim} features / "
                         f"{model.num_classes} classes, dataset has "
                         f"{ds.feature_dim} / {ds.num_classes}")
    tr, te = data.split_dataset(ds, train_frac, stream_seed(seed, "split") % (2 ** 63))
    ds.apply_split(tr, te)
    test = [ds.graphs[i] for i in ds.test_indices()]
    interp_graphs = [discretize(ig) for ig in interps]

    if args.self_surrogate:
        fid = [metrics.model_fidelity(model, model, test)] * args.reps
        util = [metrics.model_utility(model, test)] * args.reps
        report = metrics.MetricsReport(
            fidelity_runs=fid, utility_runs=util,
            predictive_accuracy=metrics.predictive_accuracy(model, interp_graphs),
            mean_sparsity=metrics.mean_sparsity(interp_graphs),
            seeds=[seed] * args.reps, config=conf)
    else:
        report = metrics.evaluate_interpretations(
            model, interp_graphs, test, seed=seed, reps=args.reps,
            epochs=conf.get("surrogate_epochs", 300), config=conf)

    out = Path(args.out) if args.out else Path(args.interps).parent
    metrics.write_metrics_json(report, out / "metrics.json", ds.name,
                               conf.get("variant", "full"),
                               conf.get("graphs_per_class",
                                        len(interp_graphs) // max(ds.num_classes, 1)),
                               config_hash=ih)
    metrics.write_metrics_csv(report, out / "metrics.csv")
    print(f"fidelity {report.fidelity:.2f} +/- "
          f"{report._std(report.fidelity_runs):.2f}")
    print(f"utility {report.utility:.2f} +/- "
          f"{report._std(report.utility_runs):.2f}")
    print(f"predictive accuracy {report.predictive_accuracy:.2f}")
    print(f"mean sparsity {report.mean_sparsity:.4f}")
    print(f"metrics in {out}")
    return 0


def _node_label(payload: dict, features: list[list[float]] | None, node: int) -> str:
    if not payload.get("semantic_features") or features is None:
        return str(node)
    idx = int(np.argmax(features[node]))
    if "mutag" in str(payload.get("dataset", "")).lower() and idx < len(MUTAG_ATOMS):
        return MUTAG_ATOMS[idx]
    return str(idx)


def cmd_export(args) -> int:
    _, payload = load_interpretations(args.interps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counters: dict[int, int] = {}
    written = 0
    for entry in payload["interpretations"]:
        c = entry["class_id"]
        i = counters.get(c, 0)
        counters[c] = i + 1
        stem = f"class{c}_graph{i}"
        if args.format == "json":
            doc = {"n": entry["m"], "edges": entry["edges"], "label": c,
                   "features": entry["features"] if payload.get("semantic_features")
                   else None}
            with open(out / f"{stem}.json", "w") as fh:
                json.dump(doc, fh, separators=(",", ":"))
                fh.write("\n")
        else:
            lines = [f"graph {stem} {{"]
            for v in range(entry["m"]):
                label = _node_label(payload, entry.get("features"), v)
                lines.append(f'  {v} [label="{label}"];')
            for a, b in entry["edges"]:
                lines.append(f"  {a} -- {b};")
            lines.append("}")
            with open(out / f"{stem}.dot", "w") as fh:
                fh.write("\n".join(lines) + "\n")
        written += 1
    print(f"wrote {written} {args.format} files to {out}")
    return 0


def _grad_check_suite(seed: int) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    checks = []

    def rnd(*shape):
        return rng.standard_normal(shape)

    b_mat = ad.constant(rnd(4, 5))
    checks.append(("matmul", ad.grad_check(
        lambda t: ad.sq_norm(ad.matmul(t, b_mat)), rnd(3, 4))))
    b_batched = ad.constant(rnd(2, 4, 5))
    checks.append(("matmul_batched", ad.grad_check(
        lambda t: ad.sq_norm(ad.matmul(t, b_batched)), rnd(2, 3, 4))))
    b_row = ad.constant(rnd(4))
    checks.append(("add_broadcast", ad.grad_check(
        lambda t: ad.sq_norm(ad.add(t, b_row)), rnd(3, 4))))
    checks.append(("scale", ad.grad_check(
        lambda t: ad.sq_norm(ad.scale(t, 1.7)), rnd(3, 4))))
    checks.append(("relu", ad.grad_check(
        lambda t: ad.sq_norm(ad.relu(t)), rnd(3, 4) + 0.3)))
    checks.append(("sigmoid", ad.grad_check(
        lambda t: ad.sq_norm(ad.sigmoid(t)), rnd(3, 4))))
    checks.append(("row_mean", ad.grad_check(
        lambda t: ad.sq_norm(ad.row_mean(t)), rnd(5, 4))))
    checks.append(("sum", ad.grad_check(
        lambda t: ad.sq_norm(ad.sum(t)), rnd(3, 4))))
    checks.append(("sq_norm", ad.grad_check(lambda t: ad.sq_norm(t), rnd(3, 4))))
    checks.append(("log_softmax", ad.grad_check(
        lambda t: ad.sq_norm(ad.log_softmax(t)), rnd(3, 5))))
    labels = rng.integers(0, 5, size=3)
    checks.append(("nll", ad.grad_check(
        lambda t: ad.sum(ad.nll(ad.log_softmax(t), labels)), rnd(3, 5))))
    checks.append(("max_zero", ad.grad_check(
        lambda t: ad.sq_norm(ad.max_zero(t)), rnd(3, 4) + 0.3)))
    a_sym = np.abs(rnd(5, 5))
    a_sym = (a_sym + a_sym.T) / 2
    checks.append(("sym_normalize", ad.grad_check(
        lambda t: ad.sq_norm(ad.sym_normalize(t)), a_sym)))
    return checks


def cmd_grad_check(args) -> int:
    checks = _grad_check_suite(args.seed if args.seed is not None else 0)
    worst = 0.0
    for name, err in checks:
        status = "ok" if err < GRAD_CHECK_TOL else "FAIL"
        print(f"{name:>16}: rel err {err:.3e}  {status}")
        worst = max(worst, err)
    if worst >= GRAD_CHECK_TOL:
        print(f"error: worst rel err {worst:.3e} >= {GRAD_CHECK_TOL}", file=sys.stderr)
        return 1
    print(f"all gradient checks passed (worst rel err {worst:.3e})")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphdm",
        description="Train graph classifiers and distill per-class interpretive graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset file")
    p.add_argument("dataset", help=f"one of: {', '.join(sorted(data.GENERATORS))}")
    p.add_argument("n", type=int, help="number of graphs")
    p.add_argument("seed", type=int, help="generator seed")
    p.add_argument("--out", help="output JSON path (default: <dataset>.json)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="train a model and distill interpretations")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--variant", help="override trajectory variant")
    p.add_argument("--graphs-per-class", type=int, dest="graphs_per_class",
                   help="override interpretive graphs per class")
    p.add_argument("--reps", type=int, help="override evaluation repetitions")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="train surrogates and score interpretations")
    p.add_argument("--interps", required=True, help="interpretations.json from a run")
    p.add_argument("--model", required=True, help="model.json from the same run")
    p.add_argument("--dataset", required=True, help="dataset name or artifact path")
    p.add_argument("--reps", type=int, default=5, help="surrogate repetitions")
    p.add_argument("--seed", type=int, help="override evaluation seed")
    p.add_argument("--out", help="output directory (default: alongside interps)")
    p.add_argument("--self-surrogate", action="store_true",
                   help="score the target against itself instead of training "
                        "surrogates (fidelity check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write per-graph DOT or JSON files")
    p.add_argument("--interps", required=True, help="interpretations.json from a run")
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("grad-check", help="run the autodiff gradient check suite")
    p.add_argument("--seed", type=int, help="seed for the random test points")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
