"""Command-line interface: ``advsgm {ingest,train,account,eval}``.

Exit codes: 0 success (a budget stop counts as success), 1 configuration or
validation failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from advsgm import __version__
from advsgm.config import ConfigError, TrainConfig
from advsgm.evaluation import clustering_mi, link_prediction_auc
from advsgm.graph import (
    Graph,
    GraphFormatError,
    GraphValidationError,
    load_edge_list,
    load_id_map,
    load_labels,
    save_edge_list,
    save_id_map,
    save_labels,
    split_edges,
)
from advsgm.privacy import NO_LIMIT, PrivacyLedger, RdpCurve, max_steps, record_step, spend_table
from advsgm.sgm import read_embeddings, write_embeddings
from advsgm.trainer import Trainer

log = logging.getLogger("advsgm")

EXIT_OK, EXIT_CONFIG, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


# -- dataset bundles --------------------------------------------------------

def load_bundle(path) -> Graph:
    path = Path(path)
    meta_file = path / "dataset.json"
    if not meta_file.is_file():
        raise UsageError(f"{path} is not a dataset bundle (missing dataset.json)")
    meta = json.loads(meta_file.read_text())
    ids = load_id_map(path / "idmap.txt")
    graph = load_edge_list(path / "graph.edges", num_nodes=len(ids))
    graph = Graph(graph.num_nodes, graph.edges, ids)
    labels = path / "labels.txt"
    if labels.is_file():
        graph = load_labels(labels, graph)
    if graph.digest() != meta["digest"]:
        raise GraphValidationError(f"{path}: edge list does not match its recorded digest")
    return graph


def _require_file(p) -> Path:
    p = Path(p)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _prepare_out_dir(out: Path, marker: str, force: bool) -> None:
    if (out / marker).exists() and not force:
        raise UsageError(f"{out} already holds outputs; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def cmd_ingest(args) -> int:
    edge_file = _require_file(args.edge_file)
    graph = load_edge_list(edge_file)
    if args.labels:
        graph = load_labels(_require_file(args.labels), graph)
    out = Path(args.out)
    _prepare_out_dir(out, "dataset.json", args.force)
    save_edge_list(graph, out / "graph.edges")
    save_id_map(graph, out / "idmap.txt")
    if graph.labels:
        save_labels(graph, out / "labels.txt")
    meta = {
        "source": str(edge_file),
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "num_labelled": len(graph.labels or {}),
        "digest": graph.digest(),
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"|V| = {graph.num_nodes}")
    print(f"|E| = {graph.num_edges}")
    return EXIT_OK


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ADVSGM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ADVSGM_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_eps(text: str) -> float | None:
    if text.lower() in ("none", "inf", "nodp"):
        return None
    return float(text)


def cmd_train(args) -> int:
    graph = load_bundle(args.dataset)
    seed = _seed(args)
    if args.algo == "sgm" and args.sigma is not None:
        log.warning("--sigma is ignored for --algo sgm (no privacy mechanism)")
    config = TrainConfig(
        algo=args.algo, B=args.B, k=args.k, r=args.r, C=args.C,
        sigma=5.0 if args.sigma is None else args.sigma, sigma_g=args.sigma_g,
        eta_d=args.eta_d, eta_g=args.eta_g, n_epoch=args.epochs, n_D=args.nD, n_G=args.nG,
        target_eps=args.eps, target_delta=args.delta, a=args.a, b=args.b, seed=seed,
        noise_placement=args.noise_placement, fixed_lambda=args.fixed_lambda,
        plain_sigmoid=args.plain_sigmoid, project_rows=args.project_rows,
    )
    split = split_edges(graph, args.train_fraction, seed)
    config.check_graph(split.train_graph.num_nodes, split.train_graph.num_edges)

    out = Path(args.out)
    _prepare_out_dir(out, "manifest.json", args.force)
    paths = {
        "embeddings": "embeddings.txt",
        "report": "report.json",
        "test_pos": "test_pos.edges",
        "test_neg": "test_neg.edges",
    }
    manifest = {
        "version": version_string(),
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "dataset": str(Path(args.dataset).resolve()),
        "dataset_digest": graph.digest(),
        "seed": seed,
        "train_fraction": args.train_fraction,
        "outputs": paths,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write_pairs(split.test_pos, out / paths["test_pos"])
    _write_pairs(split.test_neg, out / paths["test_neg"])

    trainer = Trainer(split.train_graph, config)
    report = trainer.run()
    write_embeddings(trainer.state.W_in, graph.node_ids, out / paths["embeddings"])
    summary = report.to_dict()
    summary["ledger"] = trainer.state.ledger.to_dict() if config.private else None
    (out / paths["report"]).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    eps = report.final_eps_at_delta
    print(f"stopped_by = {report.stopped_by}")
    print(f"ledger entries = {report.steps_recorded}")
    print(f"eps at delta={config.target_delta:g}: {eps:.6g}" if math.isfinite(eps) else "eps = inf (no DP)")
    return EXIT_OK


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _write_pairs(pairs, path):
    Path(path).write_text("".join(f"{u} {v}\n" for u, v in np.asarray(pairs).tolist()))


def _read_pairs(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def account_table(sigma, B, k, edges, nodes, eps, delta, alpha_max=64):
    """Budget in ledger entries plus the ledger state at that budget."""
    alphas = tuple(range(2, alpha_max + 1))
    gamma_pos, gamma_neg = B / edges, B * k / nodes
    n = max_steps(sigma, gamma_pos, gamma_neg, eps, delta, alphas)
    ledger = PrivacyLedger(alphas, eps, delta)
    curve = RdpCurve.gaussian(sigma)
    if n != NO_LIMIT:
        for step in range(n):
            if step % 2 == 0:
                record_step(ledger, gamma_pos, 0.0, curve)
            else:
                record_step(ledger, 0.0, gamma_neg, curve)
    return n, ledger


def cmd_account(args) -> int:
    for name in ("sigma", "B", "k", "edges", "nodes", "eps"):
        if not getattr(args, name) > 0:
            raise ConfigError(f"--{name} must be positive")
    if not 0 < args.delta < 1:
        raise ConfigError("--delta must lie in (0, 1)")
    if args.B > args.edges:
        raise ConfigError("B exceeds the number of edges")
    if args.B * args.k > args.nodes:
        raise ConfigError("B*k exceeds the number of nodes")
    n, ledger = account_table(args.sigma, args.B, args.k, args.edges, args.nodes, args.eps, args.delta, args.alpha_max)
    print(f"gamma_pos = {args.B / args.edges:.6g}  gamma_neg = {args.B * args.k / args.nodes:.6g}")
    if n == NO_LIMIT:
        print("max_batches = unlimited")
        return EXIT_OK
    print(f"max_batches = {n}")
    print(f"max_disc_iterations = {n // 2}")
    print(f"{'alpha':>5} {'spent':>14} {'eps@delta':>14}")
    for a, s, e in spend_table(ledger, args.delta):
        print(f"{a:>5d} {s:>14.8g} {e:>14.8g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph = load_bundle(args.dataset)
    emb_path = _require_file(args.embeddings)
    ids, W = read_embeddings(emb_path)
    lookup = {orig: k for k, orig in enumerate(graph.node_ids.tolist())}
    if len(ids) != graph.num_nodes or any(i not in lookup for i in ids.tolist()):
        raise ConfigError("embedding rows do not match the dataset's nodes")
    W_in = np.empty_like(W)
    W_in[[lookup[i] for i in ids.tolist()]] = W
    run_dir = emb_path.parent
    report = {}
    if (run_dir / "report.json").is_file() and (run_dir / "manifest.json").is_file():
        manifest = json.loads((run_dir / "manifest.json").read_text())
        report = {"algo": manifest["config"]["algo"], "eps": manifest["config"]["target_eps"]}
    seed = _seed(args)
    if args.task == "lp":
        if (run_dir / "test_pos.edges").is_file() and args.seed is None:
            test_pos = _read_pairs(run_dir / "test_pos.edges")
            test_neg = _read_pairs(run_dir / "test_neg.edges")
        else:
            split = split_edges(graph, args.train_fraction, seed)
            test_pos, test_neg = split.test_pos, split.test_neg
        value = link_prediction_auc(W_in, test_pos, test_neg)
    else:
        if not graph.labels:
            raise ConfigError("clustering evaluation needs node labels; ingest with --labels")
        value, _ = clustering_mi(W_in, graph.labels)
    record = {
        "task": args.task,
        "dataset": str(args.dataset),
        "algo": report.get("algo"),
        "eps": report.get("eps"),
        "value": value,
        "seed": seed,
    }
    line = json.dumps(record, sort_keys=True)
    print(line)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advsgm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="validate and canonicalise an edge list")
    ing.add_argument("edge_file")
    ing.add_argument("--labels")
    ing.add_argument("--out", required=True)
    ing.add_argument("--force", action="store_true")
    ing.set_defaults(func=cmd_ingest)

    d = TrainConfig()
    tr = sub.add_parser("train", help="train embeddings on an ingested dataset")
    tr.add_argument("dataset")
    tr.add_argument("--algo", choices=["advsgm", "sgm", "dp-sgm", "dp-asgm"], default=d.algo)
    tr.add_argument("--eps", type=_parse_eps, default=d.target_eps, help="target epsilon, or 'none'")
    tr.add_argument("--delta", type=float, default=d.target_delta)
    tr.add_argument("--sigma", type=float, default=None, help=f"noise multiplier (default {d.sigma})")
    tr.add_argument("--sigma-g", type=float, default=d.sigma_g)
    tr.add_argument("--B", type=int, default=d.B)
    tr.add_argument("--k", type=int, default=d.k)
    tr.add_argument("--r", type=int, default=d.r)
    tr.add_argument("--C", type=float, default=d.C)
    tr.add_argument("--epochs", type=int, default=d.n_epoch)
    tr.add_argument("--nD", type=int, default=d.n_D)
    tr.add_argument("--nG", type=int, default=d.n_G)
    tr.add_argument("--eta-d", type=float, default=d.eta_d)
    tr.add_argument("--eta-g", type=float, default=d.eta_g)
    tr.add_argument("--a", type=float, default=d.a)
    tr.add_argument("--b", type=float, default=d.b)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--train-fraction", type=float, default=0.9)
    tr.add_argument("--noise-placement", choices=["sample", "row"], default=d.noise_placement)
    tr.add_argument("--fixed-lambda", type=float, default=d.fixed_lambda)
    tr.add_argument("--plain-sigmoid", action="store_true")
    tr.add_argument("--project-rows", action="store_true", help="re-project touched rows to the unit ball after every step")
    tr.add_argument("--out", required=True)
    tr.add_argument("--force", action="store_true")
    tr.set_defaults(func=cmd_train)

    ac = sub.add_parser("account", help="privacy budget in steps for given parameters")
    ac.add_argument("--sigma", type=float, required=True)
    ac.add_argument("--B", type=int, required=True)
    ac.add_argument("--k", type=int, required=True)
    ac.add_argument("--edges", type=int, required=True)
    ac.add_argument("--nodes", type=int, required=True)
    ac.add_argument("--eps", type=float, required=True)
    ac.add_argument("--delta", type=float, default=1e-5)
    ac.add_argument("--alpha-max", type=int, default=64)
    ac.set_defaults(func=cmd_account)

    ev = sub.add_parser("eval", help="link prediction AUC or clustering MI")
    ev.add_argument("dataset")
    ev.add_argument("embeddings")
    ev.add_argument("--task", choices=["lp", "cluster"], required=True)
    ev.add_argument("--seed", type=int, default=None,
                    help="recompute the split with this seed instead of using the run's stored split")
    ev.add_argument("--train-fraction", type=float, default=0.9)
    ev.add_argument("--out", help="append the metric JSON line to this file")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"advsgm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"advsgm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, GraphFormatError, GraphValidationError, ValueError) as exc:
        print(f"advsgm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
