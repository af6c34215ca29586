"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
Without graph files every run uses the built-in SBM, regenerated per seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .data_io import SbmSpec, generate_sbm, load_graph, load_result, save_result, write_graph
from .errors import ConfigError, TopoguardError
from .experiment import (METHODS, budget_from_pct, default_sbm, map_seeds, run_attack,
                         run_defense, run_grid)
from .gcn import NATURAL_HIDDEN, ROBUST_HIDDEN, GcnModel, misclassification_rate, train_natural
from .graph import apply_perturbation

log = logging.getLogger("topoguard")

GRAPH_FLAGS = ("edge_file", "feature_file", "label_file", "split_file")


def _seeds(text: str) -> list[int]:
    """``"0-4"`` or ``"0,2,5"`` or ``"3"``."""
    try:
        if "-" in text.strip("-"):
            lo, hi = text.split("-")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _pcts(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad percentage list {text!r}") from None


def _graph_loader(args):
    given = [getattr(args, f) for f in GRAPH_FLAGS]
    if any(given):
        if not all(given):
            missing = [f"--{f.replace('_', '-')}" for f, v in zip(GRAPH_FLAGS, given) if not v]
            raise ConfigError(f"graph files are incomplete; missing {', '.join(missing)}")
        graph = load_graph(*given)
        return lambda seed: graph
    return default_sbm


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path) -> GcnModel:
    obj = load_result(path)
    if not isinstance(obj, tuple):
        raise ConfigError(f"{path} holds an attack result, not a model")
    return obj[0]


def cmd_gen_sbm(args):
    spec = SbmSpec(args.blocks, args.nodes_per_block, args.p_in, args.p_out, args.feature_dim,
                   args.feature_signal, args.seed)
    graph = generate_sbm(spec)
    paths = write_graph(graph, _out_dir(args))
    print(f"wrote {graph.num_nodes} nodes, {graph.num_edges} edges to {paths['edges'].parent}")


def cmd_train(args):
    out = _out_dir(args)
    load = _graph_loader(args)

    def one(seed):
        graph = load(seed)
        trace = []
        model = train_natural(graph, args.epochs, args.lr, seed, args.hidden, trace=trace)
        save_result(model, out / f"model_seed{seed}.json", trace=trace)
        report.write_trace(out / f"train_trace_seed{seed}.tsv", trace)
        return seed, misclassification_rate(model, graph), trace

    results = map_seeds(one, args.seeds)
    rows = [(seed, rate) for seed, rate, _ in results]
    m, s = report.mean_std([r for _, r in rows])
    report.write_csv(out / "report.csv", ["seed", "clean"], rows)
    report.write_summary(out / "summary.txt", "natural training", [
        f"epochs {args.epochs}  lr {args.lr}  hidden {args.hidden}  seeds {args.seeds}",
        f"clean misclassification (%): {report.pct(m, s)}",
    ])
    report.plot_traces(out / "train_loss.png", {f"seed {k}": t for k, _, t in results},
                       "training cross-entropy")
    print(f"clean misclassification (%): {report.pct(m, s)}")


def _split_attack_params(params):
    loss, budget = None, None
    for tok in params:
        if tok.lower() in ("ce", "cw"):
            loss = tok.lower()
        else:
            try:
                budget = float(tok)
            except ValueError:
                raise ConfigError(f"unexpected argument {tok!r}; expected ce, cw or a "
                                  "budget percentage") from None
    return loss, budget


def cmd_attack(args):
    if args.method not in METHODS:
        raise ConfigError(f"unknown attack method {args.method!r}; choose from "
                          f"{', '.join(METHODS)}")
    loss, budget_pct = _split_attack_params(args.params)
    loss = args.loss or loss or "ce"
    budget_pct = args.budget_pct if args.budget_pct is not None else budget_pct
    if budget_pct is None:
        budget_pct = 5.0
    out = _out_dir(args)
    load = _graph_loader(args)
    fixed_model = _load_model(args.model_file) if args.model_file else None

    def one(seed):
        graph = load(seed)
        model = fixed_model or train_natural(graph, seed=seed, hidden=args.hidden)
        budget = budget_from_pct(graph, budget_pct)
        res = run_attack(graph, model, args.method, budget, seed, loss, args.kappa, args.iters,
                         args.inner_steps)
        save_result(res, out / f"attack_seed{seed}.json")
        if res.loss_trace:
            report.write_trace(out / f"trace_seed{seed}.tsv", res.loss_trace)
        return seed, budget, res

    results = map_seeds(one, args.seeds)
    keys = ["clean", "attacked"]
    if args.method == "minmax":
        keys += ["clean_retrained", "attacked_retrained"]
    rows = [[seed, args.method, loss, budget_pct, budget, res.num_flips]
            + [res.metrics[k] for k in keys] for seed, budget, res in results]
    stats = {k: report.mean_std([res.metrics[k] for _, _, res in results]) for k in keys}
    report.write_csv(out / "report.csv",
                     ["seed", "method", "loss", "budget_pct", "budget", "flips"] + keys, rows)
    label = args.method if args.method in ("dice", "greedy") else f"{loss}-{args.method}"
    lines = [f"method {label}  budget {budget_pct:g}% of edges  seeds {args.seeds}"]
    if args.kappa:
        lines.append(f"kappa {args.kappa:g}")
    lines += [f"{k:<20} {report.pct(*stats[k])}" for k in keys]
    report.write_summary(out / "summary.txt", "misclassification rate (%)", lines)
    traces = {f"seed {seed}": res.loss_trace for seed, _, res in results if res.loss_trace}
    if traces:
        report.plot_traces(out / "attack_loss.png", traces, f"{loss.upper()} attack loss",
                           f"{label} attack loss")
    print("\n".join(lines))


def cmd_defend(args):
    out = _out_dir(args)
    load = _graph_loader(args)
    budget_pct = 5.0 if args.budget_pct is None else args.budget_pct

    def one(seed):
        graph = load(seed)
        res = run_defense(graph, budget_from_pct(graph, budget_pct), seed, args.iters,
                          args.inner_steps, args.hidden, args.attack_iters)
        save_result(res.robust, out / f"robust_seed{seed}.json", trace=res.trace.loss)
        report.write_trace(out / f"robust_trace_seed{seed}.tsv", res.trace.loss)
        return res

    results = map_seeds(one, args.seeds)
    keys = ["clean_natural", "clean_robust", "attacked_natural", "attacked_robust"]
    rows = [[r.seed, budget_pct, r.budget] + [getattr(r, k) for k in keys] for r in results]
    report.write_csv(out / "report.csv", ["seed", "budget_pct", "budget"] + keys, rows)
    stats = {k: report.mean_std([getattr(r, k) for r in results]) for k in keys}
    names = {"clean_natural": "A / natural", "clean_robust": "A / robust",
             "attacked_natural": "A' / natural", "attacked_robust": "A' / robust"}
    lines = [f"budget {budget_pct:g}% of edges  iters {args.iters}  seeds {args.seeds}"]
    lines += [f"{names[k]:<16} {report.pct(*stats[k])}" for k in keys]
    report.write_summary(out / "summary.txt", "misclassification rate (%)", lines)
    report.plot_traces(out / "robust_loss.png", {f"seed {r.seed}": r.trace.loss for r in results},
                       "training cross-entropy", "robust training loss")
    print("\n".join(lines))


def cmd_grid(args):
    out = _out_dir(args)
    load = _graph_loader(args)

    def one(seed):
        return run_grid(load(seed), seed, args.train_eps, args.attack_eps, args.iters,
                        args.inner_steps, args.hidden, args.attack_iters)

    matrix = np.mean(map_seeds(one, args.seeds), axis=0)
    header = ["eps_attack\\eps_train"] + [f"{p:g}" for p in args.train_eps]
    rows = [[f"{p:g}"] + list(matrix[r]) for r, p in enumerate(args.attack_eps)]
    report.write_csv(out / "grid.csv", header, rows)
    lines = [f"seeds {args.seeds}  rows: attack budget (%), columns: training budget (%)",
             "       " + "".join(f"{p:>8g}" for p in args.train_eps)]
    lines += [f"{p:>7g}" + "".join(f"{100 * v:>8.1f}" for v in matrix[r])
              for r, p in enumerate(args.attack_eps)]
    report.write_summary(out / "summary.txt", "CE-PGD misclassification rate (%)", lines)
    report.plot_grid(out / "grid.png", matrix, args.train_eps, args.attack_eps)
    print("\n".join(lines))


def cmd_eval(args):
    out = _out_dir(args)
    load = _graph_loader(args)
    model = _load_model(args.model_file)
    perturbation = load_result(args.result_file) if args.result_file else None
    if isinstance(perturbation, tuple):
        raise ConfigError(f"{args.result_file} holds a model, not an attack result")

    def one(seed):
        graph = load(seed)
        a_prime = None
        if perturbation is not None:
            if perturbation.s_binary.size != graph.num_pairs:
                raise ConfigError("attack result does not match the graph size")
            a_prime = apply_perturbation(graph.adjacency, perturbation.s_binary)
        return seed, misclassification_rate(model, graph, a_prime)

    rows = map_seeds(one, args.seeds)
    report.write_csv(out / "report.csv", ["seed", "misclassification"], rows)
    m, s = report.mean_std([r for _, r in rows])
    line = f"misclassification (%): {report.pct(m, s)}"
    report.write_summary(out / "summary.txt", "evaluation", [line])
    print(line)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoguard", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, hidden=NATURAL_HIDDEN, iters=200):
        p.add_argument("--seeds", type=_seeds, default=[0], help="e.g. 0-4 or 0,3")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--hidden", type=int, default=hidden)
        p.add_argument("--iters", type=int, default=iters)
        for flag in GRAPH_FLAGS:
            p.add_argument("--" + flag.replace("_", "-"))

    p = sub.add_parser("gen-sbm", help="write a synthetic graph in the text formats")
    spec = SbmSpec()
    p.add_argument("--blocks", type=int, default=spec.blocks)
    p.add_argument("--nodes-per-block", type=int, default=spec.nodes_per_block)
    p.add_argument("--p-in", type=float, default=spec.p_in)
    p.add_argument("--p-out", type=float, default=spec.p_out)
    p.add_argument("--feature-dim", type=int, default=spec.feature_dim)
    p.add_argument("--feature-signal", type=float, default=spec.feature_signal)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("train", help="natural training")
    common(p)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run an attack against a natural model")
    p.add_argument("method", help=" | ".join(METHODS))
    p.add_argument("params", nargs="*", help="optional loss (ce|cw) and budget percentage")
    common(p)
    p.add_argument("--loss", choices=("ce", "cw"))
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--budget-pct", type=float)
    p.add_argument("--inner-steps", type=int, default=20)
    p.add_argument("--model-file")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="robust training and CE-PGD evaluation")
    common(p, hidden=ROBUST_HIDDEN, iters=1000)
    p.add_argument("--budget-pct", type=float)
    p.add_argument("--inner-steps", type=int, default=20)
    p.add_argument("--attack-iters", type=int, default=200)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("grid", help="training budget x attack budget matrix")
    common(p, hidden=ROBUST_HIDDEN, iters=1000)
    p.add_argument("--train-eps", type=_pcts, default=[0.0, 5.0, 10.0])
    p.add_argument("--attack-eps", type=_pcts, default=[0.0, 5.0, 10.0])
    p.add_argument("--inner-steps", type=int, default=20)
    p.add_argument("--attack-iters", type=int, default=200)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="misclassification of a saved model")
    common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--result-file", help="attack result whose perturbation to apply")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        args.func(args)
    except TopoguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
