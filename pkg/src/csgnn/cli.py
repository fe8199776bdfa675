"""Command-line entry point.

Subcommands: gen-sbm, train, attack-sweep, verify, certify. Every command is
deterministic given (config, seed): all randomness flows from the one seed.
Exit codes: 0 success, 1 verification failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import verify as verifymod
from .attacks import AttackKind, AttackSpec, evaluate_robustness, results_to_csv
from .graph import PerturbationBudget, load_graph, save_graph
from .network import certificate, forward, load_checkpoint, save_checkpoint
from .sbm import gen_sbm
from .training import accuracy, history_to_csv, train


def _load_values(args) -> dict:
    values = cfgmod.load_file(args.config) if args.config else {}
    values = cfgmod.apply_overrides(values, args.set or [])
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_list(raw, default) -> list:
    if raw is None:
        return list(default)
    return [float(tok) for tok in str(raw).split(",") if tok != ""]


def cmd_gen_sbm(args) -> int:
    values = _load_values(args)
    g = gen_sbm(
        n=int(values.get("n", 100)),
        classes=int(values.get("classes", 2)),
        p_in=float(values.get("p_in", 0.3)),
        p_out=float(values.get("p_out", 0.02)),
        feat_dim=int(values.get("feat_dim", 8)),
        signal=float(values.get("signal", 1.5)),
        seed=int(values.get("seed", 0)),
    )
    out = _out_dir(args)
    save_graph(g, out)
    print(f"wrote SBM graph: n={g.n}, undirected edges={g.num_undirected_edges()} -> {out}")
    return 0


def cmd_train(args) -> int:
    values = _load_values(args)
    if "graph" not in values:
        raise SystemExit2("train needs a 'graph = <dir>' config entry")
    g = load_graph(values["graph"])
    tc = cfgmod.train_config_from(values)
    params, history = train(g, tc)
    out = _out_dir(args)
    (out / "metrics.csv").write_text(history_to_csv(history))
    save_checkpoint(params, out / "model.ckpt")
    logits, _ = forward(g, params, mode="eval")
    summary = (f"epochs_run = {len(history)}\n"
               f"val_acc = {accuracy(logits, g.labels, g.val_mask):.10g}\n"
               f"test_acc = {accuracy(logits, g.labels, g.test_mask):.10g}\n")
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return 0


def cmd_attack_sweep(args) -> int:
    values = _load_values(args)
    if "graph" not in values:
        raise SystemExit2("attack-sweep needs a 'graph = <dir>' config entry")
    g = load_graph(values["graph"])
    tc = cfgmod.train_config_from(values)
    ratios = _float_list(values.get("edge_ratios"), (0.0, 0.5, 1.0))
    feat_epss = _float_list(values.get("feat_eps_list"), ())
    seed0 = int(values.get("seed", 0))
    specs = [AttackSpec(kind=AttackKind.RANDOM_EDGES, edge_ratio=r, seed=seed0) for r in ratios]
    specs += [AttackSpec(kind=AttackKind.FEATURE_NOISE, feat_eps=e, seed=seed0) for e in feat_epss]
    models = str(values.get("models", "csgnn,gcn")).split(",")
    model_cfgs = []
    for name in models:
        name = name.strip()
        if name == "csgnn":
            model_cfgs.append(("csgnn", tc))
        elif name == "gcn":
            model_cfgs.append(("gcn", {"hidden": int(values.get("gcn_hidden", 16)),
                                       "epochs": int(values.get("epochs", 200))}))
        else:
            raise SystemExit2(f"unknown model {name!r}")
    n_seeds = int(values.get("n_seeds", 10))
    rows = evaluate_robustness(g, specs, model_cfgs, seeds=tuple(range(n_seeds)))
    out = _out_dir(args)
    csv_text = results_to_csv(rows)
    (out / "results.csv").write_text(csv_text)
    print(csv_text, end="")
    return 0


def cmd_verify(args) -> int:
    values = _load_values(args)
    results, failures = verifymod.run_all(seed=int(values.get("seed", 0)), overrides=values)
    report = verifymod.render_report(results)
    print(report, end="")
    if args.out:
        out = _out_dir(args)
        (out / "verify_report.txt").write_text(report)
        if failures:
            lines = ["trial,distance_before,distance_after"]
            lines += [f"{idx},{before:.10g},{after:.10g}" for idx, before, after in failures]
            (out / "coupled_contraction_failures.csv").write_text("\n".join(lines) + "\n")
    return 0 if verifymod.all_passed(results) else 1


def cmd_certify(args) -> int:
    values = _load_values(args)
    for key in ("checkpoint", "graph"):
        if key not in values:
            raise SystemExit2(f"certify needs a '{key} = <path>' config entry")
    params = load_checkpoint(values["checkpoint"])
    g = load_graph(values["graph"])
    budget = PerturbationBudget(eps_feat=float(values.get("eps_feat", 0.0)),
                                eps_adj=float(values.get("eps_adj", 0.0)))
    f0 = g.features @ params.encoder
    cert = certificate(f0, g.adjacency, params, budget)
    text = render_certificate(cert, params)
    print(text, end="")
    if args.out:
        (_out_dir(args) / "certificate.txt").write_text(text)
    return 0


def render_certificate(cert: dict, params) -> str:
    from .equivariant import slope_uniform_margin
    lines = [
        "expansivity certificate (embedded-state budgets)",
        f"eps_feat = {cert['eps_feat']:.10g}",
        f"eps_adj  = {cert['eps_adj']:.10g}",
        f"encoder spectral gain = {np.linalg.norm(params.encoder, 2):.10g}",
        "layer  h_feat      h_feat_safe  h_adj       h_adj_max   slope_margin  lip_upper",
    ]
    for row, layer in zip(cert["layers"], params.layers):
        margin = slope_uniform_margin(layer.adjacency.coeffs, layer.adjacency.leaky_slope)
        lines.append(
            f"{row['layer']:<6} {row['h_feature']:<11.4g} {row['h_feature_safe']:<12.4g} "
            f"{row['h_adjacency']:<11.4g} {row['h_adjacency_max']:<11.4g} "
            f"{margin:<13.4g} {row['lipschitz_upper']:.6g}")
    bad = [str(row["layer"]) for row, layer in zip(cert["layers"], params.layers)
           if slope_uniform_margin(layer.adjacency.coeffs, layer.adjacency.leaky_slope) < 0]
    if bad:
        lines.append("warning: layers " + ",".join(bad)
                     + " have negative slope-uniform margin; the l1 nonexpansiveness"
                     " of their adjacency step is not certified for all activation patterns")
    lines.append(f"certified output-distance bound = {cert['bound']:.10g}")
    return "\n".join(lines) + "\n"


class SystemExit2(Exception):
    """Usage error: exits with code 2."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csgnn",
                                     description="coupled contractive graph dynamics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, desc in (
        ("gen-sbm", cmd_gen_sbm, "generate a stochastic block model benchmark graph"),
        ("train", cmd_train, "train on a (possibly attacked) graph"),
        ("attack-sweep", cmd_attack_sweep, "poisoning attack sweep over budgets and models"),
        ("verify", cmd_verify, "run every property suite and report pass/fail"),
        ("certify", cmd_certify, "print an expansivity certificate for a checkpoint"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override (repeatable)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit2 as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
