"""Command-line drivers: convert, train, verify, sweep.

Exit codes: 0 success, 1 runtime error, 2 verification failure.  Every
command is deterministic given its configuration and seed; run artifacts
land under the --out directory next to a manifest naming them and the
configuration hash they were produced from.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .autodiff import Var
from .config import REGISTRY, build_config
from .graphs import convert_csv, homophily_ratio, load_graph, make_split, save_graph
from .laplacian import SheafIncidence, assemble_laplacian
from .model import restriction_maps
from .training import Dataset, evaluate, fit, write_curves, write_reliability
from .transport import edge_plans
from .verify import CHECKS, run_checks

SWEEP_PARAMS = {"lambda_kl": "train.lambda_kl",
                "lambda_spec": "train.lambda_spec"}


def _write_manifest(out_dir: Path, config_hash: str, artifacts) -> None:
    manifest = {"config_hash": config_hash,
                "artifacts": sorted(artifacts)}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_dataset(cfg) -> Dataset:
    path = cfg["data.path"]
    if not path:
        raise ValueError("data.path is required (set it in the config file "
                         "or with --set data.path=FILE)")
    g, feats, labels = load_graph(Path(path).resolve())
    split = make_split(labels, cfg["data.per_class"], cfg.seed,
                       cfg["data.val_fraction"])
    return Dataset(g=g, feats=feats, labels=labels, split=split)


def cmd_convert(args) -> int:
    g, feats, labels = convert_csv(args.edges, args.features, args.labels)
    save_graph(args.output, g, feats, labels)
    print(f"wrote {args.output}: n={g.n} m={g.m} d0={feats.d0} "
          f"C={labels.C} homophily={homophily_ratio(g, labels):.4f}")
    return 0


def _dump_laplacian(params, data, cfg, path: Path) -> None:
    """Block-expanded `row col value` triplets of the trained operator."""
    plans = edge_plans(data.g.edges, data.feats.H, params.W_proj,
                       cfg.lift_config())
    Rij, Rji = restriction_maps(Var(params.W_theta), plans)
    B = SheafIncidence(n=data.g.n, edges=data.g.edges,
                       Rij=Rij.value, Rji=Rji.value)
    rows, cols, vals = assemble_laplacian(B).coo_rows()
    with open(path, "w") as fh:
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r} {c} {v:.17g}\n")


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.set, args.out)
    data = _load_dataset(cfg)
    tc = cfg.train_config()
    out_dir = cfg.out_dir.resolve()
    out_dir.mkdir(parents=True, exist_ok=True)

    params, reports = fit(data, tc)
    res = evaluate(params, data, tc)
    best_epoch = max(range(len(reports)), key=lambda t: reports[t].val_acc)

    write_curves(reports, out_dir / "curves.csv")
    write_reliability(res.reliability, out_dir / "reliability.csv")
    metrics = {
        "train_acc": res.train_acc,
        "val_acc": res.val_acc,
        "test_acc": res.test_acc,
        "ece": res.ece,
        "nrs": res.nrs,
        "bound": reports[best_epoch].bound,
        "lambda2": reports[best_epoch].lambda2,
        "best_epoch": best_epoch,
        "epochs_run": len(reports),
        "homophily": homophily_ratio(data.g, data.labels),
        "config": cfg.values,
    }
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    artifacts = ["curves.csv", "reliability.csv", "metrics.json"]
    if args.dump_laplacian:
        _dump_laplacian(params, data, tc, out_dir / "laplacian.txt")
        artifacts.append("laplacian.txt")
    _write_manifest(out_dir, cfg.hash(), artifacts)
    print(f"test accuracy {res.test_acc:.4f}, ece {res.ece:.4f}, "
          f"{len(reports)} epochs; artifacts in {out_dir}")
    return 0


def cmd_verify(args) -> int:
    results = run_checks(None if args.which == "all" else [args.which])
    for r in results:
        print(r.summary())
        for line in r.detail:
            print("   ", line)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def cmd_sweep(args) -> int:
    key = SWEEP_PARAMS[args.param]
    try:
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"bad grid {args.grid!r}: {exc}") from exc
    if not grid:
        raise ValueError("empty grid")
    cfg = build_config(args.config, args.set, args.out)
    data = _load_dataset(cfg)
    out_dir = cfg.out_dir.resolve()
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in grid:
        cfg.values[key] = value
        _, reports = fit(data, cfg.train_config())
        best = max(reports, key=lambda r: r.val_acc)
        rows.append((value, best.val_acc, best.test_acc, best.epoch))
        print(f"{args.param}={value:g}: val {best.val_acc:.4f} "
              f"test {best.test_acc:.4f} (epoch {best.epoch})")
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((args.param, "val_acc", "test_acc", "best_epoch"))
        for value, val_acc, test_acc, epoch in rows:
            writer.writerow([f"{value:.10g}", f"{val_acc:.10g}",
                             f"{test_acc:.10g}", epoch])
    _write_manifest(out_dir, cfg.hash(), ["sweep.csv"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otsheaf",
        description="Transport-lifted sheaf diffusion: dataset conversion, "
                    "training, theorem verification, and penalty sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="assemble a JSON dataset from CSVs")
    p.add_argument("edges", help="CSV of i,j pairs")
    p.add_argument("features", help="CSV of per-node feature rows")
    p.add_argument("labels", help="CSV of per-node integer labels")
    p.add_argument("output", help="destination JSON path")
    p.set_defaults(func=cmd_convert)

    def add_config_flags(p):
        p.add_argument("--config", default=None,
                       help="key = value configuration file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config key (repeatable); known keys: "
                            + ", ".join(sorted(REGISTRY)))
        p.add_argument("--out", default="runs", help="artifact directory")

    p = sub.add_parser("train", help="fit a model and write run artifacts")
    add_config_flags(p)
    p.add_argument("--dump-laplacian", action="store_true",
                   help="also write the trained operator as "
                        "'row col value' triplets")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run empirical checks of the "
                                      "theoretical claims")
    p.add_argument("which", nargs="?", default="all",
                   choices=["all", *CHECKS])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="grid sweep of one penalty weight")
    add_config_flags(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--grid", required=True,
                   help="comma-separated values, e.g. 0.01,0.3,1.0")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for verification
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
