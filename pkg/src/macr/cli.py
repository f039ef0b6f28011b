"""``macr`` command line entry point.

Exit codes: 0 success, 1 usage error, 2 pipeline error, 3 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import causal_lab
from .backend import ResponseCache
from .config import ABLATIONS, PipelineConfig, load_config, make_backend
from .decider import PoolIndex, predict
from .errors import MacrError, ValidationError
from .evalharness import ComparisonRow, compare_reports, run_ablations, write_comparison, write_experiment
from .mediator import build_mediators
from .reasoner import generate_inferences
from .stores import inference_record, mediator_record, read_inferences, write_jsonl
from .treemodel import RiskLabelSet, dump_dataset, parse_dataset

log = logging.getLogger("macr")

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_VALIDATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="pipeline config file (INI key/value)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--stub", action="store_true", help="use the offline scripted backend")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan; no model calls")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="macr", description="Multi-agent causal reasoning pipeline.", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="parse and validate a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", default=None, help="comma-separated label names, lowest risk first")
    p.add_argument("--validate-only", action="store_true")
    p.add_argument("--out", help="write the normalized dataset here")

    p = sub.add_parser("reason", parents=[common], help="generate counterfactual inferences")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cluster", parents=[common], help="cluster inferences into mediators")
    p.add_argument("--inferences", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", parents=[common], help="predict risk levels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pool", required=True, help="labeled demonstration pool")
    p.add_argument("--out")

    p = sub.add_parser("eval", parents=[common], help="k-fold evaluation with ablations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=5, help="number of folds")
    p.add_argument("--ablations", default="full")
    p.add_argument("--report")

    p = sub.add_parser("scm-verify", parents=[common], help="check the front-door estimator on a synthetic SCM")
    p.add_argument("--scm", default="scm-A", help="SCM table file, or scm-A")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--report")

    p = sub.add_parser("cache", parents=[common], help="inspect or clear the response cache")
    p.add_argument("action", choices=("stats", "clear"))
    return parser


# ---------------------------------------------------------------- helpers


def _resolve_config(args, **extra) -> PipelineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "stub", False):
        overrides["backend_kind"] = "stub"
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(getattr(args, "config", None), **overrides)


def _existing(path: str, field: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ValidationError(field, f"{path} does not exist")
    return p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _plan(command: str, cfg: PipelineConfig, **details) -> dict:
    per_tree = {
        "full": {"debate_calls": cfg.n * 4, "decision_calls": cfg.clusters * cfg.votes},
        "analyst_only": {"debate_calls": cfg.n, "decision_calls": cfg.clusters * cfg.votes},
        "no_reasoner": {"debate_calls": 0, "decision_calls": cfg.votes},
        "no_decider": {"debate_calls": cfg.n * 4, "decision_calls": cfg.clusters},
    }[cfg.ablation]
    return {"command": command, "dry_run": True, "config": cfg.summary(), "calls_per_tree_at_most": per_tree,
            "backend_calls_made": 0, **details}


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    labels = RiskLabelSet.parse(args.labels) if args.labels else RiskLabelSet()
    ds = parse_dataset(_existing(args.input, "--input"), labels)
    counts = Counter(labels[t.gold_label] for t in ds.trees if t.gold_label is not None)
    _emit({
        "trees": len(ds),
        "nodes": sum(t.node_count for t in ds.trees),
        "labeled": sum(counts.values()),
        "label_counts": {name: counts.get(name, 0) for name in labels.labels},
        "valid": True,
    })
    if args.out and not args.validate_only:
        dump_dataset(ds, args.out)
    return EXIT_OK


def cmd_reason(args) -> int:
    cfg = _resolve_config(args, n=args.n)
    ds = parse_dataset(_existing(args.dataset, "--dataset"), cfg.label_set)
    if getattr(args, "dry_run", False):
        _emit(_plan("reason", cfg, trees=len(ds)))
        return EXIT_OK
    backend = make_backend(cfg)
    records = []
    for tree in ds.trees:
        infs = generate_inferences(tree, cfg.n, cfg, backend)
        records.extend(inference_record(i) for i in infs)
    write_jsonl(args.out, records)
    log.info("wrote %d inferences to %s", len(records), args.out)
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = _resolve_config(args, clusters=args.k)
    grouped = read_inferences(_existing(args.inferences, "--inferences"))
    if getattr(args, "dry_run", False):
        _emit(_plan("cluster", cfg, trees=len(grouped)))
        return EXIT_OK
    records = []
    for tree_id, infs in grouped.items():
        mediators, assignment = build_mediators(
            infs, cfg.clusters, cfg.cluster_seed_for(tree_id), normalize=cfg.normalize_embeddings,
            max_iters=cfg.kmeans_max_iters, tol=cfg.kmeans_tol, n_init=cfg.kmeans_n_init,
        )
        records.append(mediator_record(mediators, assignment))
    write_jsonl(args.out, records)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    ds = parse_dataset(_existing(args.dataset, "--dataset"), cfg.label_set)
    pool_ds = parse_dataset(_existing(args.pool, "--pool"), cfg.label_set)
    if getattr(args, "dry_run", False):
        _emit(_plan("predict", cfg, trees=len(ds), pool=len(pool_ds)))
        return EXIT_OK
    if not args.out:
        raise UsageError("predict: --out is required unless --dry-run is set")
    backend = make_backend(cfg)
    pool = PoolIndex.build(pool_ds, backend, cfg.max_depth, cfg.max_nodes)
    records = [predict(tree, pool, cfg, backend).to_record(cfg.label_set) for tree in ds.trees]
    write_jsonl(args.out, records)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    ds = parse_dataset(_existing(args.dataset, "--dataset"), cfg.label_set)
    ablations = [a.strip() for a in args.ablations.split(",") if a.strip()]
    bad = [a for a in ablations if a not in ABLATIONS]
    if bad:
        raise ValidationError("--ablations", f"unknown variants {bad}; expected {ABLATIONS}")
    for a in ablations:
        cfg.with_overrides(ablation=a)  # fails early if a variant's roles lack routes
    if getattr(args, "dry_run", False):
        _emit(_plan("eval", cfg, trees=len(ds), folds=args.k, ablations=ablations))
        return EXIT_OK
    backend = make_backend(cfg)
    results = run_ablations(ds, cfg, backend, ablations, k=args.k)
    reports = [r.report for r in results.values()]
    if args.report:
        out = Path(args.report)
        out.mkdir(parents=True, exist_ok=True)
        for name, res in results.items():
            write_experiment(res, out / name, cfg.label_set)
        if len(reports) >= 2:
            write_comparison(compare_reports(reports), out / "summary.tsv")
        else:
            write_comparison([_single_row(reports[0])], out / "summary.tsv")
    summary = {r.name: {"mean": r.mean(), "std": r.std(), "complete": r.complete} for r in reports}
    _emit(summary)
    return EXIT_OK if all(r.complete for r in reports) else EXIT_PIPELINE


def _single_row(report) -> ComparisonRow:
    return ComparisonRow(report.name, report.mean(), report.std(), (0.0, 0.0, 0.0))


def cmd_scm_verify(args) -> int:
    scm = causal_lab.load_scm(args.scm if args.scm == "scm-A" else _existing(args.scm, "--scm"))
    if args.samples < 1 or args.seeds < 1:
        raise ValidationError("--samples/--seeds", "must be >= 1")
    if getattr(args, "dry_run", False):
        _emit({"command": "scm-verify", "dry_run": True, "scm": scm.name, "sizes": scm.sizes,
               "samples": args.samples, "seeds": args.seeds})
        return EXIT_OK
    rows = causal_lab.verify(scm, args.samples, args.seeds, base_seed=getattr(args, "seed", 0))
    if args.report:
        causal_lab.write_report(rows, args.report)
    fd = [r.tv_frontdoor for r in rows]
    nv = [r.tv_naive for r in rows]
    _emit({
        "scm": scm.name,
        "samples": args.samples,
        "seeds": args.seeds,
        "max_tv_frontdoor": max(fd),
        "median_tv_frontdoor": sorted(fd)[len(fd) // 2],
        "min_tv_naive": min(nv),
        "median_tv_naive": sorted(nv)[len(nv) // 2],
    })
    return EXIT_OK


def cmd_cache(args) -> int:
    cfg = _resolve_config(args)
    if cfg.backend.cache_dir is None:
        raise ValidationError("backend.cache_dir", "no cache directory configured")
    cache = ResponseCache(cfg.backend.cache_dir)
    if args.action == "stats":
        _emit(cache.stats())
    else:
        _emit({"removed": cache.clear()})
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "reason": cmd_reason,
    "cluster": cmd_cluster,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "scm-verify": cmd_scm_verify,
    "cache": cmd_cache,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        logging.basicConfig(
            level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MacrError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
