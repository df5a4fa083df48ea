"""Command line entry points for the full experiment pipeline.

Subcommands: ingest, validate, stats, variants, infer, evaluate, compare,
analyze, experiment.  Exit codes: 0 success, 1 data or validation error,
2 configuration error, 3 endpoint failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    connective_match_rate,
    default_lexicon,
    load_connective_lexicon,
    margins_by_category,
    pair_outcomes,
    relation_margins,
    write_connective_report_tsv,
    write_margins_tsv,
)
from .config import (
    BackendSpec,
    ConfigError,
    ExperimentConfig,
    RunManifest,
    load_experiment_config,
)
from .context import (
    ContextScheme,
    VariantDataset,
    build_variant_dataset,
    corpus_label_inventory,
    read_variant_dataset,
    write_variant_dataset,
)
from .endpoint import EndpointConfig, EndpointError, run_endpoint_inference
from .evaluation import (
    EvalReport,
    aggregate_runs,
    bonferroni,
    format_results_table,
    read_report_scores,
    score,
    wilcoxon_signed_rank,
    write_report_json,
    write_report_tsv,
)
from .inference import (
    import_predictions,
    predict_baseline,
    train_baseline,
    write_predictions,
)
from .treebank import (
    Corpus,
    TreebankError,
    count_instances,
    dependency_distance_stats,
    load_corpus,
    load_split,
    serialize_tree_document,
    write_validation_report,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_ENDPOINT = 3


def _detect_splits(corpus_dir: Path) -> list[str]:
    splits = [d.name for d in sorted(corpus_dir.iterdir()) if d.is_dir()]
    if not splits:
        raise TreebankError(f"no split directories under {corpus_dir}")
    return splits


def cmd_ingest(args) -> int:
    corpus_dir = Path(args.corpus_dir)
    splits = args.splits or _detect_splits(corpus_dir)
    name = args.name or corpus_dir.name
    out_dir = Path(args.out) if args.out else None
    all_violations = []
    for split in splits:
        corpus, violations = load_split(corpus_dir, split, name)
        all_violations.extend(violations)
        if out_dir is not None:
            store = out_dir / name / split
            store.mkdir(parents=True, exist_ok=True)
            for tree in corpus.trees:
                (store / f"{tree.doc_id}.dep").write_bytes(
                    serialize_tree_document(tree))
        print(f"{name}/{split}: {len(corpus.trees)} documents, "
              f"{count_instances(corpus)} instances, "
              f"{len(violations)} violations")
    if out_dir is not None:
        report = out_dir / name / "validation.tsv"
        report.parent.mkdir(parents=True, exist_ok=True)
        write_validation_report(all_violations, report)
    for v in all_violations:
        print(v.report_line(), file=sys.stderr)
    print(f"{len(all_violations)} violations")
    if all_violations and not args.lenient:
        return EXIT_DATA
    return EXIT_OK


def cmd_validate(args) -> int:
    corpus_dir = Path(args.corpus_dir)
    splits = args.splits or _detect_splits(corpus_dir)
    total = 0
    for split in splits:
        _, violations = load_split(corpus_dir, split, args.name)
        for v in violations:
            print(v.report_line())
        total += len(violations)
    print(f"{total} violations", file=sys.stderr)
    return EXIT_DATA if total else EXIT_OK


def _merged_corpus(corpus_dir: Path, splits: list[str], name: str | None) -> Corpus:
    trees = []
    for split in splits:
        corpus = load_corpus(corpus_dir, split, name)
        trees.extend(corpus.trees)
    return Corpus(name or corpus_dir.name, "+".join(splits), tuple(trees))


def cmd_stats(args) -> int:
    corpus_dir = Path(args.corpus_dir)
    splits = args.splits or _detect_splits(corpus_dir)
    corpus = _merged_corpus(corpus_dir, splits, args.name)
    stats = dependency_distance_stats(corpus)
    print(f"corpus {corpus.name} ({corpus.split}): "
          f"{len(corpus.trees)} documents, {stats.edu.total} relations")
    print("unit      adjacent  gap3-5   total")
    for unit, gap in (("EDU", stats.edu), ("sentence", stats.sentence)):
        print(f"{unit:<9} {100 * gap.adjacent_fraction:>7.1f}% "
              f"{100 * gap.gap_3_to_5_fraction:>6.1f}% {gap.total:>7}")
    if args.histogram:
        for unit, gap in (("EDU", stats.edu), ("sentence", stats.sentence)):
            for gap_size, count in gap.histogram.items():
                print(f"{unit}\t{gap_size}\t{count}")
    return EXIT_OK


def cmd_variants(args) -> int:
    corpus_dir = Path(args.corpus_dir)
    scheme = ContextScheme.parse(args.scheme)
    corpus = load_corpus(corpus_dir, args.split, args.name)
    inventory = None
    if args.train_split and (corpus_dir / args.train_split).is_dir():
        inventory = corpus_label_inventory(
            load_corpus(corpus_dir, args.train_split, args.name))
    dataset = build_variant_dataset(corpus, scheme, inventory,
                                    include_relations=args.include_relations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_variant_dataset(dataset, out)
    print(f"wrote {len(dataset.instances)} instances "
          f"({scheme.tag}, {args.split}) to {out}")
    return EXIT_OK


def _endpoint_config_from_args(args) -> EndpointConfig:
    if not args.base_url:
        raise ConfigError("endpoint backend requires --base-url")
    return EndpointConfig(
        base_url=args.base_url,
        model_name=args.model,
        timeout=args.timeout,
        max_retries=args.max_retries,
        parallelism=args.parallelism,
        auth_env=args.auth_env,
        backoff=args.backoff,
    )


def cmd_infer(args) -> int:
    dataset = read_variant_dataset(args.dataset)
    train = read_variant_dataset(args.train)
    dataset = VariantDataset(
        corpus_name=dataset.corpus_name, scheme=dataset.scheme,
        split=dataset.split, instances=dataset.instances,
        label_inventory=train.label_inventory)
    condition = args.condition or f"{dataset.scheme.tag}+{args.backend}"
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        if args.backend in ("majority", "cue"):
            model = train_baseline(train, args.backend)
            preds = predict_baseline(model, dataset, condition, run_id=seed)
        else:
            config = _endpoint_config_from_args(args)
            log_path = out_dir / "logs" / f"{condition}.run{seed}.log.jsonl"
            preds = run_endpoint_inference(dataset, train, config, seed,
                                           log_path, condition)
        path = out_dir / f"{condition}.run{seed}.jsonl"
        write_predictions(preds, path)
        print(f"wrote {path} ({preds.unparsed_count} unparsed)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dataset = read_variant_dataset(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for pred_path in args.predictions:
        preds = import_predictions(pred_path, dataset)
        report = score(dataset, preds)
        stem = Path(pred_path).stem
        write_report_json(report, out_dir / f"{stem}.report.json")
        write_report_tsv(report, out_dir / f"{stem}.report.tsv")
        print(f"{report.condition} run {report.run_id}: "
              f"macro-F1 {report.macro_f1:.4f}, accuracy {report.accuracy:.4f}")
        reports.append(report)
    by_condition: dict[str, list[EvalReport]] = {}
    for r in reports:
        by_condition.setdefault(r.condition, []).append(r)
    for condition, group in by_condition.items():
        if len(group) > 1:
            agg = aggregate_runs(group)
            print(f"{condition}: mean macro-F1 "
                  f"{100 * agg.mean_macro_f1:.2f} ({100 * agg.stddev:.2f}) "
                  f"over {agg.n_runs} runs")
    return EXIT_OK


def cmd_compare(args) -> int:
    def read_scores(paths):
        triples = sorted(read_report_scores(p) for p in paths)
        conditions = {t[0] for t in triples}
        if len(conditions) != 1:
            raise ValueError(f"mixed conditions in report set: {sorted(conditions)}")
        return conditions.pop(), [t[2] for t in triples]

    cond_a, scores_a = read_scores(args.reports_a)
    cond_b, scores_b = read_scores(args.reports_b)
    if len(scores_a) != len(scores_b):
        raise ValueError("report sets must pair run for run")
    result = wilcoxon_signed_rank(scores_a, scores_b, comparison=(cond_a, cond_b))
    [result] = bonferroni([result], m=args.m, alpha=args.alpha)
    print(f"{cond_a} vs {cond_b}: n={result.n_pairs} "
          f"(effective {result.n_effective}), W+={result.w_plus:g}, "
          f"p={result.p_two_sided:.6g}, adjusted p={result.p_adjusted:.6g} "
          f"(m={args.m}), {'significant' if result.significant else 'not significant'} "
          f"at alpha={args.alpha}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    dataset = read_variant_dataset(args.dataset)
    if len(args.preds_a) != len(args.preds_b):
        raise ValueError("need the same number of A and B prediction files")
    lexicon = (load_connective_lexicon(args.lexicon) if args.lexicon
               else default_lexicon())
    outcomes = []
    for run_index, (path_a, path_b) in enumerate(zip(sorted(args.preds_a),
                                                     sorted(args.preds_b))):
        preds_a = import_predictions(path_a, dataset)
        preds_b = import_predictions(path_b, dataset)
        run_id = preds_b.run_id if preds_b.run_id else run_index
        outcomes.extend(pair_outcomes(dataset, preds_a, preds_b, run_id))
    num_runs = len(args.preds_a)
    margins = relation_margins(outcomes, num_runs,
                               normalizer=args.margin_normalizer)
    categories = margins_by_category(margins)
    match_report = connective_match_rate(dataset.instances, categories, lexicon,
                                         level=args.level,
                                         multiword=args.multiword)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_margins_tsv(margins, out_dir / "margins.tsv")
    write_connective_report_tsv(match_report, out_dir / "connectives.tsv")
    for m in margins:
        print(f"{m.relation}: delta={m.delta:g} ({m.category}; "
              f"{m.wins}W/{m.losses}L/{m.ties}T)")
    for category in sorted(match_report.by_category):
        c = match_report.by_category[category]
        print(f"{category}: {c.percentage:.1f}% connective matches "
              f"({c.matched}/{c.total})")
    return EXIT_OK


def _predictions_for_backend(backend: BackendSpec, scheme: ContextScheme,
                             cfg: ExperimentConfig, train_ds, eval_ds,
                             out_dir: Path, manifest: RunManifest) -> dict[int, Path]:
    condition = f"{scheme.tag}+{backend.tag}"
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[int, Path] = {}
    if backend.kind == "import":
        runs = backend.options["runs"].get(scheme.tag)
        if runs is None:
            raise ConfigError(f"import backend {backend.tag!r} has no runs "
                              f"for scheme {scheme.tag}")
        if len(runs) != len(cfg.seeds):
            raise ConfigError(f"import backend {backend.tag!r}: {len(runs)} "
                              f"files for {len(cfg.seeds)} seeds")
        for seed, source in zip(cfg.seeds, runs):
            preds = import_predictions(source, eval_ds, condition=condition,
                                       run_id=seed)
            path = pred_dir / f"{condition}.run{seed}.jsonl"
            write_predictions(preds, path)
            paths[seed] = path
        return paths
    for seed in cfg.seeds:
        stage = f"predict:{condition}:{seed}"
        path = pred_dir / f"{condition}.run{seed}.jsonl"
        if manifest.is_fresh(stage):
            manifest.record(stage, [path], reused=True)
            paths[seed] = path
            continue
        if backend.kind in ("majority", "cue"):
            model = train_baseline(train_ds, backend.kind)
            preds = predict_baseline(model, eval_ds, condition, run_id=seed)
        else:
            endpoint_cfg = EndpointConfig(
                base_url=backend.options["base_url"],
                model_name=backend.options.get("model", "gpt-4"),
                timeout=float(backend.options.get("timeout", 30.0)),
                max_retries=int(backend.options.get("max_retries", 3)),
                parallelism=int(backend.options.get("parallelism", 1)),
                auth_env=backend.options.get("auth_env", "DRCKIT_API_TOKEN"),
                backoff=float(backend.options.get("backoff", 1.0)),
            )
            log_path = out_dir / "logs" / f"{condition}.run{seed}.log.jsonl"
            preds = run_endpoint_inference(eval_ds, train_ds, endpoint_cfg,
                                           seed, log_path, condition)
        write_predictions(preds, path)
        manifest.record(stage, [path])
        paths[seed] = path
    return paths


def cmd_experiment(args) -> int:
    cfg = load_experiment_config(args.config)
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.load_or_create(out_dir / "manifest.json",
                                          cfg.config_hash(), __version__)

    train_corpus = load_corpus(cfg.corpus_dir, cfg.train_split,
                               cfg.corpus_name, cfg.converter)
    eval_corpus = load_corpus(cfg.corpus_dir, cfg.eval_split,
                              cfg.corpus_name, cfg.converter)
    inventory = corpus_label_inventory(train_corpus)
    print(f"ingested {cfg.corpus_name}: "
          f"{cfg.train_split} {count_instances(train_corpus)} instances, "
          f"{cfg.eval_split} {count_instances(eval_corpus)} instances")

    datasets: dict[tuple[str, str], VariantDataset] = {}
    for scheme in cfg.schemes:
        for split, corpus in ((cfg.train_split, train_corpus),
                              (cfg.eval_split, eval_corpus)):
            stage = f"variants:{scheme.tag}:{split}"
            path = out_dir / "variants" / \
                f"{cfg.corpus_name}.{scheme.tag}.{split}.jsonl"
            if manifest.is_fresh(stage):
                dataset = read_variant_dataset(path, cfg.corpus_name, inventory)
                manifest.record(stage, [path], reused=True)
            else:
                path.parent.mkdir(parents=True, exist_ok=True)
                dataset = build_variant_dataset(corpus, scheme, inventory)
                write_variant_dataset(dataset, path)
                manifest.record(stage, [path])
            datasets[(scheme.tag, split)] = dataset

    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    aggregates = []
    scores: dict[tuple[str, str], list[float]] = {}
    predictions: dict[tuple[str, str], dict[int, Path]] = {}
    conditions: dict[tuple[str, str], str] = {}
    for backend in cfg.backends:
        for scheme in cfg.schemes:
            train_ds = datasets[(scheme.tag, cfg.train_split)]
            eval_ds = datasets[(scheme.tag, cfg.eval_split)]
            condition = f"{scheme.tag}+{backend.tag}"
            conditions[(backend.tag, scheme.tag)] = condition
            paths = _predictions_for_backend(backend, scheme, cfg, train_ds,
                                             eval_ds, out_dir, manifest)
            predictions[(backend.tag, scheme.tag)] = paths
            reports = []
            for seed in cfg.seeds:
                preds = import_predictions(paths[seed], eval_ds,
                                           condition=condition, run_id=seed)
                report = score(eval_ds, preds)
                write_report_json(report,
                                  report_dir / f"{condition}.run{seed}.report.json")
                write_report_tsv(report,
                                 report_dir / f"{condition}.run{seed}.report.tsv")
                reports.append(report)
            agg = aggregate_runs(reports)
            aggregates.append(agg)
            scores[(backend.tag, scheme.tag)] = list(agg.per_run_scores)
            print(f"{condition}: mean macro-F1 {100 * agg.mean_macro_f1:.2f} "
                  f"({100 * agg.stddev:.2f}) over {agg.n_runs} runs")

    comparisons = []
    has_default = any(s.kind == "default" for s in cfg.schemes)
    for backend in cfg.backends:
        if not has_default:
            break
        for scheme in cfg.schemes:
            if scheme.kind == "default":
                continue
            comparisons.append(wilcoxon_signed_rank(
                scores[(backend.tag, scheme.tag)],
                scores[(backend.tag, "default")],
                comparison=(conditions[(backend.tag, scheme.tag)],
                            conditions[(backend.tag, "default")]),
            ))
    significance = {}
    if comparisons:
        if cfg.bonferroni_m is None:
            raise ConfigError("bonferroni_m is required when the experiment "
                              "compares schemes")
        if cfg.bonferroni_m < len(comparisons):
            raise ConfigError(f"bonferroni_m = {cfg.bonferroni_m} is smaller "
                              f"than the {len(comparisons)} comparisons")
        adjusted = bonferroni(comparisons, cfg.bonferroni_m, cfg.alpha)
        sig_lines = ["condition\tbaseline\tn_eff\tw_plus\tp\tp_adjusted\tsignificant"]
        for result in adjusted:
            significance[result.comparison[0]] = result
            sig_lines.append(
                f"{result.comparison[0]}\t{result.comparison[1]}"
                f"\t{result.n_effective}\t{result.w_plus:g}"
                f"\t{result.p_two_sided:.6g}\t{result.p_adjusted:.6g}"
                f"\t{result.significant}")
        (out_dir / "significance.tsv").write_text("\n".join(sig_lines) + "\n",
                                                  encoding="utf-8")

    lexicon = (load_connective_lexicon(cfg.lexicon) if cfg.lexicon
               else default_lexicon())
    analysis_dir = out_dir / "analysis"
    for backend in cfg.backends:
        if not has_default:
            break
        eval_default = datasets[("default", cfg.eval_split)]
        for scheme in cfg.schemes:
            if scheme.kind == "default":
                continue
            outcomes = []
            for seed in cfg.seeds:
                preds_a = import_predictions(
                    predictions[(backend.tag, "default")][seed], eval_default)
                preds_b = import_predictions(
                    predictions[(backend.tag, scheme.tag)][seed],
                    datasets[(scheme.tag, cfg.eval_split)])
                outcomes.extend(pair_outcomes(eval_default, preds_a, preds_b,
                                              run_id=seed))
            margins = relation_margins(outcomes, num_runs=len(cfg.seeds))
            categories = margins_by_category(margins)
            match_report = connective_match_rate(eval_default.instances,
                                                 categories, lexicon)
            pair_dir = analysis_dir / f"{backend.tag}.default-vs-{scheme.tag}"
            pair_dir.mkdir(parents=True, exist_ok=True)
            write_margins_tsv(margins, pair_dir / "margins.tsv")
            write_connective_report_tsv(match_report, pair_dir / "connectives.tsv")

    table = format_results_table(aggregates, significance)
    (out_dir / "results_table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    manifest.save()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drckit",
        description="Context-aware discourse relation classification toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan, validate and persist a corpus")
    p.add_argument("corpus_dir")
    p.add_argument("--name")
    p.add_argument("--splits", nargs="*")
    p.add_argument("--out", help="directory for the normalized corpus store")
    p.add_argument("--lenient", action="store_true",
                   help="exit 0 even when documents fail validation")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("validate", help="report violations without persisting")
    p.add_argument("corpus_dir")
    p.add_argument("--name")
    p.add_argument("--splits", nargs="*")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="head/dependent distance statistics")
    p.add_argument("corpus_dir")
    p.add_argument("--name")
    p.add_argument("--splits", nargs="*")
    p.add_argument("--histogram", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("variants", help="render a dataset variant file")
    p.add_argument("corpus_dir")
    p.add_argument("--name")
    p.add_argument("--scheme", required=True, help="default, AD<n> or OR<n>")
    p.add_argument("--split", required=True)
    p.add_argument("--train-split", default="train",
                   help="split supplying the label inventory")
    p.add_argument("--include-relations", action="store_true",
                   help="prefix oracle fragments with their relation label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("infer", help="produce prediction files for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--train", required=True,
                   help="training variant (baseline fitting, ICL sampling)")
    p.add_argument("--backend", required=True,
                   choices=["majority", "cue", "endpoint"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--condition")
    p.add_argument("--out", required=True)
    p.add_argument("--base-url")
    p.add_argument("--model", default="gpt-4")
    p.add_argument("--auth-env", default="DRCKIT_API_TOKEN")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--backoff", type=float, default=1.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score prediction files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="signed-rank test between two conditions")
    p.add_argument("--reports-a", nargs="+", required=True)
    p.add_argument("--reports-b", nargs="+", required=True)
    p.add_argument("--m", type=int, required=True,
                   help="size of the comparison family for Bonferroni")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="paired win/loss/tie error analysis")
    p.add_argument("--dataset", required=True,
                   help="variant file supplying gold labels and arg2 text")
    p.add_argument("--preds-a", nargs="+", required=True)
    p.add_argument("--preds-b", nargs="+", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--level", choices=["instance", "type"], default="instance")
    p.add_argument("--multiword", action="store_true",
                   help="match multiword connectives by longest prefix")
    p.add_argument("--margin-normalizer", choices=["runs", "support"],
                   default="runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except (TreebankError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
