"""Command-line entry point driving the full pipeline.

Subcommands: ingest, split, augment, train, crossval, evaluate, serve,
incorporate, report. Logs go to standard error; artifact paths go to
standard output so the tool composes in scripts. Operational failures
exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dermatriage.config import PipelineConfig
from dermatriage.corpus import (
    DatasetManifest,
    Split,
    augment_to_target,
    ingest,
    kfold_partitions,
    reserve_test_set,
    stratified_split,
)
from dermatriage.corpus.ingest import format_distribution
from dermatriage.evaluator import RunSummary, compare_runs, evaluate
from dermatriage.labels import parse_label

log = logging.getLogger("dermatriage")


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--seed", type=int, help="seed for all randomized derivations")
    parser.add_argument("--manifest", help="manifest file path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermatriage",
        description="Nine-class dermatological classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "ingest",
        help="walk a labeled directory tree into a fresh manifest "
        "(idempotent: same tree and seed give the same manifest)",
    )
    _common_flags(p)
    p.add_argument("--corpus-dir", help="directory with one subdirectory per label")
    p.add_argument("--label-map", help="optional key=value file mapping directory names to labels")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser(
        "split",
        help="reserve the per-class test set, then split the rest 90:10 "
        "(idempotent: rewrites the manifest deterministically for a seed)",
    )
    _common_flags(p)
    p.add_argument("--test-per-class", type=int, help="ORIGINAL records reserved per class for TEST")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser(
        "augment",
        help="balance classes up to the target by seeded augmentation "
        "(append-only: adds AUGMENTED records and image files)",
    )
    _common_flags(p)
    p.add_argument("--target", type=int, help="target TRAIN records per class")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser(
        "train",
        help="fine-tune a backbone on the manifest's TRAIN/VALIDATION splits "
        "(append-only: writes checkpoint, history and summary files)",
    )
    _common_flags(p)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "crossval",
        help="k-fold cross-validation over TRAIN+VALIDATION "
        "(append-only: writes per-fold checkpoints and an aggregate summary)",
    )
    _common_flags(p)
    _train_flags(p)
    p.add_argument("--k", type=int, help="number of folds")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser(
        "evaluate",
        help="score a checkpoint on the TEST split "
        "(idempotent: rewrites the evaluation report)",
    )
    _common_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem or .weights path")
    p.add_argument("--report-out", help="where to write the evaluation report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "serve",
        help="run the triage HTTP service until interrupted "
        "(append-only: case store event log)",
    )
    _common_flags(p)
    p.add_argument("--checkpoint", help="checkpoint to activate at startup")
    p.add_argument("--store-dir", help="case store directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8081)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser(
        "incorporate",
        help="fold vetted cases back into the training manifest "
        "(idempotent: already-incorporated cases are skipped)",
    )
    _common_flags(p)
    p.add_argument("--store-dir", help="case store directory")
    p.set_defaults(func=cmd_incorporate)

    p = sub.add_parser(
        "report",
        help="render the cross-run comparison table "
        "(idempotent: reads run summaries, writes nothing unless --csv-out)",
    )
    _common_flags(p)
    p.add_argument("--runs-dir", help="directory containing *.summary and *.eval files")
    p.add_argument("--csv-out", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    return parser


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backbone", help="ResNet18 | ResNet50 | ResNet152 | DenseNet161")
    parser.add_argument("--strategy", help="FULL or HEAD_ONLY")
    parser.add_argument("--checkpoint-dir", help="directory for checkpoints and run files")
    parser.add_argument("--epochs", type=int, help="maximum training epochs")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float, help="base learning rate")
    parser.add_argument(
        "--no-pretrained",
        action="store_true",
        help="random backbone init instead of pretraining-corpus weights",
    )


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict[str, str] = {}
    for flag, key in (
        ("seed", "seed"),
        ("manifest", "manifest"),
        ("corpus_dir", "corpus_dir"),
        ("backbone", "backbone"),
        ("strategy", "strategy"),
        ("checkpoint_dir", "checkpoint_dir"),
        ("store_dir", "store_dir"),
        ("test_per_class", "split.test_per_class"),
        ("target", "augment.target_per_class"),
        ("epochs", "train.max_epochs"),
        ("batch_size", "train.batch_size"),
        ("lr", "train.learning_rate"),
        ("k", "train.k_folds"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "no_pretrained", False):
        overrides["pretrained"] = "false"
    return PipelineConfig.from_file(getattr(args, "config", None), overrides)


def cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    label_mapping = None
    if args.label_map:
        from dermatriage.config import parse_kv_file

        label_mapping = {k: parse_label(v) for k, v in parse_kv_file(args.label_map).items()}
    manifest = ingest(cfg.corpus_dir, label_mapping, seed=cfg.seed)
    path = manifest.save(cfg.manifest)
    log.info("ingested %d records\n%s", len(manifest), format_distribution(manifest))
    print(path)
    return 0


def cmd_split(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    manifest = DatasetManifest.load(cfg.manifest)
    manifest = reserve_test_set(manifest, cfg.split)
    manifest = stratified_split(manifest, cfg.split)
    path = manifest.save(cfg.manifest)
    log.info("split complete\n%s", format_distribution(manifest))
    print(path)
    return 0


def cmd_augment(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    manifest = DatasetManifest.load(cfg.manifest)
    before = len(manifest)
    manifest = augment_to_target(manifest, cfg.augment)
    path = manifest.save(cfg.manifest)
    log.info("added %d augmented records\n%s", len(manifest) - before, format_distribution(manifest))
    print(path)
    return 0


def _build_handle(cfg: PipelineConfig):
    from dermatriage.modelzoo import build_classifier

    return build_classifier(
        cfg.backbone, strategy=cfg.strategy, pretrained=cfg.pretrained, seed=cfg.seed
    )


def cmd_train(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from dermatriage.trainer import train

    manifest = DatasetManifest.load(cfg.manifest)
    train_records = manifest.select(split=Split.TRAIN)
    val_records = manifest.select(split=Split.VALIDATION)
    handle = _build_handle(cfg)
    run = train(handle, train_records, val_records, cfg.train, checkpoint_dir=cfg.checkpoint_dir)
    ckpt_dir = Path(cfg.checkpoint_dir)
    run.write_history(ckpt_dir / f"{run.network}.history")
    summary = run.write_summary(ckpt_dir / f"{run.network}.summary")
    log.info(
        "trained %s/%s: best_val_accuracy=%.4f in %.2f min%s",
        run.network, run.strategy, run.best_val_accuracy, run.total_minutes,
        " (early stop)" if run.stopped_early else "",
    )
    print(run.best_checkpoint.weights_path)
    print(summary)
    return 0


def cmd_crossval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from dermatriage.trainer import cross_validate

    manifest = DatasetManifest.load(cfg.manifest)
    folds = kfold_partitions(manifest, cfg.train.k_folds, cfg.seed)
    result = cross_validate(
        lambda: _build_handle(cfg), folds, cfg.train, checkpoint_dir=cfg.checkpoint_dir
    )
    ckpt_dir = Path(cfg.checkpoint_dir)
    for i, run in enumerate(result.runs):
        run.write_history(ckpt_dir / f"{run.network}.fold{i}.history")
    aggregate = ckpt_dir / f"{result.runs[0].network}.crossval"
    aggregate.write_text(
        f"folds={len(result.runs)}\n"
        f"mean_val_accuracy={result.mean_val_accuracy:.6f}\n"
        f"std_val_accuracy={result.std_val_accuracy:.6f}\n"
        f"best_fold={result.best_fold}\n"
        f"best_checkpoint={result.best_checkpoint.weights_path}\n",
        encoding="utf-8",
    )
    log.info("%s", result.summary())
    print(result.best_checkpoint.weights_path)
    print(aggregate)
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from dermatriage.modelzoo import file_digest, load_checkpoint, read_checkpoint_meta

    ckpt_path = Path(args.checkpoint)
    try:
        meta = read_checkpoint_meta(ckpt_path)
    except Exception:
        print(f"error: checkpoint not found: {ckpt_path}", file=sys.stderr)
        return 1
    handle = load_checkpoint(ckpt_path)
    manifest = DatasetManifest.load(cfg.manifest)
    test_records = manifest.select(split=Split.TEST)
    report = evaluate(handle, test_records, model_digest=file_digest(meta.weights_path))
    out = Path(args.report_out) if args.report_out else Path(cfg.report_dir) / f"{meta.metadata['backbone']}.eval"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    log.info(
        "evaluated %d records: top1=%.4f macro=%.4f mean_latency=%.3fs",
        report.evaluated, report.top1_accuracy, report.macro_accuracy,
        report.latency.mean_seconds,
    )
    print(out)
    return 0


def cmd_serve(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    import uvicorn

    from dermatriage.server import create_app
    from dermatriage.service import CaseStore, TriageService

    store_dir = Path(cfg.store_dir)
    service = TriageService(
        store=CaseStore(store_dir / "events.jsonl"),
        image_dir=cfg.image_dir,
        manifest_path=cfg.manifest,
        checkpoint_path=args.checkpoint,
    )
    app = create_app(service)
    log.info("serving on %s:%d (store: %s)", args.host, args.port, store_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_incorporate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from dermatriage.service import CaseStore, TriageService

    service = TriageService(
        store=CaseStore(Path(cfg.store_dir) / "events.jsonl"),
        image_dir=cfg.image_dir,
        manifest_path=cfg.manifest,
    )
    report = service.incorporate_vetted()
    log.info(
        "incorporated %d case(s); %d previously incorporated",
        len(report.added), report.already_incorporated,
    )
    for case_id, record_id in report.added:
        print(f"{case_id}\t{record_id}")
    return 0


def cmd_report(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    runs_dir = Path(args.runs_dir) if args.runs_dir else Path(cfg.checkpoint_dir)
    summaries = sorted(runs_dir.glob("*.summary"))
    if not summaries:
        print(f"error: no *.summary files under {runs_dir}", file=sys.stderr)
        return 1
    entries = []
    for summary in summaries:
        eval_path = summary.with_suffix(".eval")
        if not eval_path.exists():
            eval_candidate = Path(cfg.report_dir) / eval_path.name
            eval_path = eval_candidate if eval_candidate.exists() else None
        entries.append(RunSummary.from_files(summary, eval_path))
    table = compare_runs(entries)
    print(table.render())
    if args.csv_out:
        Path(args.csv_out).write_text(table.render_csv() + "\n", encoding="utf-8")
        log.info("wrote %s", args.csv_out)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
