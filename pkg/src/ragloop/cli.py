"""Operator command line: index building, single questions, benchmarks, forge runs.

Exit codes are a stable contract for scripting: 0 success, 1 domain failure
(an agent run or benchmark example errored), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from . import __version__
from .agent import (AgentConfig, AgentRunFailure, run_agent, render_transcript,
                    trace_to_dict)
from .bm25 import (EmptyCorpusError, IndexFormatError, build_index, load_index,
                   save_index)
from .config import (AppConfig, ConfigError, backend_for, build_embedder,
                     load_config)
from .corpus import CorpusError, ingest_corpus
from .evaluation import (DEFAULT_METRICS, load_qa_dataset, render_report_table,
                         report_to_dict, run_benchmark)
from .forge import (ForgeConfig, ForgeError, annotation_from_dict,
                    emit_training_records, load_annotations,
                    question_type_stats, run_forge, verify_annotation)
from .llm import GatewayError
from .prompts import TemplateError, load_registry
from .rerank import Embedder

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_DOMAIN):
        super().__init__(message)
        self.code = code


def _load_corpus(config: AppConfig, override: str | None = None):
    path = override or config.corpus_path
    if not path:
        raise CliError("no corpus path configured (use --corpus or [corpus] path)",
                       EXIT_USAGE)
    try:
        return ingest_corpus(path, format=config.corpus_format)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except CorpusError as exc:
        raise CliError(f"corpus ingest failed: {exc}") from exc


def _load_index(config: AppConfig, corpus, override: str | None = None):
    path = override or config.index_path
    if not path:
        raise CliError("no index path configured (use --index or [index] path)",
                       EXIT_USAGE)
    if not Path(path).exists():
        raise CliError(f"index file not found: {path} (run 'ragloop index' first)",
                       EXIT_USAGE)
    try:
        return load_index(path, corpus=corpus)
    except IndexFormatError as exc:
        raise CliError(f"cannot load index: {exc}") from exc


def _registry(config: AppConfig):
    try:
        return load_registry(config.templates_dir)
    except TemplateError as exc:
        raise CliError(f"template registry failed to load: {exc}", EXIT_USAGE) from exc


def _agent_config(config: AppConfig, args) -> AgentConfig:
    agent = config.agent
    budget = agent.budget_k
    if getattr(args, "max_search", None) is not None:
        budget = None if args.max_search == 0 else args.max_search
    return AgentConfig(
        budget_k=budget,
        top_k=getattr(args, "top_k", None) or agent.top_k,
        use_reranker=bool(getattr(args, "use_reranker", False)) or agent.use_reranker,
        max_planner_parse_retries=agent.max_planner_parse_retries,
        safety_cap=agent.safety_cap,
    )


def _maybe_embedder(config: AppConfig, agent_config: AgentConfig) -> Embedder | None:
    return build_embedder(config) if agent_config.use_reranker else None


def cmd_index(config: AppConfig, args) -> int:
    corpus = _load_corpus(config, args.corpus)
    try:
        index = build_index(corpus)
    except EmptyCorpusError as exc:
        raise CliError(str(exc)) from exc
    out = args.out or config.index_path
    if not out:
        raise CliError("no output path (use --out or [index] path)", EXIT_USAGE)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    stats = index.stats
    print(f"{stats.doc_count} documents indexed "
          f"(avg length {stats.avg_doc_len:.2f} tokens) -> {out}")
    report = corpus.ingest_report
    if report.skipped or report.duplicate_overwrites:
        print(f"ingest ({report.mode}): skipped {report.skipped}, "
              f"duplicate overwrites {report.duplicate_overwrites}")
    return EXIT_OK


def cmd_ask(config: AppConfig, args) -> int:
    corpus = _load_corpus(config, args.corpus)
    index = _load_index(config, corpus, args.index)
    registry = _registry(config)
    agent_config = _agent_config(config, args)
    backend = backend_for(config, "planner")
    embedder = _maybe_embedder(config, agent_config)

    try:
        trace = run_agent(args.question, agent_config, backend, index=index,
                          registry=registry, embedder=embedder)
    except AgentRunFailure as exc:
        print(f"agent run failed: {exc}", file=sys.stderr)
        for i, step in enumerate(exc.steps, 1):
            print(f"[partial step {i}] {step.thought} -> {step.action.query}",
                  file=sys.stderr)
        return EXIT_DOMAIN

    if args.json:
        print(json.dumps(trace_to_dict(trace), ensure_ascii=False, indent=2,
                         sort_keys=True))
    else:
        print(render_transcript(trace))
    return EXIT_OK


def cmd_eval(config: AppConfig, args) -> int:
    try:
        examples = load_qa_dataset(args.dataset)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    metric_names = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    registry = _registry(config)
    agent_config = _agent_config(config, args)
    backend = backend_for(config, "planner")
    judge_backend = (backend_for(config, "judge")
                     if "judge" in metric_names else None)
    extract_backend = None
    if args.extract_short and any(n in metric_names for n in ("em", "f1", "acc")):
        extract_backend = backend_for(config, "extract")

    corpus = _load_corpus(config, args.corpus)
    index = None
    if not args.oracle_retrieval:
        index = _load_index(config, corpus, args.index)
    embedder = _maybe_embedder(config, agent_config)

    try:
        report = run_benchmark(
            examples, agent_config, backend, index=index, corpus=corpus,
            metric_names=metric_names, sample_limit=args.limit,
            oracle=args.oracle_retrieval, judge_backend=judge_backend,
            extract_backend=extract_backend, registry=registry,
            embedder=embedder, workers=args.workers or config.workers)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc

    out_prefix = Path(args.out) if args.out else Path("eval_report")
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    report_json = report_to_dict(report, effective_config=config.to_dict())
    json_path = out_prefix.with_suffix(".json")
    json_path.write_text(json.dumps(report_json, ensure_ascii=False, indent=2,
                                    sort_keys=True) + "\n", encoding="utf-8")
    table = render_report_table(report)
    out_prefix.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"report written to {json_path}")
    return EXIT_DOMAIN if report.n_errors else EXIT_OK


def cmd_corpus_stats(config: AppConfig, args) -> int:
    corpus = _load_corpus(config, args.corpus)
    stats = corpus.stats
    print(f"documents:    {stats.doc_count}")
    print(f"total tokens: {stats.total_tokens}")
    print(f"avg length:   {stats.avg_doc_len:.2f} tokens")
    report = corpus.ingest_report
    print(f"ingest mode:  {report.mode} "
          f"(skipped {report.skipped}, overwrites {report.duplicate_overwrites})")
    return EXIT_OK


def _forge_config(config: AppConfig, args) -> ForgeConfig:
    train_articles = tuple(args.train_articles.split(",")) if args.train_articles else None
    test_articles = tuple(args.test_articles.split(",")) if args.test_articles else None
    return ForgeConfig(
        seed=args.seed if args.seed is not None else config.seed,
        min_passage_chars=args.min_chars,
        multi_hop_ratio=args.multi_hop_ratio,
        max_steps=args.max_steps,
        train_articles=train_articles,
        test_articles=test_articles,
        test_count=args.test_count,
    )


def cmd_forge_generate(config: AppConfig, args) -> int:
    corpus = _load_corpus(config, args.corpus)
    registry = _registry(config)
    backend = backend_for(config, "forge")
    judge = backend_for(config, "judge") if "judge" in config.backends else backend
    forge_config = _forge_config(config, args)
    try:
        report = run_forge(corpus, backend, args.count, forge_config,
                           out_dir=args.out_dir, registry=registry,
                           judge_backend=judge)
    except ForgeError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    print(f"generated {report.generated}: kept {report.kept}, "
          f"dropped {report.dropped}, failed {report.failed} "
          f"-> {report.records} training records in {args.out_dir}")
    for reason, count in sorted(report.drop_reasons.items()):
        print(f"  {reason}: {count}")
    if report.incomplete:
        print(f"run incomplete: {report.abort_cause}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_forge_verify(config: AppConfig, args) -> int:
    registry = _registry(config)
    backend = backend_for(config, "judge")
    rows = load_annotations(args.annotations)
    rescored = 0
    out_rows = []
    for obj in rows:
        if obj.get("final_answer"):
            score, keep = verify_annotation(obj["question"], obj["final_answer"],
                                            obj["reference_answer"], backend,
                                            registry)
            obj = {**obj, "verification_score": score}
            rescored += 1
        out_rows.append(obj)
    out_path = Path(args.out or args.annotations)
    with open(out_path, "w", encoding="utf-8") as fh:
        for obj in out_rows:
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    kept = sum(1 for o in out_rows if (o.get("verification_score") or 0) >= 4)
    print(f"re-scored {rescored}/{len(out_rows)} annotations; {kept} keepable -> {out_path}")
    return EXIT_OK


def cmd_forge_export(config: AppConfig, args) -> int:
    corpus = _load_corpus(config, args.corpus)
    registry = _registry(config)
    rows = load_annotations(args.annotations)
    records = []
    skipped = 0
    for obj in rows:
        annotation = annotation_from_dict(obj, corpus)
        if not annotation.kept:
            skipped += 1
            continue
        records.extend(emit_training_records(annotation, registry))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False,
                                sort_keys=True) + "\n")
    print(f"exported {len(records)} records from {len(rows) - skipped} "
          f"kept annotations ({skipped} skipped) -> {out_path}")
    return EXIT_OK


def cmd_forge_stats(config: AppConfig, args) -> int:
    rows = load_annotations(args.annotations)
    counts = question_type_stats([obj["question"] for obj in rows])
    total = sum(counts.values())
    print(f"{'type':<8} count  share")
    for name in ("how", "what", "why", "which", "who", "where", "when", "other"):
        count = counts.get(name, 0)
        share = count / total if total else 0.0
        print(f"{name:<8} {count:>5}  {share:>6.1%}")
    print(f"{'total':<8} {total:>5}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragloop",
        description="Retrieval-augmented agent loop over a local BM25 corpus.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="path to the INI config file")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and persist the BM25 index")
    p.add_argument("--corpus", help="corpus JSONL/TSV path (overrides config)")
    p.add_argument("--out", help="index output path (overrides config)")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question and print the trace")
    p.add_argument("question")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.add_argument("--json", action="store_true", help="emit the trace as JSON")
    p.add_argument("--max-search", type=int, default=None,
                   help="search budget (0 = no limit)")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--use-reranker", action="store_true")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="run a benchmark dataset")
    p.add_argument("dataset", help="QA dataset JSONL")
    p.add_argument("--corpus")
    p.add_argument("--index")
    p.add_argument("--limit", type=int, default=500,
                   help="sample limit (first N by id; default 500)")
    p.add_argument("--metrics", default=",".join(DEFAULT_METRICS),
                   help="comma-separated: em,f1,acc,rouge_l,bleu,judge")
    p.add_argument("--oracle-retrieval", action="store_true",
                   help="bypass search; hand the agent each example's gold passages")
    p.add_argument("--extract-short", action="store_true",
                   help="run the short-answer extraction adapter before EM/F1/Acc")
    p.add_argument("--out", help="report path prefix (default eval_report)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--max-search", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--use-reranker", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = p.add_subparsers(dest="corpus_command", required=True)
    pc = corpus_sub.add_parser("stats", help="print corpus statistics")
    pc.add_argument("--corpus")
    pc.set_defaults(func=cmd_corpus_stats)

    p = sub.add_parser("forge", help="synthetic trajectory dataset pipeline")
    forge_sub = p.add_subparsers(dest="forge_command", required=True)

    pf = forge_sub.add_parser("generate", help="run the full pipeline")
    pf.add_argument("--corpus")
    pf.add_argument("--count", type=int, required=True,
                    help="number of train items to generate")
    pf.add_argument("--test-count", type=int, default=0)
    pf.add_argument("--out-dir", required=True)
    pf.add_argument("--seed", type=int, default=None)
    pf.add_argument("--min-chars", type=int, default=200)
    pf.add_argument("--multi-hop-ratio", type=float, default=0.4)
    pf.add_argument("--max-steps", type=int, default=6)
    pf.add_argument("--train-articles", help="comma-separated main passage ids")
    pf.add_argument("--test-articles", help="comma-separated main passage ids")
    pf.set_defaults(func=cmd_forge_generate)

    pf = forge_sub.add_parser("verify", help="re-score an annotations file")
    pf.add_argument("annotations")
    pf.add_argument("--out", help="output path (default: overwrite input)")
    pf.set_defaults(func=cmd_forge_verify)

    pf = forge_sub.add_parser("export", help="emit training records")
    pf.add_argument("annotations")
    pf.add_argument("--corpus")
    pf.add_argument("--out", required=True)
    pf.set_defaults(func=cmd_forge_export)

    pf = forge_sub.add_parser("stats", help="question-type distribution")
    pf.add_argument("annotations")
    pf.set_defaults(func=cmd_forge_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config)
        random.seed(config.seed)
        return args.func(config, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ForgeError, GatewayError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
