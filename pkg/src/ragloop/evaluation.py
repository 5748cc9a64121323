"""Benchmark runner: score agent traces over QA dataset files.

Datasets are JSONL with ``id`` / ``question`` / ``answers`` (list) and
optionally ``gold_passages`` for oracle-retrieval mode. Each example gets one
agent trace and one metric row; aggregates are plain means over the rows that
completed. Per-example failures are recorded, never silently dropped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics as m
from .agent import AgentConfig, AgentRunFailure, AgentTrace, run_agent
from .bm25 import Index, oracle_retrieve
from .corpus import Corpus
from .llm import Backend, GatewayError, assistant, chat, user
from .prompts import TemplateRegistry, load_registry
from .rerank import Embedder

logger = logging.getLogger(__name__)

KNOWN_METRICS = ("em", "f1", "acc", "rouge_l", "bleu", "judge")
DEFAULT_METRICS = ("em", "f1", "acc")

_SCORE_RE = re.compile(r"-?\d+")


class JudgeError(Exception):
    """The judge model never produced a usable 0..5 score."""


@dataclass(frozen=True)
class QAExample:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    gold_passages: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"example {self.id!r} has no gold answers")


def load_qa_dataset(path: str | Path) -> list[QAExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            gold = obj.get("gold_passages")
            examples.append(QAExample(
                id=str(obj["id"]),
                question=obj["question"],
                gold_answers=tuple(obj["answers"]),
                gold_passages=tuple(gold) if gold is not None else None,
            ))
    return examples


def judge_score(question: str, pred: str, ref: str, backend: Backend,
                registry: TemplateRegistry, max_retries: int = 2) -> int:
    """LLM-judged 0..5 similarity score between prediction and reference.

    The first integer in the completion is taken as the score; out-of-range or
    missing integers trigger a corrective retry, bounded by ``max_retries``.
    """
    prompt = registry.render("gpt_score", {
        "question": question, "reference_answer": ref, "predicted_answer": pred,
    })
    messages = [user(prompt)]
    for _ in range(1 + max_retries):
        completion = chat(backend, messages)
        match = _SCORE_RE.search(completion)
        if match:
            score = int(match.group())
            if 0 <= score <= 5:
                return score
        messages = messages + [
            assistant(completion or "(empty)"),
            user("Reply with a single line of the form 'Score: <integer 0-5>'."),
        ]
    raise JudgeError(f"no usable score after {1 + max_retries} attempts")


def extract_short_answer(question: str, long_answer: str, backend: Backend,
                         registry: TemplateRegistry) -> str:
    """Condense a long-form answer into the short form the EM/F1/Acc metrics expect."""
    if not long_answer.strip():
        raise ValueError("long answer must be non-empty")
    prompt = registry.render("extract_short_answer",
                             {"question": question, "long_answer": long_answer})
    return chat(backend, [user(prompt)]).strip()


@dataclass
class ExampleRow:
    id: str
    answer: str | None = None
    short_answer: str | None = None
    scores: dict[str, float | int | None] = field(default_factory=dict)
    steps: int | None = None
    error: str | None = None


@dataclass
class MetricReport:
    rows: list[ExampleRow]
    aggregates: dict[str, float]
    metric_names: tuple[str, ...]
    n_examples: int
    n_errors: int
    n_judge_errors: int
    config_fingerprint: str
    incomplete: bool = False


def config_fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _score_example(example: QAExample, trace: AgentTrace, metric_names,
                   backend, judge_backend, extract_backend, registry) -> ExampleRow:
    row = ExampleRow(id=example.id, answer=trace.final_answer, steps=trace.step_count)
    golds = list(example.gold_answers)

    wants_short = any(name in metric_names for name in ("em", "f1", "acc"))
    short = trace.final_answer
    if wants_short and extract_backend is not None:
        short = extract_short_answer(example.question, trace.final_answer,
                                     extract_backend, registry)
        row.short_answer = short

    if "em" in metric_names:
        row.scores["em"] = m.exact_match(short, golds)
    if "f1" in metric_names:
        row.scores["f1"] = m.token_f1(short, golds)
    if "acc" in metric_names:
        row.scores["acc"] = m.accuracy_contains(short, golds)
    if "rouge_l" in metric_names:
        row.scores["rouge_l"] = max(m.rouge_l(trace.final_answer, g) for g in golds)
    if "bleu" in metric_names:
        row.scores["bleu"] = max(m.bleu(trace.final_answer, g) for g in golds)
    if "judge" in metric_names:
        try:
            row.scores["judge"] = judge_score(example.question, trace.final_answer,
                                              golds[0], judge_backend or backend,
                                              registry)
        except (JudgeError, GatewayError) as exc:
            logger.warning("judge failed on %s: %s", example.id, exc)
            row.scores["judge"] = None
    return row


def run_benchmark(examples: list[QAExample], config: AgentConfig, backend: Backend,
                  index: Index | None = None, corpus: Corpus | None = None,
                  metric_names: tuple[str, ...] = DEFAULT_METRICS,
                  sample_limit: int | None = None, oracle: bool = False,
                  judge_backend: Backend | None = None,
                  extract_backend: Backend | None = None,
                  registry: TemplateRegistry | None = None,
                  embedder: Embedder | None = None,
                  workers: int = 1) -> MetricReport:
    """Run the agent over a dataset and report per-example and mean metrics.

    Oracle mode bypasses index search and hands the agent each example's gold
    passages; it requires ``corpus`` and gold passage ids on every selected
    example. One bad example never aborts the run.
    """
    unknown = [name for name in metric_names if name not in KNOWN_METRICS]
    if unknown:
        raise ValueError(f"unknown metrics: {unknown}")
    registry = registry or load_registry()

    selected = sorted(examples, key=lambda e: e.id)
    if sample_limit is not None:
        selected = selected[:sample_limit]

    if oracle:
        if corpus is None:
            raise ValueError("oracle mode needs the corpus to resolve gold passages")
        missing = [e.id for e in selected if not e.gold_passages]
        if missing:
            raise ValueError(
                f"oracle mode but {len(missing)} example(s) lack gold passages, "
                f"e.g. {missing[0]!r}")
    elif index is None:
        raise ValueError("run_benchmark needs an index (or oracle mode)")

    reference_map = {e.id: list(e.gold_passages or ()) for e in selected}

    def run_one(example: QAExample) -> ExampleRow:
        try:
            retrieve = None
            if oracle:
                gold = oracle_retrieve(example.id, reference_map)
                docs = [corpus[pid] for pid in gold.ids()]
                retrieve = lambda query, _docs=docs: _docs
            trace = run_agent(example.question, config, backend, index=index,
                              retrieve=retrieve, registry=registry,
                              embedder=embedder)
            return _score_example(example, trace, metric_names, backend,
                                  judge_backend, extract_backend, registry)
        except (AgentRunFailure, GatewayError, ValueError, KeyError) as exc:
            logger.warning("example %s failed: %s", example.id, exc)
            return ExampleRow(id=example.id, error=str(exc))

    rows: list[ExampleRow] = []
    incomplete = False
    if workers <= 1:
        try:
            for example in selected:
                rows.append(run_one(example))
        except KeyboardInterrupt:
            incomplete = True
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, e) for e in selected]
            try:
                rows = [f.result() for f in futures]
            except KeyboardInterrupt:
                for f in futures:
                    f.cancel()
                rows = [f.result() for f in futures if f.done() and not f.cancelled()]
                incomplete = True

    aggregates: dict[str, float] = {}
    scored = [r for r in rows if r.error is None]
    for name in metric_names:
        values = [r.scores[name] for r in scored if r.scores.get(name) is not None]
        if values:
            aggregates[name] = sum(values) / len(values)
    step_values = [r.steps for r in scored if r.steps is not None]
    if step_values:
        aggregates["steps"] = sum(step_values) / len(step_values)

    n_judge_errors = sum(1 for r in scored if r.scores.get("judge", 0) is None)
    fingerprint = config_fingerprint({
        "agent": {
            "budget_k": config.budget_k, "top_k": config.top_k,
            "use_reranker": config.use_reranker, "safety_cap": config.safety_cap,
        },
        "metrics": list(metric_names),
        "sample_limit": sample_limit,
        "oracle": oracle,
    })
    return MetricReport(rows=rows, aggregates=aggregates,
                        metric_names=tuple(metric_names),
                        n_examples=len(rows),
                        n_errors=sum(1 for r in rows if r.error is not None),
                        n_judge_errors=n_judge_errors,
                        config_fingerprint=fingerprint, incomplete=incomplete)


def report_to_dict(report: MetricReport, effective_config: dict | None = None) -> dict:
    return {
        "schema": "ragloop/report/v1",
        "config_fingerprint": report.config_fingerprint,
        "effective_config": effective_config or {},
        "n_examples": report.n_examples,
        "n_errors": report.n_errors,
        "n_judge_errors": report.n_judge_errors,
        "incomplete": report.incomplete,
        "aggregates": report.aggregates,
        "rows": [
            {"id": r.id, "answer": r.answer, "short_answer": r.short_answer,
             "scores": r.scores, "steps": r.steps, "error": r.error}
            for r in report.rows
        ],
    }


def render_report_table(report: MetricReport) -> str:
    """Aligned-column text rendering of the per-example rows and the means."""
    columns = ["id"] + list(report.metric_names) + ["steps"]
    table: list[list[str]] = [columns]
    for row in report.rows:
        if row.error is not None:
            table.append([row.id] + ["ERROR"] * (len(columns) - 1))
            continue
        cells = [row.id]
        for name in report.metric_names:
            value = row.scores.get(name)
            cells.append("-" if value is None else f"{value:.4f}")
        cells.append(str(row.steps))
        table.append(cells)
    mean_cells = ["mean"]
    for name in report.metric_names:
        mean = report.aggregates.get(name)
        mean_cells.append("-" if mean is None else f"{mean:.4f}")
    mean_cells.append(f"{report.aggregates.get('steps', 0):.2f}")
    table.append(mean_cells)

    widths = [max(len(row[i]) for row in table) for i in range(len(columns))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
             for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if report.incomplete:
        lines.append("(incomplete: run interrupted)")
    return "\n".join(lines)
