"""Synthetic agent-trajectory dataset construction.

A teacher model turns sampled corpus passages into QA items: it picks up to 5
linked supporting passages, writes a single-hop or multi-hop question with a
long-form reference answer, walks the search loop to produce a step-by-step
solution, and a judge scores the predicted answer against the reference on a
0..5 scale. Items scoring 4 or 5 are kept and exported as three
conversational training records (planner, final answer, reflector) with
binary per-turn loss masks.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agent import (FinalAnswer, SEARCH_HEADER, StepParseError,
                    TERMINAL_THOUGHT, THOUGHT_HEADER, format_sources,
                    parse_step)
from .corpus import Corpus, Passage
from .evaluation import JudgeError, judge_score
from .llm import (Backend, ChatMessage, DEFAULT_PARAMS, GatewayError,
                  GenerationParams, assistant, chat, user)
from .prompts import TemplateRegistry, load_registry

logger = logging.getLogger(__name__)

KEEP_THRESHOLD = 4
MAX_SUPPORTING = 5
SYSTEMIC_FAILURE_THRESHOLD = 3  # consecutive backend failures that abort a run

ANNOTATION_SCHEMA = "ragloop/annotation/v1"
RECORD_SCHEMA = "ragloop/record/v1"

QUESTION_GEN_PARAMS = GenerationParams(temperature=0.7)

WH_WORDS = ("how", "what", "why", "which", "who", "where", "when")

_QA_RE = re.compile(r"question\s*:\s*(?P<q>.+?)\s*answer\s*:\s*(?P<a>.+)",
                    re.IGNORECASE | re.DOTALL)


class ForgeError(Exception):
    pass


class ForgeConfigError(ForgeError):
    pass


@dataclass(frozen=True)
class PassagePair:
    """A main passage plus the supporting passages judged relevant to it."""

    main: Passage
    supporting: tuple[Passage, ...] = ()

    def __post_init__(self):
        if len(self.supporting) > MAX_SUPPORTING:
            raise ValueError(f"at most {MAX_SUPPORTING} supporting passages")
        if any(p.id == self.main.id for p in self.supporting):
            raise ValueError("main passage cannot support itself")

    def sources(self) -> list[Passage]:
        return [self.main, *self.supporting]


@dataclass(frozen=True)
class GeneratedQuestion:
    question: str
    reference_answer: str
    mode: str  # "single_hop" | "multi_hop"
    pair: PassagePair

    def __post_init__(self):
        if self.mode not in ("single_hop", "multi_hop"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "multi_hop" and not self.pair.supporting:
            raise ValueError("multi_hop requires at least one supporting passage")


@dataclass(frozen=True)
class SolutionStep:
    thought: str
    query: str
    evidence: str


@dataclass(frozen=True)
class SolutionAnnotation:
    """A teacher-produced trajectory for one generated question.

    ``steps`` holds the search triples; the closing thought is separate, so a
    complete annotation has one more thought than it has queries/evidence.
    """

    question: str
    reference_answer: str
    mode: str
    pair: PassagePair
    steps: tuple[SolutionStep, ...]
    final_answer: str | None
    terminal_thought_present: bool
    verification_score: int | None = None
    failure_cause: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure_cause is not None or not self.terminal_thought_present

    @property
    def kept(self) -> bool:
        return (not self.failed and self.verification_score is not None
                and self.verification_score >= KEEP_THRESHOLD)

    def to_dict(self) -> dict:
        return {
            "schema": ANNOTATION_SCHEMA,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "mode": self.mode,
            "main_id": self.pair.main.id,
            "supporting_ids": [p.id for p in self.pair.supporting],
            "steps": [{"thought": s.thought, "query": s.query, "evidence": s.evidence}
                      for s in self.steps],
            "final_answer": self.final_answer,
            "terminal_thought_present": self.terminal_thought_present,
            "verification_score": self.verification_score,
            "failure_cause": self.failure_cause,
        }


@dataclass(frozen=True)
class TrainingRecord:
    """A multi-turn conversation with a binary per-turn loss mask.

    The mask is true exactly on assistant turns: those tokens bear the loss,
    user and system turns are masked out.
    """

    kind: str  # "planner" | "final_answer" | "reflector"
    turns: tuple[ChatMessage, ...]
    response_mask: tuple[bool, ...]

    def __post_init__(self):
        if self.kind not in ("planner", "final_answer", "reflector"):
            raise ValueError(f"unknown record kind {self.kind!r}")
        if len(self.turns) != len(self.response_mask):
            raise ValueError("mask length must equal turn count")
        for turn, masked in zip(self.turns, self.response_mask):
            if masked != (turn.role == "assistant"):
                raise ValueError("response mask must be true exactly on assistant turns")

    def to_dict(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "kind": self.kind,
            "turns": [t.to_dict() for t in self.turns],
            "response_mask": list(self.response_mask),
        }


def _conversation(turns: list[ChatMessage], kind: str) -> TrainingRecord:
    mask = tuple(t.role == "assistant" for t in turns)
    return TrainingRecord(kind=kind, turns=tuple(turns), response_mask=mask)


def select_supporting(main: Passage, linked: list[Passage], backend: Backend,
                      registry: TemplateRegistry,
                      params: GenerationParams = DEFAULT_PARAMS) -> PassagePair:
    """Ask the model which linked passages support the main one (at most 5).

    An empty candidate list short-circuits without a model call. Names the
    model returns that match no candidate are ignored with a warning.
    """
    if not linked:
        return PassagePair(main=main)
    links_text = "\n".join(f"[{p.id}] {p.title or p.id}" for p in linked)
    prompt = registry.render("related_passages",
                             {"passage": main.text, "links": links_text})
    completion = chat(backend, [user(prompt)], params)

    by_id = {p.id: p for p in linked}
    chosen: list[Passage] = []
    seen: set[str] = set()
    for raw_line in completion.splitlines():
        line = raw_line.strip().strip("-*").strip()
        line = re.sub(r"^\d+[.)]\s*", "", line).strip().strip("[]")
        if not line or line.lower() == "none":
            continue
        candidate = by_id.get(line)
        if candidate is None:
            # tolerate ids embedded in prose
            embedded = [pid for pid in by_id if pid in raw_line]
            candidate = by_id[embedded[0]] if len(embedded) == 1 else None
        if candidate is None:
            logger.warning("supporting-selection named unknown link %r for main %r",
                           raw_line.strip(), main.id)
            continue
        if candidate.id not in seen and candidate.id != main.id:
            seen.add(candidate.id)
            chosen.append(candidate)
    return PassagePair(main=main, supporting=tuple(chosen[:MAX_SUPPORTING]))


def generate_question(pair: PassagePair, mode: str, backend: Backend,
                      registry: TemplateRegistry,
                      params: GenerationParams = QUESTION_GEN_PARAMS,
                      max_retries: int = 2) -> GeneratedQuestion:
    """Generate a question plus long-form reference answer from a pair."""
    if mode == "multi_hop":
        if not pair.supporting:
            raise ValueError("multi_hop generation needs supporting passages")
        prompt = registry.render("gen_multihop",
                                 {"passages": format_sources(pair.sources())})
    elif mode == "single_hop":
        prompt = registry.render("gen_singlehop", {"passage": pair.main.text})
    else:
        raise ValueError(f"unknown mode {mode!r}")

    messages = [user(prompt)]
    for _ in range(1 + max_retries):
        completion = chat(backend, messages, params)
        match = _QA_RE.search(completion)
        if match:
            return GeneratedQuestion(question=match.group("q").strip(),
                                     reference_answer=match.group("a").strip(),
                                     mode=mode, pair=pair)
        messages = messages + [
            assistant(completion or "(empty)"),
            user("Respond exactly in the format:\nQuestion: <question>\n"
                 "Answer: <reference answer>"),
        ]
    raise ForgeError(f"question generation unparseable after {1 + max_retries} attempts")


def annotate_solution(generated: GeneratedQuestion, backend: Backend,
                      registry: TemplateRegistry, max_steps: int = 6,
                      params: GenerationParams = DEFAULT_PARAMS) -> SolutionAnnotation:
    """Walk the teacher through the search loop for one generated question.

    Each step asks for a thought plus search query, then extracts evidence for
    that query from the pair's sources. Stops at the terminal thought; hitting
    ``max_steps`` without it marks the annotation failed rather than
    truncating it into a fake success.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    sources_text = format_sources(generated.pair.sources())
    first_turn = registry.render("solution", {"question": generated.question})
    conversation: list[ChatMessage] = [user(first_turn)]
    steps: list[SolutionStep] = []

    def failed(cause: str) -> SolutionAnnotation:
        return SolutionAnnotation(
            question=generated.question,
            reference_answer=generated.reference_answer,
            mode=generated.mode, pair=generated.pair, steps=tuple(steps),
            final_answer=None, terminal_thought_present=False,
            failure_cause=cause)

    while True:
        try:
            completion = chat(backend, conversation, params)
            step = parse_step(completion)
        except (GatewayError, StepParseError) as exc:
            return failed(f"planner: {exc}")

        if isinstance(step.action, FinalAnswer):
            if not step.action.answer:
                return failed("terminal thought without a final answer")
            return SolutionAnnotation(
                question=generated.question,
                reference_answer=generated.reference_answer,
                mode=generated.mode, pair=generated.pair, steps=tuple(steps),
                final_answer=step.action.answer.strip(),
                terminal_thought_present=True)

        query = step.action.query
        evidence_prompt = registry.render(
            "extract_evidence", {"query": query, "sources": sources_text})
        try:
            evidence = chat(backend, [user(evidence_prompt)], params).strip()
        except GatewayError as exc:
            return failed(f"evidence extraction: {exc}")
        steps.append(SolutionStep(thought=step.thought, query=query, evidence=evidence))
        if len(steps) >= max_steps:
            return failed(f"no terminal thought within {max_steps} steps")
        conversation.append(assistant(f"{THOUGHT_HEADER} {step.thought}\n"
                                      f"{SEARCH_HEADER} {query}"))
        conversation.append(user(evidence))


def verify_annotation(question: str, predicted_final: str, reference_answer: str,
                      backend: Backend, registry: TemplateRegistry) -> tuple[int, bool]:
    """Judge the predicted final answer against the reference: 0..5 score, keep
    iff the score reaches 4."""
    score = judge_score(question, predicted_final, reference_answer, backend, registry)
    return score, score >= KEEP_THRESHOLD


def emit_training_records(annotation: SolutionAnnotation,
                          registry: TemplateRegistry) -> tuple[TrainingRecord, ...]:
    """Export one verified annotation as the three conversational record kinds."""
    if annotation.failed:
        raise ValueError("cannot emit records for a failed annotation")
    if not annotation.kept:
        raise ValueError(
            f"annotation not verified for keeping "
            f"(score={annotation.verification_score})")

    planner_turns: list[ChatMessage] = [
        user(registry.render("train_solve", {"question": annotation.question}))]
    for step in annotation.steps:
        planner_turns.append(assistant(f"{THOUGHT_HEADER} {step.thought}\n"
                                       f"{SEARCH_HEADER} {step.query}"))
        planner_turns.append(user(step.evidence))
    planner_turns.append(assistant(f"{THOUGHT_HEADER} {TERMINAL_THOUGHT}."))

    evidence_text = "\n".join(f"[{i}] {s.evidence}"
                              for i, s in enumerate(annotation.steps, 1))
    final_turns = [
        user(registry.render("train_final_answer",
                             {"question": annotation.question,
                              "evidence": evidence_text or "(no evidence gathered)"})),
        assistant(annotation.final_answer),
    ]

    sources_text = format_sources(annotation.pair.sources())
    reflector_turns: list[ChatMessage] = []
    for step in annotation.steps:
        reflector_turns.append(
            user(registry.render("train_extract_evidence",
                                 {"query": step.query, "sources": sources_text})))
        reflector_turns.append(assistant(step.evidence))

    return (_conversation(planner_turns, "planner"),
            _conversation(final_turns, "final_answer"),
            _conversation(reflector_turns, "reflector"))


def masked_loss(token_logprobs: list[float], mask: list[bool]) -> float:
    """Negative log-likelihood summed over the mask-selected (response) tokens."""
    if len(token_logprobs) != len(mask):
        raise ValueError(
            f"logprobs ({len(token_logprobs)}) and mask ({len(mask)}) differ in length")
    return -sum(lp for lp, keep in zip(token_logprobs, mask) if keep)


def question_type_stats(questions: list[str]) -> dict[str, int]:
    """Distribution of leading interrogatives over a question list.

    The first whitespace token (lowercased, punctuation-stripped) is matched
    against how/what/why/which/who/where/when; anything else counts as
    "other".
    """
    counts: Counter[str] = Counter()
    for question in questions:
        tokens = question.split()
        lead = re.sub(r"[^\w]", "", tokens[0]).lower() if tokens else ""
        counts[lead if lead in WH_WORDS else "other"] += 1
    return dict(counts)


@dataclass(frozen=True)
class ForgeConfig:
    seed: int = 0
    min_passage_chars: int = 200
    multi_hop_ratio: float = 0.4
    max_steps: int = 6
    train_articles: tuple[str, ...] | None = None
    test_articles: tuple[str, ...] | None = None
    test_count: int = 0
    question_temperature: float = 0.7


@dataclass
class ForgeReport:
    generated: int = 0
    kept: int = 0
    dropped: int = 0
    failed: int = 0
    records: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)
    splits: dict[str, int] = field(default_factory=dict)
    effective_config: dict = field(default_factory=dict)
    incomplete: bool = False
    abort_cause: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema": "ragloop/forge-report/v1",
            "generated": self.generated, "kept": self.kept,
            "dropped": self.dropped, "failed": self.failed,
            "records": self.records, "drop_reasons": self.drop_reasons,
            "splits": self.splits,
            "effective_config": self.effective_config,
            "incomplete": self.incomplete,
            "abort_cause": self.abort_cause,
        }


def _eligible_mains(corpus: Corpus, allowed: tuple[str, ...] | None,
                    min_chars: int) -> list[str]:
    ids = list(allowed) if allowed is not None else corpus.ids()
    out = []
    for pid in ids:
        passage = corpus.get(pid)
        if passage is None:
            raise ForgeConfigError(f"configured article {pid!r} is not in the corpus")
        if len(passage.text) >= min_chars:
            out.append(pid)
    return sorted(out)


def _forge_one(corpus: Corpus, main_id: str, mode_draw: float,
               backend: Backend, judge_backend: Backend,
               registry: TemplateRegistry, config: ForgeConfig,
               quarantine: list[dict]) -> tuple[SolutionAnnotation | None, str | None]:
    """One item through the pipeline. Returns (kept annotation, drop reason)."""
    main = corpus[main_id]
    linked = []
    for lid in main.links:
        target = corpus.get(lid)
        if target is None:
            logger.warning("passage %r links to unknown id %r", main_id, lid)
        elif lid != main_id:
            linked.append(target)

    pair = select_supporting(main, linked, backend, registry)
    mode = ("multi_hop" if pair.supporting and mode_draw < config.multi_hop_ratio
            else "single_hop")
    generated = generate_question(
        pair, mode, backend, registry,
        params=GenerationParams(temperature=config.question_temperature))
    annotation = annotate_solution(generated, backend, registry,
                                   max_steps=config.max_steps)
    if annotation.failed:
        quarantine.append({"main_id": main_id, "stage": "annotation",
                           "cause": annotation.failure_cause,
                           "question": annotation.question})
        return None, "annotation_failed"

    try:
        score, keep = verify_annotation(annotation.question, annotation.final_answer,
                                        annotation.reference_answer, judge_backend,
                                        registry)
    except (JudgeError, GatewayError) as exc:
        quarantine.append({"main_id": main_id, "stage": "verification",
                           "cause": str(exc), "question": annotation.question})
        return None, "judge_error"
    annotation = replace(annotation, verification_score=score)
    if not keep:
        quarantine.append({"main_id": main_id, "stage": "verification",
                           "cause": f"score {score} below keep threshold",
                           "question": annotation.question})
        return None, "verification"
    return annotation, None


def run_forge(corpus: Corpus, backend: Backend, target_count: int,
              config: ForgeConfig, out_dir: str | Path,
              registry: TemplateRegistry | None = None,
              judge_backend: Backend | None = None) -> ForgeReport:
    """Run the full pipeline and write dataset files under ``out_dir``.

    Produces ``annotations_<split>.jsonl`` and ``records_<split>.jsonl`` for
    the train split (and test split when ``config.test_count`` > 0), plus
    ``quarantine.jsonl`` for failed/dropped items and ``report.json``.
    Per-item failures isolate; only systemic backend failure aborts the run.
    """
    registry = registry or load_registry()
    judge_backend = judge_backend or backend
    out_dir = Path(out_dir)

    train_set = tuple(config.train_articles) if config.train_articles else None
    test_set = tuple(config.test_articles) if config.test_articles else None
    if train_set and test_set:
        overlap = set(train_set) & set(test_set)
        if overlap:
            raise ForgeConfigError(
                f"train/test article sets intersect: {sorted(overlap)[:5]}")
    if config.test_count > 0 and not test_set:
        raise ForgeConfigError("test_count > 0 requires test_articles")

    plan: list[tuple[str, str]] = []  # (split, main_id)
    rng = random.Random(config.seed)
    for split, allowed, count in (("train", train_set, target_count),
                                  ("test", test_set, config.test_count)):
        if count <= 0:
            continue
        eligible = _eligible_mains(corpus, allowed, config.min_passage_chars)
        if count > len(eligible):
            raise ForgeConfigError(
                f"{split}: requested {count} items but only {len(eligible)} "
                f"eligible main passages")
        plan.extend((split, pid) for pid in rng.sample(eligible, count))
    mode_draws = [rng.random() for _ in plan]

    out_dir.mkdir(parents=True, exist_ok=True)
    report = ForgeReport(effective_config={
        "seed": config.seed, "min_passage_chars": config.min_passage_chars,
        "multi_hop_ratio": config.multi_hop_ratio, "max_steps": config.max_steps,
        "target_count": target_count, "test_count": config.test_count,
        "train_articles": sorted(train_set) if train_set else None,
        "test_articles": sorted(test_set) if test_set else None,
        "question_temperature": config.question_temperature,
    })
    quarantine: list[dict] = []
    kept: dict[str, list[SolutionAnnotation]] = {"train": [], "test": []}
    records: dict[str, list[TrainingRecord]] = {"train": [], "test": []}

    # Item failures isolate; only a systemic backend outage (several gateway
    # failures in a row) or Ctrl-C stops the run, and both still write the
    # partial outputs with the report marked incomplete.
    consecutive_gateway_failures = 0
    try:
        for (split, main_id), draw in zip(plan, mode_draws):
            report.generated += 1
            try:
                annotation, drop_reason = _forge_one(
                    corpus, main_id, draw, backend, judge_backend, registry,
                    config, quarantine)
                consecutive_gateway_failures = 0
            except (ForgeError, GatewayError) as exc:
                logger.warning("forge item %s failed: %s", main_id, exc)
                quarantine.append({"main_id": main_id, "stage": "generation",
                                   "cause": str(exc)})
                annotation, drop_reason = None, "generation_failed"
                if not isinstance(exc, GatewayError):
                    # the backend answered, the item itself was bad
                    consecutive_gateway_failures = 0
                else:
                    consecutive_gateway_failures += 1
                    if consecutive_gateway_failures >= SYSTEMIC_FAILURE_THRESHOLD:
                        report.dropped += 1
                        report.drop_reasons[drop_reason] = \
                            report.drop_reasons.get(drop_reason, 0) + 1
                        report.incomplete = True
                        report.abort_cause = (
                            f"{consecutive_gateway_failures} consecutive backend "
                            f"failures, last: {exc}")
                        break
            if annotation is None:
                if drop_reason == "annotation_failed":
                    report.failed += 1
                else:
                    report.dropped += 1
                report.drop_reasons[drop_reason] = \
                    report.drop_reasons.get(drop_reason, 0) + 1
                continue
            kept[split].append(annotation)
            records[split].extend(emit_training_records(annotation, registry))
    except KeyboardInterrupt:
        report.incomplete = True
        report.abort_cause = "interrupted"

    for split in ("train", "test"):
        if not kept[split] and split == "test" and config.test_count == 0:
            continue
        _write_jsonl(out_dir / f"annotations_{split}.jsonl",
                     [a.to_dict() for a in kept[split]])
        _write_jsonl(out_dir / f"records_{split}.jsonl",
                     [r.to_dict() for r in records[split]])
        report.splits[split] = len(kept[split])

    _write_jsonl(out_dir / "quarantine.jsonl", quarantine)
    report.kept = sum(len(v) for v in kept.values())
    report.records = sum(len(v) for v in records.values())
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return report


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def load_annotations(path: str | Path) -> list[dict]:
    """Read an annotations JSONL file back as dicts (schema-checked)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("schema") != ANNOTATION_SCHEMA:
                raise ForgeError(f"unexpected annotation schema {obj.get('schema')!r}")
            rows.append(obj)
    return rows


def annotation_from_dict(obj: dict, corpus: Corpus) -> SolutionAnnotation:
    """Rebuild an annotation from its JSONL form, resolving passages in ``corpus``."""
    main = corpus.get(obj["main_id"])
    if main is None:
        raise ForgeError(f"annotation main passage {obj['main_id']!r} not in corpus")
    supporting = []
    for pid in obj["supporting_ids"]:
        passage = corpus.get(pid)
        if passage is None:
            raise ForgeError(f"annotation supporting passage {pid!r} not in corpus")
        supporting.append(passage)
    steps = tuple(SolutionStep(thought=s["thought"], query=s["query"],
                               evidence=s["evidence"]) for s in obj["steps"])
    return SolutionAnnotation(
        question=obj["question"], reference_answer=obj["reference_answer"],
        mode=obj["mode"], pair=PassagePair(main=main, supporting=tuple(supporting)),
        steps=steps, final_answer=obj["final_answer"],
        terminal_thought_present=obj["terminal_thought_present"],
        verification_score=obj.get("verification_score"),
        failure_cause=obj.get("failure_cause"))
