"""The plan -> search -> reflect loop.

A planner model decides at every step between searching for more external
knowledge and declaring it has enough; retrieved passages pass through an
evidence reflector that condenses them (or reports the ``No information
found.`` sentinel), and everything the loop saw is kept in working memory so
each planner call receives the question followed by every prior thought,
query and evidence in order. A preconfigured budget caps the number of
searches; either way the run ends with a dedicated final-answer call over the
gathered evidence.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace

from .bm25 import Index, RetrievalResult, search as bm25_search
from .corpus import Passage
from .llm import (Backend, ChatMessage, DEFAULT_PARAMS, GatewayError,
                  GenerationParams, assistant, chat, system, user)
from .prompts import TemplateRegistry, load_registry
from .rerank import Embedder, RerankError, rerank

logger = logging.getLogger(__name__)

NO_INFORMATION = "No information found."
TERMINAL_THOUGHT = "I have the final answer"

THOUGHT_HEADER = "### Thought:"
SEARCH_HEADER = "### Action - Search Input:"
FINAL_HEADER = "### Action - Final Answer:"
EVIDENCE_HEADER = "### Evidence:"

TRACE_SCHEMA = "ragloop/trace/v1"

_HEADER_RE = re.compile(
    r"^[ \t]*#{2,}\s*(?P<name>thought|action\s*-\s*search\s*input"
    r"|action\s*-\s*final\s*answer|evidence)\s*:[ \t]*",
    re.IGNORECASE | re.MULTILINE,
)

CORRECTIVE_PROMPT = (
    "Your last reply was not in the expected format. Reply with\n"
    f"{THOUGHT_HEADER} <rationale>\n{SEARCH_HEADER} <search query>\n"
    f"to search, or exactly '{THOUGHT_HEADER} {TERMINAL_THOUGHT}' once the "
    "gathered evidence is sufficient."
)


class AgentError(Exception):
    pass


class StepParseError(AgentError):
    """Planner output did not contain a recognizable thought/action step."""


class PlannerProtocolError(AgentError):
    """Planner kept emitting unparseable output after all corrective retries."""


class AgentRunFailure(AgentError):
    """A run that could not complete; carries the steps executed so far."""

    def __init__(self, message: str, question: str, steps: tuple["AgentStep", ...],
                 cause: Exception | None = None):
        super().__init__(message)
        self.question = question
        self.steps = steps
        self.cause = cause


@dataclass(frozen=True)
class Search:
    query: str

    def __post_init__(self):
        if not self.query.strip():
            raise ValueError("search query must be non-empty")


@dataclass(frozen=True)
class FinalAnswer:
    # Inline answer text, present when the planner emitted one (the forge
    # teacher does; the deployed planner does not have to).
    answer: str | None = None


AgentAction = Search | FinalAnswer


@dataclass(frozen=True)
class AgentStep:
    thought: str
    action: AgentAction
    evidence: str | None = None
    repeated_query: bool = False

    def __post_init__(self):
        if self.evidence is not None and not isinstance(self.action, Search):
            raise ValueError("only search steps carry evidence")


@dataclass
class WorkingMemory:
    """The ordered log the planner sees: question, then per executed step the
    thought, search query and evidence."""

    question: str
    steps: list[AgentStep] = field(default_factory=list)


@dataclass(frozen=True)
class AgentConfig:
    budget_k: int | None = None  # None means "no limit" (safety cap applies)
    top_k: int = 8
    use_reranker: bool = False
    max_planner_parse_retries: int = 2
    safety_cap: int = 10
    rerank_pool_multiplier: int = 4
    k_final: int | None = None  # defaults to top_k
    evidence_char_limit: int | None = None

    def __post_init__(self):
        if self.budget_k is not None and self.budget_k < 1:
            raise ValueError("budget_k must be >= 1 when set")
        if self.safety_cap < 1:
            raise ValueError("safety cap must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    @property
    def effective_budget(self) -> int:
        if self.budget_k is None:
            return self.safety_cap
        return min(self.budget_k, self.safety_cap)


def format_step(step: AgentStep) -> str:
    """Canonical planner emission text for a step."""
    if isinstance(step.action, Search):
        return f"{THOUGHT_HEADER} {step.thought}\n{SEARCH_HEADER} {step.action.query}"
    text = f"{THOUGHT_HEADER} {step.thought}"
    if step.action.answer:
        text += f"\n{FINAL_HEADER} {step.action.answer}"
    return text


def parse_step(text: str) -> AgentStep:
    """Parse one planner completion into an unexecuted step.

    Headers are matched case-insensitively with tolerant whitespace. A thought
    containing the terminal phrase classifies the step as a final answer even
    when no action header follows.
    """
    matches = list(_HEADER_RE.finditer(text))
    sections: dict[str, str] = {}
    for i, m in enumerate(matches):
        name = re.sub(r"\s+", " ", m.group("name").lower())
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        if name not in sections:
            sections[name] = text[m.end():end].strip()

    thought = sections.get("thought", "")
    search_input = sections.get("action - search input")
    final_text = sections.get("action - final answer")

    if TERMINAL_THOUGHT.lower() in thought.lower():
        return AgentStep(thought=thought, action=FinalAnswer(answer=final_text or None))
    if final_text is not None:
        return AgentStep(thought=thought, action=FinalAnswer(answer=final_text))
    if search_input:
        return AgentStep(thought=thought, action=Search(query=search_input))
    raise StepParseError(
        f"no actionable thought/action headers in planner output: {text[:120]!r}")


def serialize_memory(memory: WorkingMemory, first_turn: str | None = None,
                     system_prompt: str | None = None) -> list[ChatMessage]:
    """Render working memory as an alternating conversation.

    The first user turn is the question (or ``first_turn``, typically the
    rendered planner instruction embedding the question); each executed step
    contributes an assistant turn in the canonical emission format followed by
    a user turn carrying the evidence verbatim.
    """
    messages: list[ChatMessage] = []
    if system_prompt:
        messages.append(system(system_prompt))
    messages.append(user(first_turn or memory.question))
    for step in memory.steps:
        messages.append(assistant(format_step(step)))
        if step.evidence is not None:
            messages.append(user(step.evidence))
    return messages


def deserialize_memory(messages: list[ChatMessage]) -> WorkingMemory:
    """Inverse of :func:`serialize_memory` for the unwrapped-question form."""
    body = [m for m in messages if m.role != "system"]
    if not body or body[0].role != "user":
        raise ValueError("conversation must start with the question user turn")
    memory = WorkingMemory(question=body[0].content)
    i = 1
    while i < len(body):
        if body[i].role != "assistant":
            raise ValueError(f"expected assistant turn at position {i}")
        step = parse_step(body[i].content)
        evidence = None
        if i + 1 < len(body) and body[i + 1].role == "user":
            evidence = body[i + 1].content
            i += 1
        if evidence is not None:
            step = replace(step, evidence=evidence)
        memory.steps.append(step)
        i += 1
    return memory


def format_sources(docs: list[Passage]) -> str:
    """Numbered source list handed to the evidence reflector."""
    blocks = []
    for i, doc in enumerate(docs, start=1):
        heading = f"[{i}] {doc.title}".rstrip()
        blocks.append(f"{heading}\n{doc.text}")
    return "\n\n".join(blocks)


def reflect_evidence(query: str, docs: list[Passage], backend: Backend,
                     registry: TemplateRegistry,
                     params: GenerationParams = DEFAULT_PARAMS) -> str:
    """Condense retrieved passages into one evidence string.

    Empty retrieval short-circuits to the sentinel without a model call; the
    model's own judgement of irrelevance arrives as the same sentinel text.
    """
    if not docs:
        return NO_INFORMATION
    prompt = registry.render("train_extract_evidence",
                             {"query": query, "sources": format_sources(docs)})
    return chat(backend, [user(prompt)], params).strip()


def plan_next(memory: WorkingMemory, backend: Backend, config: AgentConfig,
              registry: TemplateRegistry,
              params: GenerationParams = DEFAULT_PARAMS) -> AgentStep:
    """One planner call over the serialized memory, with bounded corrective
    retries when the completion cannot be parsed."""
    first_turn = registry.render("train_solve", {"question": memory.question})
    messages = serialize_memory(memory, first_turn=first_turn)
    attempts = 1 + max(0, config.max_planner_parse_retries)
    last_error: StepParseError | None = None
    for attempt in range(attempts):
        completion = chat(backend, messages, params)
        try:
            return parse_step(completion)
        except StepParseError as exc:
            last_error = exc
            logger.debug("planner parse failure (attempt %d): %s", attempt + 1, exc)
            messages = messages + [assistant(completion or "(empty)"),
                                   user(CORRECTIVE_PROMPT)]
    raise PlannerProtocolError(
        f"planner output unparseable after {attempts} attempts: {last_error}")


def final_answer(memory: WorkingMemory, backend: Backend,
                 registry: TemplateRegistry,
                 params: GenerationParams = DEFAULT_PARAMS) -> str:
    """Dedicated subtask call aggregating all collected evidence."""
    collected = [s.evidence for s in memory.steps if s.evidence is not None]
    if collected:
        evidence_text = "\n".join(f"[{i}] {e}" for i, e in enumerate(collected, 1))
    else:
        evidence_text = "(no evidence gathered)"
    prompt = registry.render("train_final_answer",
                             {"question": memory.question, "evidence": evidence_text})
    answer = chat(backend, [user(prompt)], params).strip()
    if not answer:
        raise AgentError("final-answer subtask returned an empty completion")
    return answer


@dataclass(frozen=True)
class AgentTrace:
    """Complete record of one run: every executed search step, the final
    answer, and why the loop stopped."""

    question: str
    steps: tuple[AgentStep, ...]
    final_answer: str
    terminated_by: str  # "planner_done" | "budget_exhausted"
    terminal_thought: str | None = None

    @property
    def search_count(self) -> int:
        return len(self.steps)

    @property
    def step_count(self) -> int:
        return len(self.steps) + 1


def _default_retriever(index: Index, config: AgentConfig,
                       embedder: Embedder | None):
    pool = config.top_k
    if config.use_reranker:
        k_final = config.k_final or config.top_k
        pool = max(config.top_k, k_final * config.rerank_pool_multiplier)

    def retrieve(query: str) -> list[Passage]:
        result: RetrievalResult = bm25_search(index, query, top_k=pool)
        limit = config.top_k
        if config.use_reranker and result.hits:
            if embedder is None:
                raise AgentError("use_reranker is set but no embedder was provided")
            limit = config.k_final or config.top_k
            try:
                result = rerank(index, query, result, k_final=limit, embedder=embedder)
            except RerankError as exc:
                logger.warning("reranker failed (%s); falling back to sparse order", exc)
                result = exc.sparse_result
        return [index.passage(h.passage_id) for h in result.hits[:limit]]

    return retrieve


def run_agent(question: str, config: AgentConfig, backend: Backend,
              index: Index | None = None, retrieve=None,
              registry: TemplateRegistry | None = None,
              embedder: Embedder | None = None,
              params: GenerationParams = DEFAULT_PARAMS) -> AgentTrace:
    """Run the full loop for one question and return its trace.

    ``retrieve`` (a ``query -> list[Passage]`` callable) overrides index
    search; this is how oracle-retrieval evaluation plugs in. Unrecoverable
    planner or backend failures raise :class:`AgentRunFailure` carrying the
    steps executed so far.
    """
    if retrieve is None:
        if index is None:
            raise ValueError("run_agent needs an index or a retrieve callable")
        retrieve = _default_retriever(index, config, embedder)
    registry = registry or load_registry()

    memory = WorkingMemory(question=question)
    evidence_cache: dict[str, str] = {}
    terminated_by = None
    terminal_thought: str | None = None

    while True:
        try:
            step = plan_next(memory, backend, config, registry, params)
        except (GatewayError, PlannerProtocolError) as exc:
            raise AgentRunFailure(f"planner failed: {exc}", question,
                                  tuple(memory.steps), cause=exc) from exc
        if isinstance(step.action, FinalAnswer):
            terminated_by = "planner_done"
            terminal_thought = step.thought
            break

        query = step.action.query
        if query in evidence_cache:
            evidence = evidence_cache[query]
            repeated = True
            logger.debug("repeated query %r answered from the evidence cache", query)
        else:
            repeated = False
            try:
                docs = retrieve(query)
                evidence = reflect_evidence(query, docs, backend, registry, params)
            except GatewayError as exc:
                raise AgentRunFailure(f"reflector failed: {exc}", question,
                                      tuple(memory.steps), cause=exc) from exc
            evidence_cache[query] = evidence
        if config.evidence_char_limit is not None:
            evidence = evidence[:config.evidence_char_limit]
        memory.steps.append(AgentStep(thought=step.thought, action=step.action,
                                      evidence=evidence, repeated_query=repeated))
        if len(memory.steps) >= config.effective_budget:
            terminated_by = "budget_exhausted"
            break

    try:
        answer = final_answer(memory, backend, registry, params)
    except (GatewayError, AgentError) as exc:
        raise AgentRunFailure(f"final-answer subtask failed: {exc}", question,
                              tuple(memory.steps), cause=exc) from exc

    return AgentTrace(question=question, steps=tuple(memory.steps),
                      final_answer=answer, terminated_by=terminated_by,
                      terminal_thought=terminal_thought)


def trace_to_dict(trace: AgentTrace) -> dict:
    return {
        "schema": TRACE_SCHEMA,
        "question": trace.question,
        "steps": [
            {
                "thought": s.thought,
                "action": {"type": "search", "query": s.action.query},
                "evidence": s.evidence,
                "repeated_query": s.repeated_query,
            }
            for s in trace.steps
        ],
        "terminal_thought": trace.terminal_thought,
        "final_answer": trace.final_answer,
        "terminated_by": trace.terminated_by,
        "search_count": trace.search_count,
        "step_count": trace.step_count,
    }


def trace_to_json(trace: AgentTrace) -> str:
    return json.dumps(trace_to_dict(trace), ensure_ascii=False, sort_keys=True)


def trace_from_dict(data: dict) -> AgentTrace:
    if data.get("schema") != TRACE_SCHEMA:
        raise ValueError(f"unsupported trace schema {data.get('schema')!r}")
    steps = tuple(
        AgentStep(thought=s["thought"], action=Search(query=s["action"]["query"]),
                  evidence=s["evidence"], repeated_query=s.get("repeated_query", False))
        for s in data["steps"]
    )
    return AgentTrace(question=data["question"], steps=steps,
                      final_answer=data["final_answer"],
                      terminated_by=data["terminated_by"],
                      terminal_thought=data.get("terminal_thought"))


def render_transcript(trace: AgentTrace) -> str:
    """Human-readable thought/action/evidence transcript of a trace."""
    lines = [f"Question: {trace.question}", ""]
    for step in trace.steps:
        lines.append(f"{THOUGHT_HEADER} {step.thought}")
        suffix = "  (repeated query, served from cache)" if step.repeated_query else ""
        lines.append(f"{SEARCH_HEADER} {step.action.query}{suffix}")
        lines.append(f"{EVIDENCE_HEADER} {step.evidence}")
        lines.append("")
    if trace.terminated_by == "planner_done":
        lines.append(f"{THOUGHT_HEADER} {trace.terminal_thought}")
    else:
        lines.append(f"[search budget exhausted after {trace.search_count} searches]")
    lines.append(f"{FINAL_HEADER} {trace.final_answer}")
    return "\n".join(lines)
