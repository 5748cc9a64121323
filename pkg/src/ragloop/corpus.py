"""Passage corpus ingestion and lookup.

Corpora arrive as preprocessed passage files (JSONL or TSV). After ingest the
corpus is immutable and can be shared freely across readers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .tokenization import DEFAULT_TOKENIZER, TokenizerConfig, tokenize

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    """Base class for corpus ingestion problems."""


class CorpusFormatError(CorpusError):
    """A record could not be parsed or failed validation (carries the line number)."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateIdError(CorpusError):
    """Strict-mode ingest saw the same passage id twice."""


@dataclass(frozen=True)
class Passage:
    """One addressable unit of corpus text."""

    id: str
    text: str
    title: str = ""
    links: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    total_tokens: int

    @property
    def avg_doc_len(self) -> float:
        return self.total_tokens / self.doc_count if self.doc_count else 0.0


@dataclass
class IngestReport:
    """What happened during one ingest: counts are per source record."""

    path: str
    mode: str  # "strict" | "lenient"
    ingested: int = 0
    skipped: int = 0
    duplicate_overwrites: int = 0
    problems: list[str] = field(default_factory=list)


class Corpus:
    """Immutable passage store with the aggregate stats the index needs."""

    def __init__(self, passages: dict[str, Passage], report: IngestReport,
                 tokenizer: TokenizerConfig = DEFAULT_TOKENIZER):
        self._passages = passages
        self._tokenizer = tokenizer
        self._stats = self._compute_stats()
        self.ingest_report = report

    def _compute_stats(self) -> CorpusStats:
        total = sum(len(tokenize(p.text, self._tokenizer)) for p in self._passages.values())
        return CorpusStats(doc_count=len(self._passages), total_tokens=total)

    @property
    def stats(self) -> CorpusStats:
        return self._stats

    def __len__(self) -> int:
        return len(self._passages)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._passages

    def __getitem__(self, passage_id: str) -> Passage:
        return self._passages[passage_id]

    def get(self, passage_id: str) -> Passage | None:
        """Passage for ``passage_id``, or None when absent (the not-found signal)."""
        return self._passages.get(passage_id)

    def ids(self) -> list[str]:
        return sorted(self._passages)

    def passages(self) -> list[Passage]:
        return [self._passages[i] for i in self.ids()]


def _passage_from_json(obj: dict, line_no: int) -> Passage:
    if not isinstance(obj, dict):
        raise CorpusFormatError("record is not a JSON object", line_no)
    if "id" not in obj:
        raise CorpusFormatError("record missing 'id'", line_no)
    if "text" not in obj:
        raise CorpusFormatError("record missing 'text'", line_no)
    try:
        return Passage(
            id=str(obj["id"]),
            text=str(obj["text"]),
            title=str(obj.get("title", "") or ""),
            links=tuple(str(x) for x in obj.get("links", ()) or ()),
        )
    except ValueError as exc:
        raise CorpusFormatError(str(exc), line_no) from exc


def _passage_from_tsv(line: str, line_no: int) -> Passage:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 3:
        raise CorpusFormatError("expected 3 tab-separated columns (id, title, text)", line_no)
    try:
        return Passage(id=parts[0], title=parts[1], text=parts[2])
    except ValueError as exc:
        raise CorpusFormatError(str(exc), line_no) from exc


def ingest_corpus(path: str | Path, format: str = "jsonl", strict: bool = True,
                  tokenizer: TokenizerConfig = DEFAULT_TOKENIZER) -> Corpus:
    """Read a passage file into an immutable :class:`Corpus`.

    In strict mode (the default) any malformed record or duplicate id aborts
    the ingest; in lenient mode malformed records are skipped and duplicates
    are last-write-wins, both counted in the ingest report.
    """
    path = Path(path)
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown corpus format {format!r}")
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")

    report = IngestReport(path=str(path), mode="strict" if strict else "lenient")
    passages: dict[str, Passage] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                if format == "jsonl":
                    try:
                        obj = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise CorpusFormatError(f"invalid JSON ({exc.msg})", line_no) from exc
                    passage = _passage_from_json(obj, line_no)
                else:
                    passage = _passage_from_tsv(line, line_no)
            except CorpusFormatError as exc:
                if strict:
                    raise
                report.skipped += 1
                report.problems.append(str(exc))
                continue

            if passage.id in passages:
                if strict:
                    raise DuplicateIdError(
                        f"line {line_no}: duplicate passage id {passage.id!r}")
                report.duplicate_overwrites += 1
                logger.warning("corpus %s line %d: overwriting duplicate id %r",
                               path, line_no, passage.id)
            passages[passage.id] = passage

    report.ingested = len(passages)
    corpus = Corpus(passages, report, tokenizer)
    logger.info("ingested %d passages from %s (%s mode)", len(corpus), path, report.mode)
    return corpus
