"""Registry and renderer for the prompt templates used across the pipeline.

Templates live as data files (one per id) with a small front-matter header
declaring the id, its required slots, and whether it carries few-shot
demonstrations. Keeping prompt text out of code lets deployments override the
wording via a templates directory without touching the library.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

TEMPLATE_IDS = (
    "related_passages",
    "gen_multihop",
    "gen_singlehop",
    "extract_evidence",
    "solution",
    "extract_short_answer",
    "gpt_score",
    "train_solve",
    "train_extract_evidence",
    "train_final_answer",
)

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")
_BUILTIN_DIR = Path(__file__).parent / "templates"


class TemplateError(Exception):
    pass


class UnknownTemplateError(TemplateError):
    pass


class MissingSlotError(TemplateError):
    def __init__(self, template_id: str, slot: str):
        super().__init__(f"template {template_id!r}: missing slot {slot!r}")
        self.slot = slot


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_slots: frozenset[str]
    shot_style: str  # "zero_shot" | "few_shot"

    def render(self, bindings: dict[str, str]) -> str:
        for slot in sorted(self.required_slots):
            if slot not in bindings:
                raise MissingSlotError(self.id, slot)
        # Slot coverage is validated at load, so this substitution is total;
        # marker-shaped text inside binding values stays untouched data.
        return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], self.body)


def _parse_template_file(path: Path) -> PromptTemplate:
    text = path.read_text(encoding="utf-8")
    if not text.startswith("---\n"):
        raise TemplateError(f"{path}: missing front-matter header")
    try:
        header_text, body = text[4:].split("\n---\n", 1)
    except ValueError:
        raise TemplateError(f"{path}: unterminated front-matter header") from None

    meta: dict[str, str] = {}
    for line in header_text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()

    template_id = meta.get("id", "")
    if template_id not in TEMPLATE_IDS:
        raise TemplateError(f"{path}: unknown template id {template_id!r}")
    shot_style = meta.get("shot_style", "zero_shot")
    if shot_style not in ("zero_shot", "few_shot"):
        raise TemplateError(f"{path}: bad shot_style {shot_style!r}")
    declared = frozenset(s.strip() for s in meta.get("slots", "").split(",") if s.strip())

    body = body.strip("\n")
    placeholders = frozenset(_PLACEHOLDER_RE.findall(body))
    if placeholders != declared:
        raise TemplateError(
            f"{path}: declared slots {sorted(declared)} do not match "
            f"placeholders {sorted(placeholders)}")
    return PromptTemplate(id=template_id, body=body,
                          required_slots=declared, shot_style=shot_style)


class TemplateRegistry:
    """Immutable mapping of template id to template, validated at load."""

    def __init__(self, templates: dict[str, PromptTemplate]):
        missing = [tid for tid in TEMPLATE_IDS if tid not in templates]
        if missing:
            raise TemplateError(f"registry missing templates: {missing}")
        extra = [tid for tid in templates if tid not in TEMPLATE_IDS]
        if extra:
            raise TemplateError(f"registry has unexpected templates: {extra}")
        self._templates = dict(templates)

    def __len__(self) -> int:
        return len(self._templates)

    def get(self, template_id: str) -> PromptTemplate:
        if template_id not in self._templates:
            raise UnknownTemplateError(f"no template with id {template_id!r}")
        return self._templates[template_id]

    def render(self, template_id: str, bindings: dict[str, str]) -> str:
        return self.get(template_id).render(bindings)

    def list_templates(self) -> list[tuple[str, frozenset[str], str]]:
        return [(t.id, t.required_slots, t.shot_style)
                for t in (self._templates[tid] for tid in sorted(self._templates))]


def load_registry(directory: str | Path | None = None) -> TemplateRegistry:
    """Load all ``*.prompt`` files from ``directory`` (default: the built-in set).

    Exactly one file per template id is required.
    """
    directory = Path(directory) if directory else _BUILTIN_DIR
    if not directory.is_dir():
        raise TemplateError(f"template directory not found: {directory}")
    templates: dict[str, PromptTemplate] = {}
    for path in sorted(directory.glob("*.prompt")):
        template = _parse_template_file(path)
        if template.id in templates:
            raise TemplateError(f"{path}: duplicate template id {template.id!r}")
        templates[template.id] = template
    return TemplateRegistry(templates)
