"""Application configuration: one INI-style file plus flag overrides.

Secrets are referenced as ``${ENV_VAR}`` inside values and resolved from the
environment at load time, so tokens never live in the config file itself.
Backend sections may differ per role (``[backend.planner]``,
``[backend.judge]``...), falling back to the shared ``[backend]`` section.
"""

from __future__ import annotations

import configparser
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig
from .llm import Backend, ScriptedResponse, RemoteBackend, make_scripted
from .rerank import HttpEmbedder

_ENV_RE = re.compile(r"\$\{(\w+)\}")

BACKEND_ROLES = ("planner", "reflector", "judge", "forge", "extract")


class ConfigError(Exception):
    pass


def _expand_env(value: str, origin: str) -> str:
    def lookup(match: re.Match) -> str:
        name = match.group(1)
        if name not in os.environ:
            raise ConfigError(f"{origin}: environment variable {name!r} is not set")
        return os.environ[name]

    return _ENV_RE.sub(lookup, value)


@dataclass
class AppConfig:
    corpus_path: str | None = None
    corpus_format: str = "jsonl"
    index_path: str | None = None
    templates_dir: str | None = None
    seed: int = 0
    workers: int = 1
    agent: AgentConfig = field(default_factory=AgentConfig)
    backends: dict[str, dict] = field(default_factory=dict)
    embedder: dict | None = None
    source_path: str | None = None

    def to_dict(self) -> dict:
        """Effective config for report provenance. Secrets stay redacted."""
        backends = {}
        for role, section in self.backends.items():
            backends[role] = {k: ("<redacted>" if "token" in k else v)
                              for k, v in section.items()}
        return {
            "corpus_path": self.corpus_path,
            "corpus_format": self.corpus_format,
            "index_path": self.index_path,
            "templates_dir": self.templates_dir,
            "seed": self.seed,
            "workers": self.workers,
            "agent": {
                "budget_k": self.agent.budget_k,
                "top_k": self.agent.top_k,
                "use_reranker": self.agent.use_reranker,
                "safety_cap": self.agent.safety_cap,
                "max_planner_parse_retries": self.agent.max_planner_parse_retries,
            },
            "backends": backends,
            "embedder": ({k: ("<redacted>" if "token" in k else v)
                          for k, v in self.embedder.items()}
                         if self.embedder else None),
        }


def _get_int(section, key: str, default: int | None, origin: str) -> int | None:
    raw = section.get(key)
    if raw is None or raw == "":
        return default
    if raw.lower() in ("none", "no-limit", "nolimit"):
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{origin}: {key} must be an integer, got {raw!r}") from None


def _get_bool(section, key: str, default: bool, origin: str) -> bool:
    raw = section.get(key)
    if raw is None or raw == "":
        return default
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{origin}: {key} must be a boolean, got {raw!r}")


def load_config(path: str | Path | None) -> AppConfig:
    """Parse a config file into an :class:`AppConfig`; None gives defaults."""
    config = AppConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    origin = str(path)
    config.source_path = origin

    if parser.has_section("corpus"):
        sec = parser["corpus"]
        config.corpus_path = sec.get("path") or None
        config.corpus_format = sec.get("format", "jsonl")
    if parser.has_section("index"):
        config.index_path = parser["index"].get("path") or None
    if parser.has_section("templates"):
        config.templates_dir = parser["templates"].get("directory") or None
    if parser.has_section("run"):
        sec = parser["run"]
        config.seed = _get_int(sec, "seed", 0, origin) or 0
        config.workers = _get_int(sec, "workers", 1, origin) or 1

    if parser.has_section("agent"):
        sec = parser["agent"]
        config.agent = AgentConfig(
            budget_k=_get_int(sec, "budget_k", None, origin),
            top_k=_get_int(sec, "top_k", 8, origin),
            use_reranker=_get_bool(sec, "use_reranker", False, origin),
            max_planner_parse_retries=_get_int(
                sec, "max_planner_parse_retries", 2, origin),
            safety_cap=_get_int(sec, "safety_cap", 10, origin),
        )

    for section_name in parser.sections():
        if section_name == "backend" or section_name.startswith("backend."):
            role = section_name.partition(".")[2] or "default"
            config.backends[role] = {
                k: _expand_env(v, f"{origin} [{section_name}]")
                for k, v in parser[section_name].items()
            }
    if parser.has_section("embedder"):
        config.embedder = {k: _expand_env(v, f"{origin} [embedder]")
                           for k, v in parser["embedder"].items()}
    return config


def _load_script(path: str) -> list[ScriptedResponse]:
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"script file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"script file {path} is not valid JSON: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"script file {path} must be a non-empty JSON array")
    script = []
    for entry in entries:
        if isinstance(entry, str):
            script.append(ScriptedResponse(entry))
        elif isinstance(entry, dict) and "response" in entry:
            script.append(ScriptedResponse(entry["response"],
                                           must_contain=entry.get("must_contain")))
        else:
            raise ConfigError(
                f"script file {path}: entries must be strings or "
                "{'response': ..., 'must_contain': ...} objects")
    return script


def build_backend(descriptor: dict, origin: str = "backend") -> Backend:
    """Instantiate a backend from its config section."""
    kind = descriptor.get("kind", "remote")
    if kind == "scripted":
        script = descriptor.get("script")
        if not script:
            raise ConfigError(f"{origin}: scripted backend needs a 'script' file path")
        return make_scripted(_load_script(script))
    if kind == "remote":
        base_url = descriptor.get("base_url")
        model = descriptor.get("model")
        if not base_url or not model:
            raise ConfigError(f"{origin}: remote backend needs base_url and model")
        token = descriptor.get("auth_token")
        if not token and descriptor.get("auth_token_env"):
            token = os.environ.get(descriptor["auth_token_env"])
            if token is None:
                raise ConfigError(
                    f"{origin}: environment variable "
                    f"{descriptor['auth_token_env']!r} is not set")
        return RemoteBackend(
            base_url=base_url, model=model, auth_token=token,
            timeout=float(descriptor.get("timeout", 120)),
            max_retries=int(descriptor.get("max_retries", 5)),
            max_in_flight=int(descriptor.get("max_in_flight", 8)),
        )
    raise ConfigError(f"{origin}: unknown backend kind {kind!r}")


def backend_for(config: AppConfig, role: str) -> Backend:
    """Backend for a role, falling back to the shared default section."""
    descriptor = config.backends.get(role) or config.backends.get("default")
    if descriptor is None:
        raise ConfigError(
            f"no backend configured for role {role!r} (add a [backend] or "
            f"[backend.{role}] section)")
    return build_backend(descriptor, origin=f"backend.{role}")


def build_embedder(config: AppConfig) -> HttpEmbedder:
    if not config.embedder or not config.embedder.get("endpoint"):
        raise ConfigError("reranking needs an [embedder] section with an endpoint")
    sec = config.embedder
    return HttpEmbedder(
        endpoint=sec["endpoint"],
        auth_token=sec.get("auth_token"),
        model=sec.get("model"),
        timeout=float(sec.get("timeout", 60)),
        batch_size=int(sec.get("batch_size", 64)),
    )
