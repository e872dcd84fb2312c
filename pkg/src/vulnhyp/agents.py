"""Registry of specialized detection agents and parsing of their outputs.

Agent prompts live in ``prompts/agents/<AgentId>.md``: YAML front matter
(``id``, ``role``, ``cwe_focus``, ``trigger_hints``) followed by the template
body. Templates fill ``{function_code}`` and the optional ``{context}`` slot by
literal substitution, so JSON braces in the output contract need no escaping.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .llmgate import Gateway, GatewayRequest, GatewayResponse
from .model import AgentReport, ContextBundle, Evidence, NumberedFunction, normalize_cwe
from .structured import OutputParseError, parse_structured

log = logging.getLogger(__name__)

STATIC_ANALYZER = "StaticAnalyzerAgent"
BEHAVIOR_ANALYZER = "BehaviorAnalyzerAgent"
MEMORY_LAYOUT = "MemoryLayoutAgent"
FORMAT_STRING = "FormatStringAgent"
FILE_PERMISSION = "FilePermissionAgent"
AUTH_FLOW = "AuthFlowAgent"
CRYPTO_CONFIG = "CryptoConfigAgent"
CONCURRENCY = "ConcurrencyAnalyzerAgent"
ERROR_HANDLING = "ErrorHandlingAgent"
CODE_INJECTION = "CodeInjectionAgent"

BASELINE_TRIO = frozenset({STATIC_ANALYZER, BEHAVIOR_ANALYZER, MEMORY_LAYOUT})
ALL_AGENTS = (
    STATIC_ANALYZER,
    BEHAVIOR_ANALYZER,
    MEMORY_LAYOUT,
    FORMAT_STRING,
    FILE_PERMISSION,
    AUTH_FLOW,
    CRYPTO_CONFIG,
    CONCURRENCY,
    ERROR_HANDLING,
    CODE_INJECTION,
)
# the dispatcher formula names the first baseline agent without its prefix
ALIASES = {"AnalyzerAgent": STATIC_ANALYZER}

FUNCTION_SLOT = "{function_code}"
CONTEXT_SLOT = "{context}"


class RegistryError(ValueError):
    pass


class DuplicateAgent(RegistryError):
    pass


class MissingSlot(RegistryError):
    pass


class UnknownAgent(RegistryError, KeyError):
    pass


class SpanOutOfRange(OutputParseError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    id: str
    role_text: str
    prompt_template: str
    cwe_focus: tuple[str, ...] = ()
    trigger_hints: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwe_focus", tuple(normalize_cwe(c) for c in self.cwe_focus))
        object.__setattr__(self, "trigger_hints", tuple(self.trigger_hints))

    def render(self, fn: NumberedFunction, context: str = "") -> str:
        return fill(
            self.prompt_template,
            function_code=fn.render(),
            context=context or "(no program context available)",
        )


_SLOT_RE = re.compile(r"\{([a-z_]+)\}")


def fill(template: str, **slots: str) -> str:
    """Single-pass slot substitution; unknown ``{names}`` and slot values are left untouched."""
    return _SLOT_RE.sub(lambda m: slots.get(m.group(1), m.group(0)), template)


def parse_front_matter(text: str) -> tuple[dict, str]:
    if not text.startswith("---"):
        return {}, text
    _, _, rest = text.partition("\n")
    meta, sep, body = rest.partition("\n---\n")
    if not sep:
        raise RegistryError("front matter is not terminated by '---'")
    return yaml.safe_load(meta) or {}, body


def load_spec(path: Path | str) -> AgentSpec:
    path = Path(path)
    meta, body = parse_front_matter(path.read_text(encoding="utf-8"))
    body = body.replace("{role}", meta.get("role", "").strip())
    body = body.replace("{cwe_focus}", ", ".join(meta.get("cwe_focus", [])))
    body = body.replace("{trigger_hints}", "\n".join(f"- {h}" for h in meta.get("trigger_hints", [])))
    return AgentSpec(
        id=meta.get("id", path.stem),
        role_text=meta.get("role", "").strip(),
        prompt_template=body,
        cwe_focus=tuple(meta.get("cwe_focus", ())),
        trigger_hints=tuple(meta.get("trigger_hints", ())),
    )


class AgentRegistry:
    def __init__(self, specs: Iterable[AgentSpec] = ()):
        self._specs: dict[str, AgentSpec] = {}
        for spec in specs:
            self.register(spec)

    def register(self, spec: AgentSpec) -> AgentSpec:
        if FUNCTION_SLOT not in spec.prompt_template:
            raise MissingSlot(f"agent {spec.id!r}: template lacks the {FUNCTION_SLOT} slot")
        if spec.id in self._specs:
            raise DuplicateAgent(f"agent {spec.id!r} is already registered")
        self._specs[spec.id] = spec
        return spec

    def get(self, agent_id: str) -> AgentSpec:
        agent_id = ALIASES.get(agent_id, agent_id)
        try:
            return self._specs[agent_id]
        except KeyError:
            raise UnknownAgent(f"no agent registered as {agent_id!r}") from None

    def __contains__(self, agent_id: object) -> bool:
        return ALIASES.get(agent_id, agent_id) in self._specs  # type: ignore[arg-type]

    @property
    def ids(self) -> list[str]:
        return sorted(self._specs)

    def load_dir(self, directory: Path | str) -> "AgentRegistry":
        for path in sorted(Path(directory).glob("*.md")):
            self.register(load_spec(path))
        return self


def prompts_dir() -> Path:
    return Path(str(resources.files("vulnhyp").joinpath("prompts")))


def default_registry() -> AgentRegistry:
    return AgentRegistry().load_dir(prompts_dir() / "agents")


@lru_cache(maxsize=None)
def stage_prompt(name: str) -> tuple[str, str]:
    """``(agent_id, template)`` for a pipeline stage prompt (dispatcher, planner, ...)."""
    meta, body = parse_front_matter((prompts_dir() / "stages" / f"{name}.md").read_text(encoding="utf-8"))
    return meta["id"], body


def parse_agent_output(raw: str, source_agent: str, fn_len: int, sample_id: str = "") -> list[AgentReport]:
    """Reports from one agent response.

    Raises ``OutputParseError`` when the response is not schema-conformant
    after one repair pass, ``SpanOutOfRange`` when a span or evidence line
    falls outside ``1..fn_len``.
    """
    if not raw or not raw.strip():
        raise OutputParseError("empty agent output", raw=raw)
    data = parse_structured(raw, "agent_output")
    items = data["findings"] if isinstance(data, dict) else data
    reports = []
    for i, item in enumerate(items):
        start, end = item["span"]
        if start > end:
            raise OutputParseError(f"finding {i}: span {start}..{end} is reversed", raw=raw)
        if end > fn_len:
            raise SpanOutOfRange(f"finding {i}: span {start}..{end} exceeds {fn_len} lines", raw=raw)
        evidence = []
        for e in item["evidence"]:
            if e["line"] > fn_len:
                raise SpanOutOfRange(f"finding {i}: evidence line {e['line']} exceeds {fn_len} lines", raw=raw)
            evidence.append(Evidence(e["line"], e["snippet"], e.get("func")))
        try:
            cwe = normalize_cwe(item["cwe"])
        except ValueError as exc:
            raise OutputParseError(f"finding {i}: {exc}", raw=raw) from None
        reports.append(
            AgentReport(
                source_agent=source_agent,
                cwe=cwe,
                span=(start, end),
                description=item["description"],
                evidence=tuple(dict.fromkeys(evidence)),
                trigger_hint=item.get("trigger_hint"),
                sample_id=sample_id,
            )
        )
    return reports


@dataclass
class AgentRun:
    agent_id: str
    reports: list[AgentReport] = field(default_factory=list)
    response: Optional[GatewayResponse] = None


def run_agent(
    agent_id: str,
    fn: NumberedFunction,
    ctx: Optional[ContextBundle],
    gateway: Gateway,
    registry: Optional[AgentRegistry] = None,
    context_text: Optional[str] = None,
    max_tokens: int = 4096,
) -> AgentRun:
    """Render, call once, parse. Gateway errors and parse errors propagate."""
    from .context import render_context

    spec = (registry or default_registry()).get(agent_id)
    if context_text is None:
        context_text = render_context(ctx) if ctx is not None else ""
    prompt = spec.render(fn, context_text)
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=spec.id, sample_id=fn.sample_id, max_tokens=max_tokens))
    run = AgentRun(spec.id, response=resp)
    run.reports = parse_agent_output(resp.text, spec.id, len(fn), fn.sample_id)
    return run
