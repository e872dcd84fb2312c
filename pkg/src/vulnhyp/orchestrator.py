"""Per-sample pipeline: dispatch, agents, aggregation, planning, validation.

Dispatch maps the function to a set of semantic cues (regex table or the
dispatcher agent) and each cue to the specialized agent that reviews it. The
baseline trio always runs. Everything after the agents is sequential per
sample; samples run on a bounded worker pool.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import yaml

from . import agents as ag
from .aggregate import aggregate
from .context import render_context
from .hypothesis import PLANNER_MODES, plan
from .llmgate import ConfigInvalid, Gateway, GatewayRequest, GatewayResponse
from .model import (
    AgentReport,
    AggregatedFinding,
    CodeSample,
    ContextBundle,
    DetectionReport,
    Evidence,
    Hypothesis,
    NumberedFunction,
    Verdict,
    normalize_cwe,
)
from .preprocess import number_lines
from .schema import validate_data
from .structured import OutputParseError, parse_structured
from .validate import VALIDATION_MODES, prune_hypothesis, verify_path

log = logging.getLogger(__name__)

CUE_VOCABULARY = (
    "memory_op",
    "file_io",
    "concurrency_primitive",
    "crypto_api",
    "privilege_logic",
    "format_string",
    "dynamic_exec",
    "error_handling_gap",
    "sql_construction",
    "path_construction",
)

CUE_TO_AGENT = {
    "memory_op": ag.MEMORY_LAYOUT,
    "file_io": ag.FILE_PERMISSION,
    "concurrency_primitive": ag.CONCURRENCY,
    "crypto_api": ag.CRYPTO_CONFIG,
    "privilege_logic": ag.AUTH_FLOW,
    "format_string": ag.FORMAT_STRING,
    "dynamic_exec": ag.CODE_INJECTION,
    "error_handling_gap": ag.ERROR_HANDLING,
    "sql_construction": ag.CODE_INJECTION,
    "path_construction": ag.FILE_PERMISSION,
}

CueSet = frozenset
AgentSet = frozenset


class PipelineError(RuntimeError):
    pass


class DispatcherOutputInvalid(PipelineError):
    pass


class AggregatorOutputInvalid(PipelineError):
    pass


class UnknownCue(ValueError):
    pass


class StageError(PipelineError):
    """A sample aborted in ``stage``; ``cause`` is the underlying error."""

    def __init__(self, stage: str, sample_id: str, cause: BaseException):
        super().__init__(f"[{stage}] sample {sample_id}: {cause}")
        self.stage = stage
        self.sample_id = sample_id
        self.cause = cause


@dataclass(frozen=True)
class CueTable:
    version: int
    patterns: Mapping[str, tuple[re.Pattern, ...]]

    def match(self, text: str) -> CueSet:
        return frozenset(cue for cue, pats in self.patterns.items() if any(p.search(text) for p in pats))


def parse_cue_table(data: Mapping[str, Any]) -> CueTable:
    nocase = set(data.get("ignore_case", ()))
    unknown = (set(data["cues"]) | nocase) - set(CUE_VOCABULARY)
    if unknown:
        raise UnknownCue(f"cue table names unknown cues: {sorted(unknown)}")
    patterns = {
        cue: tuple(re.compile(p, re.IGNORECASE if cue in nocase else 0) for p in pats)
        for cue, pats in data["cues"].items()
    }
    return CueTable(int(data.get("version", 1)), patterns)


@lru_cache(maxsize=1)
def default_cue_table() -> CueTable:
    text = resources.files("vulnhyp").joinpath("data/cues.json").read_text(encoding="utf-8")
    return parse_cue_table(json.loads(text))


def dispatcher_prompt(fn: NumberedFunction) -> tuple[str, str]:
    agent_id, template = ag.stage_prompt("dispatcher")
    return agent_id, fill_cues(template, fn)


def fill_cues(template: str, fn: NumberedFunction) -> str:
    return ag.fill(template, cue_vocabulary=", ".join(CUE_VOCABULARY), function_code=fn.render())


def extract_cues(
    fn: NumberedFunction,
    mode: str = "lexical",
    gateway: Optional[Gateway] = None,
    table: Optional[CueTable] = None,
    max_tokens: int = 4096,
) -> CueSet:
    if mode == "lexical":
        return (table or default_cue_table()).match("\n".join(text for _, text in fn.lines))
    if mode != "llm":
        raise ConfigInvalid(f"unknown dispatcher mode {mode!r}")
    if gateway is None:
        raise ConfigInvalid("llm dispatch needs a gateway")
    agent_id, prompt = dispatcher_prompt(fn)
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=agent_id, sample_id=fn.sample_id, max_tokens=max_tokens))
    try:
        data = parse_structured(resp.text, "dispatcher_output")
    except OutputParseError as exc:
        raise DispatcherOutputInvalid(f"dispatcher output: {exc}") from None
    unknown = sorted(set(data["cues"]) - set(CUE_VOCABULARY))
    if unknown:
        raise DispatcherOutputInvalid(f"dispatcher named cues outside the vocabulary: {unknown}")
    return frozenset(data["cues"])


def route(cues: Iterable[str]) -> AgentSet:
    cues = frozenset(cues)
    unknown = cues - set(CUE_VOCABULARY)
    if unknown:
        raise UnknownCue(f"unknown cues: {sorted(unknown)}")
    return ag.BASELINE_TRIO | {CUE_TO_AGENT[c] for c in cues}


@dataclass(frozen=True)
class PipelineConfig:
    dispatcher_mode: str = "lexical"
    workers: int = 8
    agents_enabled: Optional[tuple[str, ...]] = None
    aggregate_mode: str = "mechanical"
    planner_mode: str = "llm"
    pruner_mode: str = "llm"
    validator_mode: str = "llm"
    max_paths: int = 64
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        checks = [
            ("dispatcher.mode", self.dispatcher_mode, ("lexical", "llm")),
            ("aggregate.mode", self.aggregate_mode, ("mechanical", "llm")),
            ("planner.mode", self.planner_mode, PLANNER_MODES),
            ("pruner.mode", self.pruner_mode, VALIDATION_MODES),
            ("validator.mode", self.validator_mode, VALIDATION_MODES),
        ]
        for key, value, allowed in checks:
            if value not in allowed:
                raise ConfigInvalid(f"{key} must be one of {list(allowed)}, got {value!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigInvalid(f"pipeline.workers must be a positive integer, got {self.workers!r}")
        if self.agents_enabled is not None:
            enabled = tuple(sorted({ag.ALIASES.get(a, a) for a in self.agents_enabled}))
            unknown = sorted(set(enabled) - set(ag.ALL_AGENTS))
            if unknown:
                raise ConfigInvalid(f"agents.enabled names unknown agents: {unknown}")
            object.__setattr__(self, "agents_enabled", enabled)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dispatcher": {"mode": self.dispatcher_mode},
            "pipeline": {"workers": self.workers},
            "agents": {"enabled": None if self.agents_enabled is None else list(self.agents_enabled)},
            "aggregate": {"mode": self.aggregate_mode},
            "planner": {"mode": self.planner_mode, "max_paths": self.max_paths},
            "pruner": {"mode": self.pruner_mode},
            "validator": {"mode": self.validator_mode},
            "gateway": {"max_tokens": self.max_tokens},
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        result = validate_data(dict(data), "pipeline_config")
        if not result.ok:
            raise ConfigInvalid("invalid config: " + "; ".join(map(str, result.violations)))

        def sect(name: str) -> Mapping[str, Any]:
            return data.get(name) or {}

        enabled = sect("agents").get("enabled")
        return cls(
            dispatcher_mode=sect("dispatcher").get("mode", "lexical"),
            workers=sect("pipeline").get("workers", 8),
            agents_enabled=None if enabled is None else tuple(enabled),
            aggregate_mode=sect("aggregate").get("mode", "mechanical"),
            planner_mode=sect("planner").get("mode", "llm"),
            pruner_mode=sect("pruner").get("mode", "llm"),
            validator_mode=sect("validator").get("mode", "llm"),
            max_paths=sect("planner").get("max_paths", 64),
            max_tokens=sect("gateway").get("max_tokens", 4096),
        )

    def replace(self, **changes: Any) -> "PipelineConfig":
        return PipelineConfig(**{**asdict(self), **{k: v for k, v in changes.items() if v is not None}})


def load_config(path: Path | str) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config {path} is not YAML/JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigInvalid(f"config {path} must hold a mapping")
    return PipelineConfig.from_mapping(data)


class CountingGateway:
    """Per-sample view of a gateway that tallies calls and output tokens."""

    def __init__(self, inner: Gateway):
        self.inner = inner
        self.calls = 0
        self.output_tokens = 0
        self._lock = threading.Lock()

    def complete(self, req: GatewayRequest) -> GatewayResponse:
        # attempts are counted, so a failed agent still accounts for its call
        with self._lock:
            self.calls += 1
        resp = self.inner.complete(req)
        with self._lock:
            self.output_tokens += resp.output_tokens
        return resp


def aggregate_llm(reports: Sequence[AgentReport], fn: NumberedFunction, gateway: CountingGateway, max_tokens: int = 4096) -> list[AggregatedFinding]:
    agent_id, template = ag.stage_prompt("aggregator")
    payload = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True, ensure_ascii=False)
    prompt = ag.fill(template, reports=payload, function_code=fn.render())
    resp = gateway.complete(GatewayRequest(prompt=prompt, agent_id=agent_id, sample_id=fn.sample_id, max_tokens=max_tokens))
    try:
        data = parse_structured(resp.text, "aggregator_output")
    except OutputParseError as exc:
        raise AggregatorOutputInvalid(f"aggregator output: {exc}") from None
    reporting = {r.source_agent for r in reports}
    items = []
    for i, f in enumerate(data["findings"]):
        start, end = f["span"]
        if start > end or end > len(fn):
            raise AggregatorOutputInvalid(f"findings[{i}]: span {start}..{end} outside 1..{len(fn)}")
        stray = sorted(set(f["source_agents"]) - reporting)
        if stray:
            raise AggregatorOutputInvalid(f"findings[{i}]: agents {stray} reported nothing")
        try:
            cwe = normalize_cwe(f["cwe"])
        except ValueError as exc:
            raise AggregatorOutputInvalid(f"findings[{i}]: {exc}") from None
        evidence = tuple(dict.fromkeys(Evidence(e["line"], e["snippet"], e.get("func")) for e in f["evidence"]))
        items.append(AggregatedFinding(f"F{i + 1}", cwe, (start, end), f["description"], evidence, tuple(f["source_agents"])))
    # canonical order and ids; overlapping same-CWE leftovers are merged as usual
    return aggregate(items)


@dataclass
class SampleOutcome:
    sample_id: str
    report: Optional[DetectionReport] = None
    error: Optional[StageError] = None

    @property
    def ok(self) -> bool:
        return self.report is not None


ContextArg = Union[None, ContextBundle, Mapping[str, ContextBundle]]


class Pipeline:
    def __init__(
        self,
        gateway: Gateway,
        config: Optional[PipelineConfig] = None,
        registry: Optional[ag.AgentRegistry] = None,
        cue_table: Optional[CueTable] = None,
    ):
        self.gateway = gateway
        self.config = config or PipelineConfig()
        self.registry = registry or ag.default_registry()
        self.cue_table = cue_table

    def select_agents(self, cues: CueSet) -> AgentSet:
        chosen = route(cues)
        if self.config.agents_enabled is not None:
            allowed = set(self.config.agents_enabled)
            chosen = frozenset(a for a in chosen if a in ag.BASELINE_TRIO or a in allowed)
        return chosen

    def _run_agents(
        self, chosen: AgentSet, fn: NumberedFunction, ctx: Optional[ContextBundle], gw: CountingGateway
    ) -> tuple[list[AgentReport], list[str]]:
        context_text = render_context(ctx) if ctx is not None else ""
        order = sorted(chosen)

        def one(agent_id: str) -> list[AgentReport]:
            return ag.run_agent(agent_id, fn, ctx, gw, self.registry, context_text, self.config.max_tokens).reports

        results: dict[str, list[AgentReport] | BaseException] = {}
        with ThreadPoolExecutor(max_workers=max(1, len(order)), thread_name_prefix="agent") as pool:
            futures = {a: pool.submit(one, a) for a in order}
            for a, fut in futures.items():
                try:
                    results[a] = fut.result()
                except Exception as exc:  # noqa: BLE001 - policy decides per agent
                    results[a] = exc
        reports: list[AgentReport] = []
        skipped: list[str] = []
        for a in order:
            res = results[a]
            if isinstance(res, BaseException):
                if a in ag.BASELINE_TRIO:
                    raise StageError("agents", fn.sample_id, res)
                log.warning("sample %s: skipping %s after failure: %s", fn.sample_id, a, res)
                skipped.append(a)
            else:
                reports.extend(res)
        return reports, skipped

    def run(self, sample: CodeSample, ctx: Optional[ContextBundle] = None) -> DetectionReport:
        cfg = self.config
        gw = CountingGateway(self.gateway)
        sid = sample.id

        def stage(name: str, fn_, *args, **kw):
            try:
                return fn_(*args, **kw)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, sid, exc) from exc

        fn = stage("preprocess", number_lines, sample)
        cues = stage("dispatch", extract_cues, fn, cfg.dispatcher_mode, gw, self.cue_table, cfg.max_tokens)
        chosen = self.select_agents(cues)
        reports, skipped = self._run_agents(chosen, fn, ctx, gw)
        if cfg.aggregate_mode == "llm":
            findings = stage("aggregate", aggregate_llm, reports, fn, gw, cfg.max_tokens)
        else:
            findings = stage("aggregate", aggregate, reports)

        hypotheses: list[Hypothesis] = [
            stage("plan", plan, f, fn, ctx, cfg.planner_mode, gw, cfg.max_tokens) for f in findings
        ]
        judged: list[Hypothesis] = []
        verdicts: list[Verdict] = []
        for h in hypotheses:
            res = stage("prune", prune_hypothesis, h, fn, ctx, cfg.pruner_mode, gw, cfg.max_tokens)
            judged.append(res.judged)
            if res.rejection is not None:
                verdicts.append(res.rejection)
                continue
            verdicts.append(stage("verify", verify_path, res.pruned, fn, ctx, cfg.validator_mode, gw, cfg.max_tokens))

        ran = sorted(set(chosen) - set(skipped))
        return DetectionReport.assemble(
            sid,
            verdicts,
            hypotheses=tuple(judged),
            call_count=gw.calls,
            output_tokens=gw.output_tokens,
            findings=tuple(findings),
            activated_agents=tuple(ran),
            skipped_agents=tuple(skipped),
        )

    def run_many(self, samples: Sequence[CodeSample], contexts: ContextArg = None) -> list[SampleOutcome]:
        """Run samples on the worker pool; outcomes come back in input order."""

        def ctx_for(sample: CodeSample) -> Optional[ContextBundle]:
            if contexts is None or isinstance(contexts, ContextBundle):
                return contexts
            return contexts.get(sample.id)

        def one(sample: CodeSample) -> SampleOutcome:
            try:
                return SampleOutcome(sample.id, report=self.run(sample, ctx_for(sample)))
            except StageError as exc:
                log.error("%s", exc)
                return SampleOutcome(sample.id, error=exc)

        with ThreadPoolExecutor(max_workers=self.config.workers, thread_name_prefix="sample") as pool:
            return list(pool.map(one, samples))


def run_pipeline(
    sample: CodeSample,
    ctx: Optional[ContextBundle] = None,
    config: Optional[PipelineConfig] = None,
    *,
    gateway: Gateway,
    registry: Optional[ag.AgentRegistry] = None,
) -> DetectionReport:
    return Pipeline(gateway, config, registry).run(sample, ctx)


def expected_calls(report: DetectionReport, config: PipelineConfig) -> int:
    """Model-call count implied by a report's contents and the stage modes.

    One call per agent that was started (skipped agents included), one for the
    dispatcher and one for the aggregator when those stages are model-backed,
    one per planned finding, one per condition judged, and one per hypothesis
    that reached path verification.
    """
    n = len(report.activated_agents) + len(report.skipped_agents)
    n += config.dispatcher_mode == "llm"
    n += config.aggregate_mode == "llm"
    if config.planner_mode == "llm":
        n += len(report.findings)
    if config.pruner_mode == "llm":
        n += sum(len(h.assumptions) for h in report.hypotheses)
    if config.validator_mode == "llm":
        n += sum(1 for v in report.verdicts if v.stage == "path")
    return n
