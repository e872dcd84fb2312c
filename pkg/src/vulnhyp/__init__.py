"""Function-level vulnerability detection by hypothesis validation."""

from .aggregate import aggregate
from .context import extract_lightweight, load_context, save_context
from .eval import ConfusionCounts, PairOutcome, cwe_score, load_pairs, metrics, pair_metrics
from .graph import dominates
from .hypothesis import enumerate_paths, plan
from .llmgate import Gateway, GatewayRequest, GatewayResponse, build_gateway
from .model import (
    AgentReport,
    AggregatedFinding,
    Assumption,
    CodeSample,
    ContextBundle,
    DetectionReport,
    Hypothesis,
    NumberedFunction,
    TriggerPath,
    Verdict,
)
from .orchestrator import Pipeline, PipelineConfig, extract_cues, route, run_pipeline
from .preprocess import number_lines, strip_numbers
from .schema import validate_schema
from .validate import prune_assumption, prune_hypothesis, verify_path

__version__ = "0.1.0"

__all__ = [
    "AgentReport",
    "AggregatedFinding",
    "Assumption",
    "CodeSample",
    "ConfusionCounts",
    "ContextBundle",
    "DetectionReport",
    "Gateway",
    "GatewayRequest",
    "GatewayResponse",
    "Hypothesis",
    "NumberedFunction",
    "PairOutcome",
    "Pipeline",
    "PipelineConfig",
    "TriggerPath",
    "Verdict",
    "aggregate",
    "build_gateway",
    "cwe_score",
    "dominates",
    "enumerate_paths",
    "extract_cues",
    "extract_lightweight",
    "load_context",
    "load_pairs",
    "metrics",
    "number_lines",
    "pair_metrics",
    "plan",
    "prune_assumption",
    "prune_hypothesis",
    "route",
    "run_pipeline",
    "save_context",
    "strip_numbers",
    "validate_schema",
    "verify_path",
]
