"""Scripted end-to-end scenarios shipped with the package.

Each scenario directory holds ``sample.json`` (a code sample),
``script.json`` (mock responses), optionally ``context.json`` and
``config.json``, and the golden ``expected.report``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .context import load_context
from .llmgate import Gateway, MockBackend, ResponseCache, ScriptEntry, load_script
from .model import CodeSample, ContextBundle, DetectionReport, dumps
from .orchestrator import Pipeline, PipelineConfig

GOLDEN = "expected.report"


def scenario_root() -> Path:
    return Path(str(resources.files("vulnhyp").joinpath("scenario_pack")))


def list_scenarios(root: Optional[Path] = None) -> list[str]:
    root = root or scenario_root()
    return sorted(p.name for p in root.iterdir() if (p / "sample.json").is_file())


@dataclass(frozen=True)
class Scenario:
    name: str
    path: Path
    sample: CodeSample
    script: tuple[ScriptEntry, ...]
    context: Optional[ContextBundle]
    config: PipelineConfig

    @property
    def golden(self) -> Path:
        return self.path / GOLDEN

    def gateway(self, cache: Optional[ResponseCache] = None) -> Gateway:
        return Gateway(MockBackend(self.script), cache)

    def run(self, gateway: Optional[Gateway] = None) -> DetectionReport:
        return Pipeline(gateway or self.gateway(), self.config).run(self.sample, self.context)

    def render(self, gateway: Optional[Gateway] = None) -> str:
        return dumps(self.run(gateway))


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = Path(name_or_path)
    if not (path / "sample.json").is_file():
        path = scenario_root() / str(name_or_path)
    sample = CodeSample.from_dict(json.loads((path / "sample.json").read_text(encoding="utf-8")))
    ctx = load_context(path / "context.json") if (path / "context.json").is_file() else None
    cfg_path = path / "config.json"
    cfg = PipelineConfig.from_mapping(json.loads(cfg_path.read_text(encoding="utf-8"))) if cfg_path.is_file() else PipelineConfig()
    return Scenario(path.name, path, sample, tuple(load_script(path / "script.json")), ctx, cfg)
