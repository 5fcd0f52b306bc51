"""Run configuration: a single YAML file plus CLI flag overrides.

Precedence is flags > file > defaults. Relative paths in the file resolve
against the file's own directory, so a config can ship next to its data.
Every run writes its resolved config back out as a snapshot; re-running
from the snapshot plus the replay archive reproduces the results exactly.
The config hash included in result records is a SHA-256 over the canonical
JSON of the serialized config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .amr import StructureKind
from .backend import BACKEND_MODES
from .dataset import DATASET_FORMATS, DEMO_MODE_DIFFERENT, DEMO_MODE_SIMILAR, SAMPLING_RNG
from .pipeline import StepId
from .strategies import Aggregator, AggregatorKind, Strategy, TieBreak


class ConfigError(ValueError):
    pass


_STRUCTURE_BY_NAME = {k.value: k for k in StructureKind}
_STEP_BY_NAME = {s.value: s for s in StepId}


@dataclass(frozen=True)
class DatasetConfig:
    path: str = ""
    format: str = "native_jsonl"


@dataclass(frozen=True)
class SplitConfig:
    # The studied datasets do not name their held-out domains, so this is
    # mandatory config with no default.
    test_domains: tuple[str, ...] = ()


@dataclass(frozen=True)
class SampleConfig:
    n: int = 200
    seeds: tuple[int, ...] = (13, 42, 77)
    rng: str = SAMPLING_RNG


@dataclass(frozen=True)
class FewshotConfig:
    k: int = 0
    mode: str = DEMO_MODE_DIFFERENT


@dataclass(frozen=True)
class StrategyConfig:
    name: str = "cof_cot"
    aggregator: str = ""  # empty means the strategy's default
    tie_break: str = "lowest_index"
    n: int = 10
    temperature: float = 0.7
    complex_fraction: float = 0.5


@dataclass(frozen=True)
class PlanConfig:
    order: str = "cof"  # cof | foc | random
    drop: tuple[str, ...] = ()
    condition_domain: bool = True
    structure: str = "amr"
    llm_step5: bool = False


@dataclass(frozen=True)
class BackendConfig:
    mode: str = "replay"
    model: str = "gpt-3.5-turbo"
    base_url: str | None = None
    max_tokens: int = 512
    archive: str = "replay.jsonl"
    mock_rules: str | None = None
    max_retries: int = 5
    requests_per_second: float = 2.0
    max_concurrent_requests: int = 4
    timeout: float = 60.0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    figures: bool = True


@dataclass(frozen=True)
class RunSection:
    parallelism: int = 1
    vocab_filter: str = "none"  # none | domain


_SECTIONS = {
    "dataset": DatasetConfig,
    "split": SplitConfig,
    "sample": SampleConfig,
    "fewshot": FewshotConfig,
    "strategy": StrategyConfig,
    "plan": PlanConfig,
    "backend": BackendConfig,
    "output": OutputConfig,
    "run": RunSection,
}

_TUPLE_FIELDS = {
    ("split", "test_domains"),
    ("sample", "seeds"),
    ("plan", "drop"),
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    fewshot: FewshotConfig = field(default_factory=FewshotConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    run: RunSection = field(default_factory=RunSection)
    templates_dir: str | None = None
    base_dir: str = "."  # directory paths resolve against; not serialized

    def to_dict(self) -> dict:
        out: dict = {}
        for name, cls in _SECTIONS.items():
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(cls)}
        out["templates_dir"] = self.templates_dir
        return out

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "RunConfig":
        unknown = set(data) - set(_SECTIONS) - {"templates_dir"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs: dict = {}
        for name, section_cls in _SECTIONS.items():
            section_data = data.get(name, {}) or {}
            if not isinstance(section_data, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            bad = set(section_data) - allowed
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            coerced = {}
            for key, value in section_data.items():
                if (name, key) in _TUPLE_FIELDS:
                    if not isinstance(value, (list, tuple)):
                        raise ConfigError(f"{name}.{key} must be a list")
                    value = tuple(value)
                coerced[key] = value
            kwargs[name] = section_cls(**coerced)
        kwargs["templates_dir"] = data.get("templates_dir")
        kwargs["base_dir"] = str(base_dir)
        return cls(**kwargs)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_absolute_paths(self) -> "RunConfig":
        """Copy with every path field resolved; snapshots use this so they
        reproduce the run from any directory."""
        updates: dict = {
            "dataset": replace(self.dataset, path=str(self.resolve(self.dataset.path))),
            "backend": replace(
                self.backend,
                archive=str(self.resolve(self.backend.archive)),
                mock_rules=str(self.resolve(self.backend.mock_rules)) if self.backend.mock_rules else None,
            ),
            "output": replace(self.output, dir=str(self.resolve(self.output.dir))),
        }
        if self.templates_dir is not None:
            updates["templates_dir"] = str(self.resolve(self.templates_dir))
        return replace(self, **updates)

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    # Typed views over the string-valued knobs.

    def strategy_enum(self) -> Strategy:
        try:
            return Strategy(self.strategy.name)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy.name!r}") from None

    def aggregator_obj(self) -> Aggregator:
        from .strategies import default_aggregator

        try:
            tie = TieBreak(self.strategy.tie_break)
        except ValueError:
            raise ConfigError(f"unknown tie_break {self.strategy.tie_break!r}") from None
        if not self.strategy.aggregator:
            base = default_aggregator(self.strategy_enum())
            return replace(base, tie_break=tie, complex_fraction=self.strategy.complex_fraction)
        try:
            kind = AggregatorKind(self.strategy.aggregator)
        except ValueError:
            raise ConfigError(f"unknown aggregator {self.strategy.aggregator!r}") from None
        return Aggregator(kind=kind, tie_break=tie, complex_fraction=self.strategy.complex_fraction)

    def structure_kind(self) -> StructureKind:
        name = self.plan.structure
        if name not in _STRUCTURE_BY_NAME:
            raise ConfigError(f"unknown structure kind {name!r}")
        return _STRUCTURE_BY_NAME[name]

    def drop_steps(self) -> frozenset[StepId]:
        steps = set()
        for name in self.plan.drop:
            if name not in _STEP_BY_NAME:
                raise ConfigError(f"unknown step to drop: {name!r}")
            steps.add(_STEP_BY_NAME[name])
        return frozenset(steps)

    def validate(self) -> None:
        """Reject configs that cannot possibly run."""
        if not self.dataset.path:
            raise ConfigError("dataset.path is required")
        if self.dataset.format not in DATASET_FORMATS:
            raise ConfigError(f"dataset.format must be one of {DATASET_FORMATS}")
        if not self.resolve(self.dataset.path).exists():
            raise ConfigError(f"dataset file not found: {self.resolve(self.dataset.path)}")
        if not self.split.test_domains:
            raise ConfigError("split.test_domains is required (the harness has no default)")
        if self.sample.n < 1:
            raise ConfigError("sample.n must be >= 1")
        if not self.sample.seeds:
            raise ConfigError("sample.seeds must be non-empty")
        if len(set(self.sample.seeds)) != len(self.sample.seeds):
            raise ConfigError("sample.seeds must be distinct")
        if self.sample.rng != SAMPLING_RNG:
            raise ConfigError(f"sample.rng must be {SAMPLING_RNG!r} (the only supported generator)")
        if self.fewshot.k < 0:
            raise ConfigError("fewshot.k must be >= 0")
        if self.fewshot.mode not in (DEMO_MODE_DIFFERENT, DEMO_MODE_SIMILAR):
            raise ConfigError(f"fewshot.mode must be {DEMO_MODE_DIFFERENT!r} or {DEMO_MODE_SIMILAR!r}")
        if self.strategy.n < 1:
            raise ConfigError("strategy.n must be >= 1")
        if self.strategy.temperature < 0:
            raise ConfigError("strategy.temperature must be >= 0")
        if self.plan.order not in ("cof", "foc", "random"):
            raise ConfigError("plan.order must be cof, foc, or random")
        if self.backend.mode not in BACKEND_MODES:
            raise ConfigError(f"backend.mode must be one of {BACKEND_MODES}")
        if self.backend.mode == "replay" and not self.resolve(self.backend.archive).exists():
            raise ConfigError(f"replay archive not found: {self.resolve(self.backend.archive)}")
        if self.run.parallelism < 1:
            raise ConfigError("run.parallelism must be >= 1")
        if self.run.vocab_filter not in ("none", "domain"):
            raise ConfigError("run.vocab_filter must be none or domain")
        strategy = self.strategy_enum()
        if strategy is Strategy.PLAN_AND_SOLVE and self.fewshot.k > 0:
            raise ConfigError("plan_and_solve is zero-shot only; set fewshot.k to 0")
        self.aggregator_obj()
        self.structure_kind()
        self.drop_steps()
        if self.templates_dir is not None and not self.resolve(self.templates_dir).is_dir():
            raise ConfigError(f"templates_dir not found: {self.resolve(self.templates_dir)}")


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _apply_overrides(data: dict, overrides: dict[str, object]) -> dict:
    """Dotted-key overrides, e.g. {"strategy.name": "direct"}."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." not in dotted:
            data[dotted] = value
            continue
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigError(f"cannot override {dotted}: section is not a mapping")
        data[section][key] = value
    return data


def load_config(path: str | Path, overrides: dict[str, object] | None = None) -> RunConfig:
    """Parse a YAML config file and apply flag overrides on top."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    if overrides:
        raw = _apply_overrides(raw, overrides)
    return RunConfig.from_dict(raw, base_dir=path.parent)


def save_config_snapshot(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
