"""JSON run configuration covering every pipeline stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from molalign.alignment import AlignmentConfig
from molalign.downstream import FinetuneConfig
from molalign.encoders import ModelConfig
from molalign.prompting import DEFAULT_NUM_PROPERTIES, DatasetCard


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    path: str
    name: str
    description: str
    task_type: str
    target_variable: str
    smiles_column: str = "smiles"
    label_columns: tuple[str, ...] = ()

    def card(self) -> DatasetCard:
        return DatasetCard(self.name, self.description, self.task_type, self.target_variable)


@dataclass(frozen=True)
class LLMSection:
    endpoint: Optional[str] = None
    model_id: str = "mistralai/Mistral-7B-Instruct-v0.2"
    api_key_env: str = "LLM_API_KEY"
    use_mock: bool = False
    max_tokens: int = 512
    temperature: float = 0.0
    num_properties: int = DEFAULT_NUM_PROPERTIES
    max_workers: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_tokens < 1 or self.max_workers < 1 or self.num_properties < 1:
            raise ConfigError("llm.max_tokens, llm.max_workers and llm.num_properties must be >= 1")
        if self.temperature < 0:
            raise ConfigError("llm.temperature must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection
    llm: LLMSection = field(default_factory=LLMSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None, mock: bool = False) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out is not None:
            cfg = replace(cfg, output_dir=out)
        if mock:
            cfg = replace(cfg, llm=replace(cfg.llm, use_mock=True))
        return cfg


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {', '.join(sorted(unknown))}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(d: dict, base_dir: Path | None = None) -> RunConfig:
    if "dataset" not in d:
        raise ConfigError("config needs a 'dataset' section")
    dataset = _build(DatasetSection, d["dataset"], "dataset")
    if base_dir is not None and not Path(dataset.path).is_absolute():
        dataset = replace(dataset, path=str((base_dir / dataset.path).resolve()))
    if not Path(dataset.path).exists():
        raise ConfigError(f"dataset file not found: {dataset.path}")
    try:
        dataset.card()
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    model_raw = d.get("model", {})
    if not isinstance(model_raw, dict):
        raise ConfigError("model must be a JSON object")
    try:
        model = ModelConfig.from_dict(model_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None
    top = {k: v for k, v in d.items() if k not in ("dataset", "llm", "model", "alignment", "finetune")}
    if base_dir is not None and "output_dir" in top and not Path(str(top["output_dir"])).is_absolute():
        top["output_dir"] = str((base_dir / str(top["output_dir"])).resolve())
    return RunConfig(
        dataset=dataset,
        llm=_build(LLMSection, d.get("llm", {}), "llm"),
        model=model,
        alignment=_build(AlignmentConfig, d.get("alignment", {}), "alignment"),
        finetune=_build(FinetuneConfig, d.get("finetune", {}), "finetune"),
        **_build(_TopLevel, top, "config").__dict__,
    )


@dataclass(frozen=True)
class _TopLevel:
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9 or min(self.split_ratios) < 0:
            raise ConfigError("split_ratios must be three non-negative numbers summing to 1")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw, path.parent)
