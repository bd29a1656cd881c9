"""Two-stage prompt orchestration.

Stage 1 asks the LLM, once per dataset, which molecular properties matter
for the dataset's target (the MD-Template). The descriptor calculator then
computes whichever of those properties it can, and Stage 2 asks for a
per-molecule description (MD-Text) with those values supplied as
authoritative facts.
"""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from molalign.chem.smiles import Molecule, SmilesError, parse_smiles
from molalign.dsm.descriptors import (
    REGISTRY,
    CalibratedKnowledge,
    MetricId,
    compute_report,
    format_calibrated,
)
from molalign.llm import (
    STAGE1_MARKER,
    STAGE2_MARKER,
    Backend,
    CachedGateway,
    LLMError,
    PromptRequest,
    ResponseCache,
)

SYSTEM_TEXT = (
    "You are an expert medicinal chemist who explains how molecular structure "
    "relates to measured properties."
)
DEFAULT_NUM_PROPERTIES = 5
MAX_TEMPLATE_PROPERTIES = 10
AUTHORITATIVE_NOTE = (
    "Treat these values as authoritative: they were computed exactly by a "
    "cheminformatics toolkit. Quote them as given and do not recompute them."
)

_TEMPLATE_LINE = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*[:：]\s*(.+)$")
_MARKUP = re.compile(r"[*_`#]+")


class TemplateParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class PipelineError(RuntimeError):
    def __init__(self, stage: int, message: str, index: Optional[int] = None):
        where = f"stage {stage}" + (f", molecule {index}" if index is not None else "")
        super().__init__(f"[{where}] {message}")
        self.stage = stage
        self.index = index


@dataclass(frozen=True)
class DatasetCard:
    name: str
    description: str
    task_type: str
    target_variable: str

    def __post_init__(self):
        for field_name in ("name", "description", "task_type", "target_variable"):
            if not str(getattr(self, field_name)).strip():
                raise ValueError(f"DatasetCard.{field_name} must be non-empty")
        if self.task_type not in ("classification", "regression"):
            raise ValueError(f"task_type must be classification or regression, got {self.task_type!r}")


@dataclass(frozen=True)
class MDTemplate:
    dataset_name: str
    properties: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not 1 <= len(self.properties) <= MAX_TEMPLATE_PROPERTIES:
            raise ValueError(f"template needs 1-{MAX_TEMPLATE_PROPERTIES} properties, got {len(self.properties)}")
        names = [p.lower() for p, _ in self.properties]
        if len(set(names)) != len(names):
            raise ValueError("template property names must be unique (case-insensitive)")

    @property
    def names(self) -> list[str]:
        return [p for p, _ in self.properties]

    def digest(self) -> str:
        payload = json.dumps(
            {"dataset": self.dataset_name, "properties": [list(p) for p in self.properties]},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MDText:
    smiles: str
    body: str
    template_hash: str
    source: str

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError("MD-Text body must be non-empty")

    def to_json(self) -> str:
        return json.dumps(
            {"smiles": self.smiles, "body": self.body, "template_hash": self.template_hash, "source": self.source},
            ensure_ascii=False,
        )


def build_stage1_prompt(card: DatasetCard, num_properties: int = DEFAULT_NUM_PROPERTIES, **request_kw) -> PromptRequest:
    user = "\n".join(
        [
            STAGE1_MARKER,
            "## Dataset name",
            card.name,
            "## Description",
            card.description,
            "## Task type",
            card.task_type,
            "## Target variable",
            card.target_variable,
            "## Instruction",
            f"List up to {num_properties} molecular properties that are most relevant for predicting "
            "the target variable of this dataset, and explain briefly why each one matters.",
            'Answer only with a numbered list, one property per line, formatted as "N. <Property>: <relevance>".',
        ]
    )
    return PromptRequest(user_text=user, system_text=SYSTEM_TEXT, **request_kw)


def _clean(text: str) -> str:
    return _MARKUP.sub("", text).strip()


def parse_md_template(completion: str, card: DatasetCard) -> MDTemplate:
    if not completion or not completion.strip():
        raise TemplateParseError("empty completion", completion or "")
    seen: set[str] = set()
    props: list[tuple[str, str]] = []
    for line in completion.splitlines():
        m = _TEMPLATE_LINE.match(line)
        if not m:
            continue
        name, why = _clean(m.group(1)), _clean(m.group(2))
        if not name or name.lower() in seen:
            continue
        seen.add(name.lower())
        props.append((name, why))
        if len(props) == MAX_TEMPLATE_PROPERTIES:
            break
    if not props:
        raise TemplateParseError("no numbered 'N. Property: relevance' lines found", completion)
    return MDTemplate(card.name, tuple(props))


def _norm(text: str) -> str:
    return " " + re.sub(r"[^a-z0-9]+", " ", text.lower()).strip() + " "


def match_calibratable(template: MDTemplate, registry: Iterable[MetricId]) -> list[MetricId]:
    """Metrics whose aliases name a template property, in template order."""
    registry = [MetricId(m) for m in registry]
    out: list[MetricId] = []
    for name in template.names:
        key = _norm(name)
        for metric in registry:
            if metric in out:
                continue
            if any(_norm(alias) in key for alias in REGISTRY[metric].aliases):
                out.append(metric)
    return out


def build_stage2_prompt(
    template: MDTemplate, calibrated: CalibratedKnowledge, smiles: str, **request_kw
) -> PromptRequest:
    parse_smiles(smiles)
    lines = [STAGE2_MARKER, "## Properties"]
    lines += [f"{i}. {name}: {why}" for i, (name, why) in enumerate(template.properties, start=1)]
    if calibrated.lines:
        lines.append("## Calibrated knowledge")
        lines += list(calibrated.lines)
        lines.append(AUTHORITATIVE_NOTE)
    lines += [
        "## SMILES",
        smiles,
        "## Instruction",
        "Describe each listed property for this molecule in one or two sentences per property, "
        "stating any calibrated value exactly as given above.",
    ]
    return PromptRequest(user_text="\n".join(lines), system_text=SYSTEM_TEXT, **request_kw)


DEFAULT_REGISTRY: tuple[MetricId, ...] = tuple(MetricId)


class DescriptionPipeline:
    """MD-Text generation for one dataset.

    The MD-Template is requested once and reused for every molecule.
    """

    def __init__(
        self,
        card: DatasetCard,
        gateway: Backend,
        registry: Sequence[MetricId] = DEFAULT_REGISTRY,
        *,
        num_properties: int = DEFAULT_NUM_PROPERTIES,
        request_kw: Optional[dict] = None,
        max_workers: int = 4,
    ):
        self.card = card
        self.gateway = gateway
        self.registry = tuple(registry)
        self.num_properties = num_properties
        self.request_kw = dict(request_kw or {})
        self.max_workers = max_workers
        self._template: Optional[MDTemplate] = None
        self._metrics: Optional[list[MetricId]] = None

    def template(self) -> MDTemplate:
        if self._template is None:
            request = build_stage1_prompt(self.card, self.num_properties, **self.request_kw)
            try:
                result = self.gateway.complete(request)
                self._template = parse_md_template(result.text, self.card)
            except (LLMError, TemplateParseError) as exc:
                raise PipelineError(1, str(exc)) from exc
            self._metrics = match_calibratable(self._template, self.registry)
        return self._template

    @property
    def metrics(self) -> list[MetricId]:
        self.template()
        return list(self._metrics or [])

    def calibrate(self, mol: Molecule, smiles: str) -> CalibratedKnowledge:
        if not self.metrics:
            return CalibratedKnowledge()
        return format_calibrated(compute_report(mol, self.metrics, smiles))

    def describe(self, smiles: str, mol: Optional[Molecule] = None, index: Optional[int] = None) -> MDText:
        template = self.template()
        try:
            mol = mol if mol is not None else parse_smiles(smiles)
            calibrated = self.calibrate(mol, smiles)
            request = build_stage2_prompt(template, calibrated, smiles, **self.request_kw)
            result = self.gateway.complete(request)
        except (LLMError, SmilesError, ValueError) as exc:
            raise PipelineError(2, str(exc), index) from exc
        return MDText(smiles, result.text, template.digest(), result.source)

    def describe_many(self, smiles_list: Sequence[str]) -> list[MDText]:
        """Describe molecules concurrently; results keep input order."""
        self.template()
        if self.max_workers <= 1 or len(smiles_list) <= 1:
            return [self.describe(s, index=i) for i, s in enumerate(smiles_list)]
        with ThreadPoolExecutor(self.max_workers) as pool:
            futures = [pool.submit(self.describe, s, None, i) for i, s in enumerate(smiles_list)]
            return [f.result() for f in futures]


def generate_md_text(
    card: DatasetCard,
    molecule: Molecule | str,
    gateway: Backend,
    registry: Sequence[MetricId] = DEFAULT_REGISTRY,
    cache: ResponseCache | str | Path | None = None,
) -> MDText:
    """One-shot Stage 1 + calibration + Stage 2 for a single molecule.

    With ``cache`` set, both stages go through the replay cache, so the
    dataset template is only requested from the backend once.
    """
    if cache is not None:
        gateway = CachedGateway(gateway, cache)
    pipeline = DescriptionPipeline(card, gateway, registry)
    if isinstance(molecule, str):
        return pipeline.describe(molecule)
    return pipeline.describe(molecule.smiles_source, molecule)


class MDTextStore:
    """``<dir>/<dataset>.jsonl`` holding one MD-Text per SMILES."""

    def __init__(self, directory: str | Path, dataset: str):
        self.path = Path(directory) / f"{dataset}.jsonl"

    def load(self) -> dict[str, MDText]:
        out: dict[str, MDText] = {}
        if not self.path.exists():
            return out
        with open(self.path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    text = MDText(d["smiles"], d["body"], d["template_hash"], d["source"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise StoreCorruptionError(f"{self.path}:{line_no}: corrupt MD-Text entry ({exc})") from None
                out.setdefault(text.smiles, text)
        return out

    def append(self, texts: Iterable[MDText]) -> int:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        n = 0
        with open(self.path, "a", encoding="utf-8") as fh:
            for text in texts:
                fh.write(text.to_json() + "\n")
                n += 1
        return n


class StoreCorruptionError(ValueError):
    pass
