"""Command-line entry point: describe, pretrain, finetune, eval, calibrate, split."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from molalign import nn
from molalign.alignment import AlignmentPair, TrainingError, pretrain
from molalign.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from molalign.chem.smiles import SmilesError, parse_smiles
from molalign.config import ConfigError, RunConfig, load_config
from molalign.data import IngestError, ingest_csv
from molalign.downstream import (
    FinetunedModel,
    FinetuneError,
    SplitError,
    evaluate,
    finetune,
    metrics_rows,
    scaffold_split,
    write_metrics_csv,
)
from molalign.dsm.descriptors import REGISTRY, DescriptorError, MetricId, compute_report, format_calibrated
from molalign.encoders import ModelConfig, init_params, tokenize
from molalign.llm import CachedGateway, LiveBackend, LLMError, MockBackend
from molalign.prompting import DescriptionPipeline, MDTextStore, PipelineError, StoreCorruptionError

log = logging.getLogger("molalign")


class IncompleteStoreError(ValueError):
    pass


# (exception types, category, exit code); first match wins
ERROR_CATEGORIES = (
    ((ConfigError,), "config", 2),
    ((IngestError, SplitError, SmilesError, StoreCorruptionError, DescriptorError, IncompleteStoreError), "data", 3),
    ((PipelineError, LLMError), "llm", 4),
    ((CheckpointError,), "checkpoint", 5),
    ((TrainingError, FinetuneError, nn.NonFiniteError), "training", 6),
)


class Paths:
    def __init__(self, cfg: RunConfig):
        self.root = Path(cfg.output_dir)
        self.mdtext_dir = self.root / "mdtext"
        self.llm_cache = self.root / "llm_cache.jsonl"
        self.pretrain_ckpt = self.root / "pretrain" / "checkpoint.bin"
        self.history = self.root / "pretrain" / "history.csv"
        self.finetuned_ckpt = self.root / "finetune" / "model.bin"
        self.finetune_metrics = self.root / "finetune" / "metrics.csv"
        self.eval_metrics = self.root / "eval" / "metrics.csv"
        self.split = self.root / "split.json"


def _dataset(cfg: RunConfig, labelled: bool):
    ds = cfg.dataset
    result = ingest_csv(ds.path, ds.smiles_column, ds.label_columns if labelled else (), ds.name, ds.task_type)
    if result.dropped or result.unlabeled:
        log.warning("%s: kept %d rows, dropped %d unparseable and %d unlabelled",
                    ds.name, result.kept, result.dropped, result.unlabeled)
    return result.dataset


def _gateway(cfg: RunConfig, paths: Paths):
    if cfg.llm.use_mock:
        backend = MockBackend()
    else:
        if not cfg.llm.endpoint:
            raise ConfigError("llm.endpoint is required unless llm.use_mock or --mock-llm is set")
        backend = LiveBackend(cfg.llm.endpoint, api_key_env=cfg.llm.api_key_env, timeout=cfg.llm.timeout)
    return CachedGateway(backend, paths.llm_cache)


def cmd_describe(cfg: RunConfig) -> int:
    paths = Paths(cfg)
    dataset = _dataset(cfg, labelled=False)
    store = MDTextStore(paths.mdtext_dir, cfg.dataset.name)
    existing = store.load()
    missing = list(dict.fromkeys(s for s in dataset.smiles if s not in existing))
    paths.mdtext_dir.mkdir(parents=True, exist_ok=True)
    if not missing:
        store.path.touch()
        print(f"describe: all {len(existing)} MD-Texts present in {store.path}")
        return 0
    gateway = _gateway(cfg, paths)
    pipeline = DescriptionPipeline(
        cfg.dataset.card(),
        gateway,
        num_properties=cfg.llm.num_properties,
        request_kw={"model_id": cfg.llm.model_id, "max_tokens": cfg.llm.max_tokens,
                    "temperature": cfg.llm.temperature, "seed": cfg.seed},
        max_workers=cfg.llm.max_workers,
    )
    texts = pipeline.describe_many(missing)
    store.append(texts)
    print(f"describe: wrote {len(texts)} MD-Texts to {store.path} ({gateway.backend_calls} LLM calls)")
    return 0


def _pairs(cfg: RunConfig, paths: Paths) -> list[AlignmentPair]:
    dataset = _dataset(cfg, labelled=False)
    texts = MDTextStore(paths.mdtext_dir, cfg.dataset.name).load()
    missing = [s for s in dict.fromkeys(dataset.smiles) if s not in texts]
    if missing:
        shown = ", ".join(missing[:5]) + (" ..." if len(missing) > 5 else "")
        raise IncompleteStoreError(f"MD-Text store lacks {len(missing)} molecules (run describe first): {shown}")
    buckets = cfg.model.text.vocab_buckets
    graphs = dataset.graphs()
    return [AlignmentPair(g, tuple(tokenize(texts[s].body, buckets))) for g, s in zip(graphs, dataset.smiles)]


def cmd_pretrain(cfg: RunConfig) -> int:
    paths = Paths(cfg)
    pairs = _pairs(cfg, paths)
    store = init_params(cfg.model, cfg.seed)
    result = pretrain(pairs, cfg.alignment, store, cfg.model, seed=cfg.seed, history_path=paths.history)
    ckpt = Checkpoint.from_snapshot(
        result.snapshot, store, cfg.model.to_dict(), cfg.model.digest(),
        {"stage": "pretrain", "best_epoch": result.best_epoch, "dataset": cfg.dataset.name},
    )
    save_checkpoint(ckpt, paths.pretrain_ckpt)
    print(f"pretrain: best val_L {result.best_val_L:.4f} at epoch {result.best_epoch}; saved {paths.pretrain_ckpt}")
    return 0


def _encoder_store(cfg: RunConfig, checkpoint: Optional[str], random_init: bool, paths: Paths) -> nn.ParameterStore:
    if random_init:
        return init_params(cfg.model, cfg.seed)
    ckpt = load_checkpoint(checkpoint or paths.pretrain_ckpt, cfg.model.digest())
    return ckpt.to_store()


def _finetuned_model(ckpt: Checkpoint, model_config: ModelConfig) -> FinetunedModel:
    meta = ckpt.metadata
    return FinetunedModel(
        ckpt.to_store(), model_config, meta["task_type"],
        np.array(meta["label_mean"], dtype=np.float64), np.array(meta["label_std"], dtype=np.float64),
    )


def cmd_finetune(cfg: RunConfig, checkpoint: Optional[str] = None, random_init: bool = False) -> int:
    paths = Paths(cfg)
    dataset = _dataset(cfg, labelled=True)
    split = scaffold_split(dataset, cfg.split_ratios, cfg.seed)
    _write_split(split, paths.split)
    encoder = _encoder_store(cfg, checkpoint, random_init, paths)
    result = finetune(encoder, cfg.model, dataset, split, cfg.finetune, seed=cfg.seed)
    model = result.model
    meta = {
        "stage": "finetune",
        "dataset": dataset.name,
        "task_type": dataset.task_type,
        "task_names": dataset.task_names,
        "label_mean": [float(v) for v in model.label_mean],
        "label_std": [float(v) for v in model.label_std],
        "best_lr": result.best_lr,
    }
    save_checkpoint(Checkpoint.from_store(model.store, cfg.model.to_dict(), cfg.model.digest(), meta), paths.finetuned_ckpt)
    report = evaluate(model, dataset, split.test)
    write_metrics_csv(paths.finetune_metrics, metrics_rows(dataset.name, report, cfg.seed))
    print(f"finetune: best lr {result.best_lr}; test {report.metric} {report.average:.4f}; wrote {paths.finetune_metrics}")
    if report.skipped:
        print(f"finetune: skipped tasks without a computable metric: {', '.join(report.skipped)}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: Optional[str] = None) -> int:
    paths = Paths(cfg)
    dataset = _dataset(cfg, labelled=True)
    ckpt = load_checkpoint(checkpoint or paths.finetuned_ckpt, cfg.model.digest())
    if ckpt.metadata.get("stage") != "finetune":
        raise CheckpointError("eval needs a fine-tuned checkpoint (with a prediction head)")
    split = scaffold_split(dataset, cfg.split_ratios, cfg.seed)
    report = evaluate(_finetuned_model(ckpt, cfg.model), dataset, split.test)
    write_metrics_csv(paths.eval_metrics, metrics_rows(dataset.name, report, cfg.seed))
    print(f"eval: test {report.metric} {report.average:.4f}; wrote {paths.eval_metrics}")
    return 0


def _write_split(split, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=1) + "\n")


def cmd_split(cfg: RunConfig) -> int:
    paths = Paths(cfg)
    dataset = _dataset(cfg, labelled=False)
    split = scaffold_split(dataset, cfg.split_ratios, cfg.seed)
    _write_split(split, paths.split)
    print(f"split: train {len(split.train)} / valid {len(split.valid)} / test {len(split.test)}; wrote {paths.split}")
    return 0


def cmd_calibrate(smiles: str, metrics: Sequence[str]) -> int:
    mol = parse_smiles(smiles)
    try:
        requested = [MetricId(m) for m in metrics] if metrics else list(REGISTRY)
    except ValueError as exc:
        raise DescriptorError(None, f"{exc}; known: {', '.join(m.value for m in MetricId)}") from None
    print(format_calibrated(compute_report(mol, requested, smiles)).text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--mock-llm", action="store_true", help="use the offline deterministic LLM mock")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="molalign", description="LLM-described molecular graph-text alignment.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("describe", parents=[common], help="generate MD-Texts for every molecule")
    sub.add_parser("pretrain", parents=[common], help="contrastive graph-text pretraining")
    ft = sub.add_parser("finetune", parents=[common], help="scaffold split, fine-tune and test")
    ft.add_argument("--checkpoint", help="pretrained checkpoint (default: <out>/pretrain/checkpoint.bin)")
    ft.add_argument("--random-init", action="store_true", help="fine-tune from random weights")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a fine-tuned checkpoint on the test split")
    ev.add_argument("--checkpoint", help="fine-tuned checkpoint (default: <out>/finetune/model.bin)")
    sub.add_parser("split", parents=[common], help="write scaffold split indices")
    cal = sub.add_parser("calibrate", parents=[common], help="descriptor report for one SMILES")
    cal.add_argument("smiles")
    cal.add_argument("--metrics", nargs="*", default=[], help="metric ids (default: all)")
    return parser


def _run(args) -> int:
    if args.command == "calibrate":
        return cmd_calibrate(args.smiles, args.metrics)
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config).with_overrides(args.seed, args.out, args.mock_llm)
    if args.command == "describe":
        return cmd_describe(cfg)
    if args.command == "pretrain":
        return cmd_pretrain(cfg)
    if args.command == "finetune":
        return cmd_finetune(cfg, args.checkpoint, args.random_init)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint)
    return cmd_split(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except Exception as exc:
        for types, category, code in ERROR_CATEGORIES:
            if isinstance(exc, types):
                print(f"error[{category}]: {exc}", file=sys.stderr)
                return code
        print(f"error[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
