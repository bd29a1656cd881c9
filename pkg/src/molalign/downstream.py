"""Scaffold split, fine-tuning of the graph encoder, and evaluation metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from molalign import nn
from molalign.chem.graph import MolecularGraph, featurize
from molalign.chem.scaffold import murcko_scaffold
from molalign.chem.smiles import SmilesError, parse_smiles
from molalign.encoders import GraphBatch, ModelConfig, encode_graphs

log = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass
class MoleculeDataset:
    """Labelled molecules; ``mask[i, t]`` is False where a label is missing."""

    name: str
    smiles: list[str]
    labels: np.ndarray
    mask: np.ndarray
    task_type: str
    task_names: list[str] = field(default_factory=list)
    _graphs: Optional[list[MolecularGraph]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.task_type not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"task_type must be classification or regression, got {self.task_type!r}")
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.ndim == 1:
            self.labels = self.labels[:, None]
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.labels.shape)
        if self.labels.shape[0] != len(self.smiles):
            raise ValueError("one label row per SMILES required")
        if not self.task_names:
            self.task_names = [f"task{t}" for t in range(self.n_tasks)]
        if len(self.task_names) != self.n_tasks:
            raise ValueError("one task name per label column required")
        if self.n_tasks and not self.mask.any(axis=1).all():
            raise ValueError("every record needs at least one label")
        self.labels = np.where(self.mask, self.labels, 0.0)
        if self.task_type == CLASSIFICATION and not np.isin(self.labels[self.mask], (0.0, 1.0)).all():
            raise ValueError("classification labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.smiles)

    @property
    def n_tasks(self) -> int:
        return int(self.labels.shape[1])

    @property
    def metric(self) -> str:
        if self.task_type == CLASSIFICATION:
            return "roc_auc"
        return "mae" if self.name.lower().startswith("qm7") else "rmse"

    def graphs(self) -> list[MolecularGraph]:
        if self._graphs is None:
            self._graphs = [featurize(parse_smiles(s)) for s in self.smiles]
        return self._graphs


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"train": list(self.train), "valid": list(self.valid), "test": list(self.test),
                "ratios": list(self.ratios), "seed": self.seed}


class SplitError(ValueError):
    pass


def scaffold_groups(smiles: Sequence[str]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(smiles):
        try:
            key = murcko_scaffold(parse_smiles(s))
        except SmilesError as exc:
            raise SplitError(f"record {i}: {exc}") from exc
        groups.setdefault(key, []).append(i)
    return groups


def scaffold_split(
    data: MoleculeDataset | Sequence[str],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Greedy whole-scaffold assignment, largest groups first.

    Each group goes to the first partition whose cumulative size (train,
    then train+valid) is still below its cumulative target, so every
    partition ends within one group of its target. Deterministic: ``seed``
    is recorded but the assignment does not depend on it.
    """
    smiles = data.smiles if isinstance(data, MoleculeDataset) else list(data)
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise SplitError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    groups = scaffold_groups(smiles)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    cutoffs = np.cumsum(ratios) * len(smiles)
    parts: list[list[int]] = [[], [], []]
    for _, members in ordered:
        filled = np.cumsum([len(p) for p in parts])
        slot = next((k for k in range(2) if filled[k] < cutoffs[k]), 2)
        parts[slot].extend(members)
    return SplitAssignment(*(tuple(sorted(p)) for p in parts), ratios=tuple(ratios), seed=seed)


# metrics

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


METRICS = {"roc_auc": roc_auc, "rmse": rmse, "mae": mae}
HIGHER_IS_BETTER = {"roc_auc": True, "rmse": False, "mae": False}


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation across repeated runs."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# fine-tuning

@dataclass(frozen=True)
class FinetuneConfig:
    lr_candidates: tuple[float, ...] = (0.0001, 0.0005)
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    hidden_dim: int = 256

    def __post_init__(self):
        if not self.lr_candidates:
            raise ValueError("lr_candidates must be non-empty")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("max_epochs, batch_size and patience must be >= 1")


class FinetuneError(ValueError):
    pass


def init_head(store: nn.ParameterStore, in_dim: int, hidden: int, n_tasks: int, rng: np.random.Generator) -> None:
    store.add("head.w1", nn.glorot(rng, in_dim, hidden))
    store.add("head.b1", np.zeros(hidden))
    store.add("head.w2", nn.glorot(rng, hidden, n_tasks))
    store.add("head.b2", np.zeros(n_tasks))


def head_forward(h: nn.Tensor, store: nn.ParameterStore) -> nn.Tensor:
    z = nn.relu(nn.add(nn.matmul(h, store.tensor("head.w1")), store.tensor("head.b1")))
    return nn.add(nn.matmul(z, store.tensor("head.w2")), store.tensor("head.b2"))


def predict_raw(graphs: Sequence[MolecularGraph], store: nn.ParameterStore, config: ModelConfig) -> nn.Tensor:
    return head_forward(encode_graphs(GraphBatch.from_graphs(graphs), store, config.gin), store)


def masked_loss(out: nn.Tensor, targets: np.ndarray, mask: np.ndarray, task_type: str) -> nn.Tensor:
    """Mean over unmasked entries of BCE-with-logits or squared error."""
    m = mask.astype(np.float64)
    count = max(float(m.sum()), 1.0)
    if task_type == CLASSIFICATION:
        # softplus(x) - y*x, written as max(x,0) + log(1 + exp(-|x|)) - y*x
        relu_part = nn.relu(out)
        abs_x = nn.add(relu_part, nn.relu(nn.mul(out, -1.0)))
        softplus = nn.add(relu_part, nn.log(nn.add(nn.exp(nn.mul(abs_x, -1.0)), 1.0)))
        per = nn.sub(softplus, nn.mul(out, nn.constant(targets)))
    else:
        diff = nn.sub(out, nn.constant(targets))
        per = nn.mul(diff, diff)
    return nn.mul(nn.sum(nn.mul(per, nn.constant(m))), 1.0 / count)


@dataclass
class FinetunedModel:
    store: nn.ParameterStore
    model_config: ModelConfig
    task_type: str
    label_mean: np.ndarray
    label_std: np.ndarray

    def predict(self, graphs: Sequence[MolecularGraph], batch_size: int = 256) -> np.ndarray:
        """Probabilities for classification, label-scale values for regression."""
        outs = []
        for start in range(0, len(graphs), batch_size):
            outs.append(predict_raw(graphs[start:start + batch_size], self.store, self.model_config).value)
        raw = np.concatenate(outs) if outs else np.zeros((0, len(self.label_mean)))
        if self.task_type == CLASSIFICATION:
            return 1.0 / (1.0 + np.exp(-raw))
        return raw * self.label_std + self.label_mean


@dataclass
class FinetuneResult:
    model: FinetunedModel
    best_lr: float
    val_scores: dict[float, float]
    initial_val_loss: dict[float, float]
    epochs_run: dict[float, int]


@dataclass
class EvalReport:
    metric: str
    per_task: dict[str, float]
    skipped: list[str]

    @property
    def average(self) -> float:
        if not self.per_task:
            return float("nan")
        return float(np.mean(list(self.per_task.values())))


def label_stats(dataset: MoleculeDataset, idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    labels, mask = dataset.labels[list(idx)], dataset.mask[list(idx)]
    if not mask.any(axis=0).all():
        missing = [dataset.task_names[t] for t in np.flatnonzero(~mask.any(axis=0))]
        raise FinetuneError(f"tasks with no training labels: {', '.join(missing)}")
    if dataset.task_type == CLASSIFICATION:
        return np.zeros(dataset.n_tasks), np.ones(dataset.n_tasks)
    counts = mask.sum(axis=0)
    mean = (labels * mask).sum(axis=0) / counts
    var = (((labels - mean) * mask) ** 2).sum(axis=0) / counts
    std = np.sqrt(var)
    return mean, np.where(std > 0, std, 1.0)


def evaluate(model: FinetunedModel, dataset: MoleculeDataset, indices: Sequence[int], metric: Optional[str] = None) -> EvalReport:
    """Per-task metric on ``indices`` plus the unweighted task average.

    Tasks without a computable metric (no labels, or a single class for
    ROC-AUC) are skipped and listed in ``skipped``.
    """
    metric = metric or dataset.metric
    idx = list(indices)
    graphs = dataset.graphs()
    preds = model.predict([graphs[i] for i in idx]) if idx else np.zeros((0, dataset.n_tasks))
    labels, mask = dataset.labels[idx], dataset.mask[idx]
    per_task, skipped = {}, []
    for t, name in enumerate(dataset.task_names):
        m = mask[:, t]
        y, p = labels[m, t], preds[m, t]
        if y.size == 0 or (metric == "roc_auc" and len(np.unique(y)) < 2):
            skipped.append(name)
            continue
        per_task[name] = METRICS[metric](p, y)
    return EvalReport(metric, per_task, skipped)


def _validation_score(model, dataset, valid, metric, loss_fn) -> float:
    """Higher is better. Falls back to negative loss if no task is scorable."""
    report = evaluate(model, dataset, valid, metric)
    if report.per_task:
        avg = report.average
        return avg if HIGHER_IS_BETTER[metric] else -avg
    return -loss_fn()


def _dataset_loss(store, model_config, dataset, idx, mean, std, batch_size=256) -> float:
    graphs = dataset.graphs()
    total, count = 0.0, 0.0
    for start in range(0, len(idx), batch_size):
        chunk = idx[start:start + batch_size]
        out = predict_raw([graphs[i] for i in chunk], store, model_config)
        targets = (dataset.labels[chunk] - mean) / std
        mask = dataset.mask[chunk]
        n = float(mask.sum())
        total += masked_loss(out, targets, mask, dataset.task_type).item() * max(n, 1.0)
        count += n
    return total / max(count, 1.0)


def _train_one(encoder: nn.ParameterStore, model_config, dataset, split, config, lr, seed, mean, std):
    rng = np.random.default_rng(seed)
    store = encoder.copy()
    for name in list(store):
        if not name.startswith("gin."):
            store.set_trainable(name, False)
    init_head(store, model_config.gin.hidden_dim, config.hidden_dim, dataset.n_tasks, rng)
    model = FinetunedModel(store, model_config, dataset.task_type, mean, std)
    train, valid = list(split.train), list(split.valid)
    metric = dataset.metric
    graphs = dataset.graphs()
    batch = min(config.batch_size, len(train))
    state = nn.AdamState()

    def val_loss():
        return _dataset_loss(store, model_config, dataset, valid, mean, std)

    initial = val_loss() if valid else math.nan
    best_score = _validation_score(model, dataset, valid, metric, val_loss) if valid else -math.inf
    best = store.snapshot()
    stale = 0
    epochs = 0
    for epoch in range(config.max_epochs):
        epochs = epoch + 1
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch):
            chunk = [train[i] for i in order[start:start + batch]]
            out = predict_raw([graphs[i] for i in chunk], store, model_config)
            targets = (dataset.labels[chunk] - mean) / std
            loss = masked_loss(out, targets, dataset.mask[chunk], dataset.task_type)
            loss.backward()
            nn.adam_step(store, state, lr)
        if not valid:
            best = store.snapshot()
            continue
        score = _validation_score(model, dataset, valid, metric, val_loss)
        if score > best_score:
            best_score, best, stale = score, store.snapshot(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    store.load_snapshot(best)
    return model, best_score, initial, epochs


def finetune(
    encoder: nn.ParameterStore,
    model_config: ModelConfig,
    dataset: MoleculeDataset,
    split: SplitAssignment,
    config: FinetuneConfig = FinetuneConfig(),
    seed: int = 0,
) -> FinetuneResult:
    """Train encoder and a fresh MLP head once per lr candidate; keep the best.

    ``encoder`` is not modified. Non-GIN entries (text encoder, projections)
    are carried along frozen.
    """
    if dataset.n_tasks == 0:
        raise FinetuneError("dataset has no label columns")
    if not split.train:
        raise FinetuneError("empty training split")
    mean, std = label_stats(dataset, split.train)
    best = None
    scores, initial, epochs = {}, {}, {}
    for lr in config.lr_candidates:
        model, score, init_loss, n_epochs = _train_one(encoder, model_config, dataset, split, config, lr, seed, mean, std)
        scores[lr], initial[lr], epochs[lr] = score, init_loss, n_epochs
        log.info("lr %g: validation score %.4f after %d epochs", lr, score, n_epochs)
        if best is None or score > scores[best[0]]:
            best = (lr, model)
    return FinetuneResult(best[1], best[0], scores, initial, epochs)


METRICS_FIELDS = ("dataset", "task", "metric", "value", "seed")


def metrics_rows(dataset_name: str, report: EvalReport, seed: int) -> list[tuple]:
    rows = [(dataset_name, task, report.metric, value, seed) for task, value in report.per_task.items()]
    rows.append((dataset_name, "average", report.metric, report.average, seed))
    return rows


def write_metrics_csv(path: str | Path, rows: Sequence[tuple]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_FIELDS)
        for dataset, task, metric, value, seed in rows:
            writer.writerow([dataset, task, metric, repr(float(value)), seed])
