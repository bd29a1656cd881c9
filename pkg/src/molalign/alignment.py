"""Symmetric InfoNCE graph-text alignment and its pretraining loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from molalign import nn
from molalign.chem.graph import MolecularGraph
from molalign.encoders import GraphBatch, ModelConfig, embed_pairs, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlignmentConfig:
    temperature: float = 0.1
    batch_size: int = 32
    epochs: int = 100
    warmup_epochs: int = 10
    base_lr: float = 0.005
    decay: str = "cosine"
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        nn.LrSchedule(self.base_lr, self.warmup_epochs, self.epochs, self.decay)

    def schedule(self) -> nn.LrSchedule:
        return nn.LrSchedule(self.base_lr, self.warmup_epochs, self.epochs, self.decay)


@dataclass(frozen=True)
class LossReport:
    L_g: float
    L_t: float
    L: float
    retrieval_acc_g2t: float
    retrieval_acc_t2g: float


class TrainingError(RuntimeError):
    pass


def _check_pair(hg, ht, tau):
    if hg.shape != ht.shape or len(hg.shape) != 2:
        raise ValueError(f"embedding shape mismatch {hg.shape} vs {ht.shape}")
    if not tau > 0:
        raise ValueError("temperature must be > 0")


def similarity_logits(hg, ht, tau: float) -> nn.Tensor:
    """``(i, j) -> (hg_i . ht_j) / tau``."""
    hg, ht = nn._as_tensor(hg), nn._as_tensor(ht)
    _check_pair(hg, ht, tau)
    return nn.mul(nn.matmul(hg, nn.transpose(ht)), 1.0 / tau)


def _diag_hits(logits: np.ndarray) -> float:
    n = logits.shape[0]
    diag = np.diag(logits)
    others = logits.copy()
    np.fill_diagonal(others, -np.inf)
    # a tie with any off-diagonal entry is a miss
    return float(np.mean(diag > others.max(axis=1))) if n > 1 else 1.0


def retrieval_accuracy(hg, ht) -> tuple[float, float]:
    hg = np.asarray(getattr(hg, "value", hg), dtype=np.float64)
    ht = np.asarray(getattr(ht, "value", ht), dtype=np.float64)
    if hg.shape != ht.shape:
        raise ValueError(f"embedding shape mismatch {hg.shape} vs {ht.shape}")
    return _diag_hits(hg @ ht.T), _diag_hits(ht @ hg.T)


def info_nce_terms(hg, ht, tau: float) -> tuple[nn.Tensor, nn.Tensor, nn.Tensor]:
    """Differentiable ``(L_g, L_t, L)``.

    The text-side logits are computed as ``ht @ hg.T`` rather than by
    transposing, so identical inputs give bit-identical ``L_g`` and ``L_t``.
    """
    hg, ht = nn._as_tensor(hg), nn._as_tensor(ht)
    _check_pair(hg, ht, tau)
    n = hg.shape[0]
    eye = nn.constant(np.eye(n))
    lg = nn.mul(nn.sum(nn.mul(nn.log_softmax_rows(similarity_logits(hg, ht, tau)), eye)), -1.0 / n)
    lt = nn.mul(nn.sum(nn.mul(nn.log_softmax_rows(similarity_logits(ht, hg, tau)), eye)), -1.0 / n)
    return lg, lt, nn.mul(nn.add(lg, lt), 0.5)


def symmetric_info_nce(hg, ht, tau: float) -> LossReport:
    lg, lt, total = info_nce_terms(hg, ht, tau)
    g2t, t2g = retrieval_accuracy(hg, ht)
    # adding 0.0 turns the -0.0 of a single-pair batch into 0.0
    return LossReport(lg.item() + 0.0, lt.item() + 0.0, total.item() + 0.0, g2t, t2g)


@dataclass(frozen=True)
class AlignmentPair:
    graph: MolecularGraph
    tokens: tuple[int, ...]

    @classmethod
    def from_text(cls, graph: MolecularGraph, text: str, vocab_buckets: int) -> "AlignmentPair":
        return cls(graph, tuple(tokenize(text, vocab_buckets)))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_L: float
    val_L: float
    train_acc_g2t: float
    train_acc_t2g: float
    val_acc_g2t: float
    val_acc_t2g: float


HISTORY_FIELDS = list(EpochRecord.__dataclass_fields__)


@dataclass
class PretrainResult:
    snapshot: dict[str, np.ndarray]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_L: float = math.inf
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)


def _as_pairs(pairs, config: ModelConfig) -> list[AlignmentPair]:
    out = []
    for p in pairs:
        if isinstance(p, AlignmentPair):
            out.append(p)
        else:
            graph, text = p
            body = getattr(text, "body", text)
            out.append(AlignmentPair.from_text(graph, body, config.text.vocab_buckets))
    return out


def batch_loss(pairs: Sequence[AlignmentPair], store: nn.ParameterStore, config: ModelConfig, tau: float):
    hg, ht = embed_pairs(GraphBatch.from_graphs([p.graph for p in pairs]), [p.tokens for p in pairs], store, config)
    lg, lt, total = info_nce_terms(hg, ht, tau)
    return total, hg, ht


def evaluate_pairs(
    pairs: Sequence[AlignmentPair], store: nn.ParameterStore, config: ModelConfig, tau: float, batch_size: Optional[int] = None
) -> LossReport:
    """Loss and retrieval accuracy averaged over consecutive batches."""
    pairs = list(pairs)
    size = batch_size or len(pairs)
    reports = []
    for start in range(0, len(pairs) - size + 1, size):
        chunk = pairs[start:start + size]
        hg, ht = embed_pairs([p.graph for p in chunk], [p.tokens for p in chunk], store, config)
        reports.append(symmetric_info_nce(hg, ht, tau))
    if not reports:
        raise ValueError("no complete batch to evaluate")
    return LossReport(*(float(np.mean([getattr(r, f) for r in reports])) for f in LossReport.__dataclass_fields__))


def split_validation(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    if n < 2:
        raise ValueError("pretraining needs at least 2 pairs")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def pretrain(
    pairs,
    config: AlignmentConfig,
    store: nn.ParameterStore,
    model_config: ModelConfig,
    seed: int = 0,
    history_path: str | Path | None = None,
) -> PretrainResult:
    """Contrastive pretraining; returns the snapshot with the lowest validation loss.

    ``pairs`` are :class:`AlignmentPair` or ``(graph, text)`` tuples where the
    text is a string or an MD-Text record. ``store`` is updated in place and
    holds the final-epoch parameters afterwards.
    """
    pairs = _as_pairs(pairs, model_config)
    train_idx, val_idx = split_validation(len(pairs), config.val_fraction, seed)
    train = [pairs[i] for i in train_idx]
    val = [pairs[i] for i in val_idx]
    batch = min(config.batch_size, len(train))
    schedule = config.schedule()
    state = nn.AdamState()
    rng = np.random.default_rng(seed + 1)
    result = PretrainResult(store.snapshot(), train_indices=train_idx, val_indices=val_idx)
    store.zero_grad()

    for epoch in range(config.epochs):
        lr = nn.lr_at(schedule, epoch)
        order = rng.permutation(len(train))
        losses, g2t, t2g = [], [], []
        for b, start in enumerate(range(0, len(train) - batch + 1, batch)):
            chunk = [train[i] for i in order[start:start + batch]]
            try:
                loss, hg, ht = batch_loss(chunk, store, model_config, config.temperature)
                loss.backward()
            except nn.NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            nn.adam_step(store, state, lr)
            acc = retrieval_accuracy(hg, ht)
            losses.append(loss.item())
            g2t.append(acc[0])
            t2g.append(acc[1])
        try:
            val_report = evaluate_pairs(val, store, model_config, config.temperature)
        except nn.NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}, validation: {exc}") from exc
        record = EpochRecord(
            epoch, lr, float(np.mean(losses)), val_report.L,
            float(np.mean(g2t)), float(np.mean(t2g)),
            val_report.retrieval_acc_g2t, val_report.retrieval_acc_t2g,
        )
        result.history.append(record)
        log.info("epoch %d lr %.5f train_L %.4f val_L %.4f", epoch, lr, record.train_L, record.val_L)
        if record.val_L < result.best_val_L:
            result.best_val_L = record.val_L
            result.best_epoch = epoch
            result.snapshot = store.snapshot()

    if history_path is not None:
        write_history(history_path, result.history)
    return result


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow([rec.epoch] + [repr(float(getattr(rec, f))) for f in HISTORY_FIELDS[1:]])
