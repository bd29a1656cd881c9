import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molalign import nn
from molalign.downstream import (
    FinetuneConfig,
    FinetuneError,
    MoleculeDataset,
    SplitAssignment,
    SplitError,
    evaluate,
    finetune,
    mae,
    masked_loss,
    mean_std,
    metrics_rows,
    rmse,
    roc_auc,
    scaffold_groups,
    scaffold_split,
    write_metrics_csv,
)
from molalign.encoders import GinConfig, ModelConfig, ProjectionConfig, TextEncoderConfig, init_params
from molalign.synthetic import random_smiles
from oracles import auc_by_pair_counting

SMALL = ModelConfig(
    GinConfig(layers=2, hidden_dim=16),
    TextEncoderConfig(vocab_buckets=256, embed_dim=8, output_dim=16),
    ProjectionConfig(joint_dim=8),
)
FAST = FinetuneConfig(lr_candidates=(0.005,), max_epochs=40, batch_size=8, patience=40, hidden_dim=16)

RINGS = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCOC1", "c1ccsc1", "C1CC1", "C1CCNCC1", "c1ccoc1", "C1CCCC1", "c1cnccn1"]


def separable_dataset():
    """Label 1 iff the molecule contains nitrogen."""
    smiles = [f"{r}{tail}" for r in ("c1ccccc1", "C1CCCCC1", "C1CC1") for tail in ("CC", "CO", "CN", "CCN", "OC", "NC", "CCC", "CCCN")]
    labels = [1.0 if "N" in s else 0.0 for s in smiles]
    return MoleculeDataset("toy", smiles, labels, np.ones(len(smiles), bool), "classification")


def test_split_singletons():
    split = scaffold_split(RINGS)
    assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)


def test_split_single_scaffold_all_train():
    split = scaffold_split(["c1ccccc1C", "c1ccccc1O", "c1ccccc1N", "c1ccccc1CC"])
    assert split.train == (0, 1, 2, 3) and not split.valid and not split.test


def test_split_reports_bad_record():
    with pytest.raises(SplitError, match="record 1"):
        scaffold_split(["CC", "C1CC"])
    with pytest.raises(SplitError):
        scaffold_split(["CC"], ratios=(0.5, 0.2, 0.2))


def holdout_split(n):
    valid = tuple(range(0, n, 4))
    return SplitAssignment(tuple(i for i in range(n) if i % 4), valid, ())


def corpus(n, seed):
    rng = np.random.default_rng(seed)
    return [random_smiles(rng) for _ in range(n)]


@settings(max_examples=60)
@given(st.integers(10, 120), st.integers(0, 10**6))
def test_split_properties(n, seed):
    smiles = corpus(n, seed)
    split = scaffold_split(smiles)
    parts = [split.train, split.valid, split.test]
    assert sorted(itertools.chain(*parts)) == list(range(n))
    groups = scaffold_groups(smiles)
    where = {i: k for k, part in enumerate(parts) for i in part}
    for members in groups.values():
        assert len({where[i] for i in members}) == 1
    largest = max(len(m) for m in groups.values())
    for part, ratio in zip(parts, (0.8, 0.1, 0.1)):
        assert abs(len(part) - ratio * n) <= largest
    assert scaffold_split(smiles) == split


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert roc_auc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    assert roc_auc([0.1, 0.9], [1, 0]) == 0.0
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.integers(2, 20), st.integers(0, 2**32 - 1), st.booleans())
def test_auc_matches_pair_counting(n, seed, coarse):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, 4, size=n).astype(float) if coarse else rng.normal(size=n)
    assert roc_auc(scores, labels) == auc_by_pair_counting(scores.tolist(), labels.tolist())


@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_auc_invariant_to_monotone_transform(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[:2] = (0, 1)
    scores = rng.integers(-3, 4, size=n).astype(float)
    assert roc_auc(np.exp(scores) * 3 + 1, labels) == roc_auc(scores, labels)


def test_regression_metric_examples():
    truth = np.array([1.0, -2.0, 0.5, 3.0, 4.0])
    assert rmse(truth, truth) == 0.0 and mae(truth, truth) == 0.0
    assert rmse(truth + 1, truth) == 1.0 and mae(truth + 1, truth) == 1.0
    pred = np.array([1.5, -1.0, 0.0, 2.0, 4.0])
    assert abs(rmse(pred, truth) - ((0.25 + 1 + 0.25 + 1 + 0) / 5) ** 0.5) < 1e-12
    assert abs(mae(pred, truth) - (0.5 + 1 + 0.5 + 1 + 0) / 5) < 1e-12
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mae([], [])


def test_mean_std_three_seeds():
    mean, std = mean_std([0.7, 0.8, 0.9])
    assert mean == pytest.approx(0.8)
    assert std == pytest.approx(((0.01 + 0 + 0.01) / 3) ** 0.5)


def test_dataset_metric_selection_and_validation():
    ones = np.ones(2, bool)
    assert MoleculeDataset("qm7", ["C", "CC"], [1.0, 2.0], ones, "regression").metric == "mae"
    assert MoleculeDataset("esol", ["C", "CC"], [1.0, 2.0], ones, "regression").metric == "rmse"
    with pytest.raises(ValueError):
        MoleculeDataset("x", ["C", "CC"], [0.0, 2.0], ones, "classification")
    with pytest.raises(ValueError):
        MoleculeDataset("x", ["C", "CC"], [[0.0], [1.0]], [[True], [False]], "classification")


class FixedModel:
    def __init__(self, preds):
        self.preds = np.asarray(preds, dtype=float)

    def predict(self, graphs):
        return self.preds[: len(graphs)]


def test_evaluate_average_and_skips():
    ds = MoleculeDataset(
        "t", ["C", "CC", "CCC", "CCCC"],
        [[1, 1, 1], [0, 0, 1], [1, 1, 1], [0, 1, 0]],
        [[True, True, True], [True, True, True], [True, True, True], [True, True, False]],
        "classification", ["a", "b", "c"],
    )
    preds = [[0.9, 0.5, 0.1], [0.1, 0.5, 0.2], [0.8, 0.5, 0.3], [0.2, 0.5, 0.4]]
    report = evaluate(FixedModel(preds), ds, [0, 1, 2, 3])
    assert report.per_task == {"a": 1.0, "b": 0.5} and report.skipped == ["c"]
    assert report.average == 0.75


def test_metrics_csv(tmp_path):
    ds = MoleculeDataset("t", ["C", "CC"], [1.0, 0.0], np.ones(2, bool), "classification")
    report = evaluate(FixedModel([[0.9], [0.1]]), ds, [0, 1])
    path = tmp_path / "m.csv"
    write_metrics_csv(path, metrics_rows("t", report, 3))
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows == [["dataset", "task", "metric", "value", "seed"], ["t", "task0", "roc_auc", "1.0", "3"], ["t", "average", "roc_auc", "1.0", "3"]]


@given(st.integers(0, 2**32 - 1), st.sampled_from(["classification", "regression"]))
def test_masked_entries_never_affect_loss(seed, task_type):
    rng = np.random.default_rng(seed)
    out = nn.constant(rng.normal(size=(5, 3)))
    targets = rng.integers(0, 2, size=(5, 3)).astype(float)
    mask = rng.random((5, 3)) < 0.6
    mask[0, 0] = True
    perturbed = np.where(mask, targets, rng.normal(size=(5, 3)) * 100)
    assert masked_loss(out, targets, mask, task_type).item() == masked_loss(out, perturbed, mask, task_type).item()


def test_bce_matches_direct_formula():
    x = np.array([[-3.0, 0.0, 2.5]])
    y = np.array([[1.0, 0.0, 1.0]])
    p = 1 / (1 + np.exp(-x))
    expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert masked_loss(nn.constant(x), y, np.ones_like(y, bool), "classification").item() == pytest.approx(expected, abs=1e-12)


def test_separable_task_reaches_perfect_train_auc():
    ds = separable_dataset()
    split = SplitAssignment(tuple(range(len(ds))), (), ())
    result = finetune(init_params(SMALL, 0), SMALL, ds, split, FAST, seed=0)
    report = evaluate(result.model, ds, split.train)
    assert report.per_task["task0"] == 1.0


def test_constant_regression_fits_exactly():
    smiles = ["CC", "CCC", "CCO", "c1ccccc1", "CCN", "C1CC1"]
    ds = MoleculeDataset("esol", smiles, [3.0] * 6, np.ones(6, bool), "regression")
    split = SplitAssignment(tuple(range(6)), (), ())
    result = finetune(init_params(SMALL, 0), SMALL, ds, split, FAST)
    assert evaluate(result.model, ds, split.train).average < 0.05


def test_best_lr_is_selected_by_validation():
    ds = separable_dataset()
    split = holdout_split(len(ds))
    config = FinetuneConfig(lr_candidates=(0.0001, 0.01), max_epochs=5, batch_size=8, patience=5, hidden_dim=16)
    result = finetune(init_params(SMALL, 0), SMALL, ds, split, config)
    assert set(result.val_scores) == {0.0001, 0.01}
    assert all(np.isfinite(v) for v in result.val_scores.values())
    assert result.val_scores[result.best_lr] == max(result.val_scores.values())


def test_finetune_leaves_encoder_untouched_and_freezes_text():
    encoder = init_params(SMALL, 0)
    before = encoder.snapshot()
    ds = separable_dataset()
    result = finetune(encoder, SMALL, ds, scaffold_split(ds), FinetuneConfig((0.01,), 2, 8, 2, 16))
    assert all(np.array_equal(before[k], encoder[k].value) for k in before)
    assert np.array_equal(result.model.store["proj.W_g"].value, before["proj.W_g"])
    assert not np.array_equal(result.model.store["gin.0.w1"].value, before["gin.0.w1"])


def test_initialization_changes_initial_validation_loss():
    ds = separable_dataset()
    split = holdout_split(len(ds))
    config = FinetuneConfig((0.001,), 1, 8, 1, 16)
    a = finetune(init_params(SMALL, 0), SMALL, ds, split, config).initial_val_loss[0.001]
    b = finetune(init_params(SMALL, 1), SMALL, ds, split, config).initial_val_loss[0.001]
    assert np.isfinite(a) and np.isfinite(b) and a != b


def test_task_without_train_labels_rejected():
    ds = MoleculeDataset("t", ["C", "CC", "CCC"], [[1, 0], [0, 1], [1, 1]],
                         [[True, False], [True, False], [True, True]], "classification")
    with pytest.raises(FinetuneError, match="task1"):
        finetune(init_params(SMALL, 0), SMALL, ds, SplitAssignment((0, 1), (2,), ()), FAST)


def test_split_fractional_targets_stay_within_one_group():
    split = scaffold_split(RINGS + ["C1CCCCCC1"])
    assert (len(split.train), len(split.valid), len(split.test)) == (9, 1, 1)
