import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from molalign import nn
from molalign.alignment import (
    HISTORY_FIELDS,
    AlignmentConfig,
    AlignmentPair,
    TrainingError,
    batch_loss,
    evaluate_pairs,
    pretrain,
    retrieval_accuracy,
    similarity_logits,
    split_validation,
    symmetric_info_nce,
)
from molalign.chem.graph import smiles_to_graph
from molalign.encoders import GinConfig, ModelConfig, ProjectionConfig, TextEncoderConfig, init_params
from molalign.synthetic import describe_composition, synthetic_corpus
from oracles import argmax_retrieval, info_nce_by_enumeration

SMALL = ModelConfig(
    GinConfig(layers=2, hidden_dim=16),
    TextEncoderConfig(vocab_buckets=512, embed_dim=8, output_dim=16),
    ProjectionConfig(joint_dim=8),
)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_similarity_examples():
    eye = np.eye(3)
    assert np.array_equal(similarity_logits(eye, eye, 1.0).value, eye)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert np.allclose(similarity_logits(a, b, 0.5).value, 2 * similarity_logits(a, b, 1.0).value, atol=1e-15)
    oracle = [[sum(a[i, k] * b[j, k] for k in range(4)) for j in range(3)] for i in range(3)]
    assert np.allclose(similarity_logits(a, b, 1.0).value, oracle, atol=1e-12)
    with pytest.raises(ValueError):
        similarity_logits(a, b[:2], 1.0)
    with pytest.raises(ValueError):
        similarity_logits(a, b, 0.0)


def test_single_pair_loss_is_zero():
    report = symmetric_info_nce(np.array([[0.6, 0.8]]), np.array([[1.0, 0.0]]), 0.1)
    assert (report.L_g, report.L_t, report.L) == (0.0, 0.0, 0.0)


def test_two_pair_hand_set_batch():
    hg = np.array([[1.0, 0.0], [0.0, 1.0]])
    ht = np.array([[0.8, 0.6], [0.6, 0.8]])
    report = symmetric_info_nce(hg, ht, 0.5)
    lg, lt, total = info_nce_by_enumeration(hg.tolist(), ht.tolist(), 0.5)
    assert report.L_g == pytest.approx(lg, abs=1e-10)
    assert report.L_t == pytest.approx(lt, abs=1e-10)
    assert report.L == pytest.approx(total, abs=1e-10)


@given(st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_loss_matches_enumeration(n, d, seed):
    rng = np.random.default_rng(seed)
    hg, ht = unit_rows(rng, n, d), unit_rows(rng, n, d)
    report = symmetric_info_nce(hg, ht, 0.1)
    lg, lt, total = info_nce_by_enumeration(hg.tolist(), ht.tolist(), 0.1)
    assert abs(report.L_g - lg) < 1e-9 and abs(report.L_t - lt) < 1e-9 and abs(report.L - total) < 1e-9
    assert report.L == (report.L_g + report.L_t) / 2
    assert report.L_g >= 0 and report.L_t >= 0


@given(st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_identical_embeddings_give_equal_terms(n, d, seed):
    h = unit_rows(np.random.default_rng(seed), n, d)
    report = symmetric_info_nce(h, h.copy(), 0.1)
    assert report.L_g == report.L_t


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_loss_invariant_to_joint_row_permutation(n, seed):
    rng = np.random.default_rng(seed)
    hg, ht = unit_rows(rng, n, 5), unit_rows(rng, n, 5)
    perm = rng.permutation(n)
    assert symmetric_info_nce(hg[perm], ht[perm], 0.1).L == pytest.approx(symmetric_info_nce(hg, ht, 0.1).L, abs=1e-12)


def test_unnormalized_inputs_are_stable():
    rng = np.random.default_rng(1)
    hg, ht = 30 * rng.normal(size=(4, 3)), 30 * rng.normal(size=(4, 3))
    report = symmetric_info_nce(hg, ht, 0.1)
    assert np.isfinite(report.L)


def test_retrieval_examples():
    eye = np.eye(4)
    assert retrieval_accuracy(eye, eye) == (1.0, 1.0)
    same = np.ones((3, 2))
    assert retrieval_accuracy(same, same) == (0.0, 0.0)
    assert retrieval_accuracy(np.ones((1, 2)), np.ones((1, 2))) == (1.0, 1.0)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_retrieval_matches_argmax_oracle(n, seed):
    rng = np.random.default_rng(seed)
    hg, ht = rng.normal(size=(n, 8)), rng.normal(size=(n, 8))
    assert retrieval_accuracy(hg, ht) == pytest.approx(argmax_retrieval(hg.tolist(), ht.tolist()))


def toy_pairs(n=12, seed=0):
    return [
        AlignmentPair.from_text(smiles_to_graph(s), t, SMALL.text.vocab_buckets)
        for s, t in synthetic_corpus(n, seed)
    ]


def test_full_pipeline_gradient_on_four_pairs():
    pairs = toy_pairs(4)
    store = init_params(SMALL, 3)
    err = nn.grad_check(lambda s: batch_loss(pairs, s, SMALL, 0.1)[0], store, max_coords=300)
    assert err < 1e-4


def test_split_validation():
    train, val = split_validation(20, 0.1, 0)
    assert len(val) == 2 and sorted(train + val) == list(range(20))
    assert split_validation(20, 0.1, 0) == (train, val)
    assert split_validation(2, 0.1, 0)[1] and split_validation(2, 0.1, 0)[0]
    with pytest.raises(ValueError):
        split_validation(1, 0.1, 0)


def test_zero_learning_rate_freezes_everything():
    pairs = toy_pairs(12)
    store = init_params(SMALL, 0)
    before = store.snapshot()
    config = AlignmentConfig(batch_size=32, epochs=3, warmup_epochs=0, base_lr=0.0)
    result = pretrain(pairs, config, store, SMALL, seed=0)
    assert all(np.array_equal(before[k], store[k].value) for k in before)
    assert len({r.val_L for r in result.history}) == 1
    train_losses = [r.train_L for r in result.history]
    assert max(train_losses) - min(train_losses) < 1e-12


def test_pretraining_is_deterministic(tmp_path):
    config = AlignmentConfig(batch_size=4, epochs=2, warmup_epochs=1, base_lr=0.001)
    runs = []
    for k in range(2):
        store = init_params(SMALL, 0)
        path = tmp_path / f"h{k}.csv"
        pretrain(toy_pairs(14), config, store, SMALL, seed=5, history_path=path)
        runs.append(path.read_bytes())
    assert runs[0] == runs[1]
    rows = list(csv.reader(runs[0].decode().splitlines()))
    assert rows[0] == HISTORY_FIELDS and len(rows) == 3


def test_selected_snapshot_has_minimum_validation_loss():
    pairs = toy_pairs(16)
    config = AlignmentConfig(batch_size=8, epochs=6, warmup_epochs=1, base_lr=0.01)
    store = init_params(SMALL, 0)
    result = pretrain(pairs, config, store, SMALL, seed=2)
    assert result.best_val_L == min(r.val_L for r in result.history)
    restored = init_params(SMALL, 99)
    restored.load_snapshot(result.snapshot)
    val = [pairs[i] for i in result.val_indices]
    assert evaluate_pairs(val, restored, SMALL, 0.1).L == pytest.approx(result.best_val_L, abs=1e-12)


def test_text_body_untouched_by_training():
    store = init_params(SMALL, 0)
    body = store["text.body"].value.copy()
    pretrain(toy_pairs(10), AlignmentConfig(batch_size=4, epochs=2, warmup_epochs=0, base_lr=0.01), store, SMALL)
    assert np.array_equal(store["text.body"].value, body)


def test_non_finite_loss_reports_context():
    store = init_params(SMALL, 0)
    store["gin.atom_embed"].value[:] = 1e200
    config = AlignmentConfig(batch_size=4, epochs=1, warmup_epochs=0)
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        pretrain(toy_pairs(10), config, store, SMALL)


def test_config_validation():
    with pytest.raises(ValueError):
        AlignmentConfig(temperature=0)
    with pytest.raises(ValueError):
        AlignmentConfig(warmup_epochs=20, epochs=10)


def test_synthetic_descriptions_are_graph_functions():
    for smiles, text in synthetic_corpus(20, 4):
        assert text == describe_composition(smiles)
    texts = [t for _, t in synthetic_corpus(50, 1)]
    assert len(set(texts)) == 50
