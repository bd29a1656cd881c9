import numpy as np
import pytest
from hypothesis import given, strategies as st

from molalign import nn
from molalign.chem.graph import smiles_to_graph
from molalign.encoders import (
    GinConfig,
    GraphBatch,
    ModelConfig,
    ProjectionConfig,
    TextEncoderConfig,
    embed_pairs,
    encode_graph,
    encode_graphs,
    encode_text,
    gin_layer,
    init_params,
    project,
    tokenize,
)
from molalign.synthetic import random_smiles

SMALL = ModelConfig(
    GinConfig(layers=3, hidden_dim=16),
    TextEncoderConfig(vocab_buckets=256, embed_dim=8, output_dim=12),
    ProjectionConfig(joint_dim=6),
)


@pytest.fixture(scope="module")
def small_store():
    return init_params(SMALL, seed=0)


def test_default_shapes_and_trainability():
    cfg = ModelConfig()
    store = init_params(cfg, seed=0)
    assert store["proj.W_g"].value.shape == (128, 256)
    assert store["proj.W_t"].value.shape == (128, 256)
    assert store["text.body"].value.shape == (32768, 128) and not store["text.body"].trainable
    assert store["text.w"].trainable and store["gin.4.w2"].value.shape == (256, 256)
    assert "gin.5.w1" not in store


def test_config_validation_and_digest():
    with pytest.raises(ValueError):
        TextEncoderConfig(vocab_buckets=1000)
    with pytest.raises(ValueError):
        GinConfig(layers=0)
    assert ModelConfig().digest() == ModelConfig.from_dict(ModelConfig().to_dict()).digest()
    assert ModelConfig().digest() != SMALL.digest()


def test_isolated_node_with_zero_weights_is_zero(small_store):
    store = small_store.copy()
    for name in ("w1", "b1", "w2", "b2"):
        store[f"gin.0.{name}"].value[:] = 0
    h = nn.constant(np.ones((1, 16)))
    out = gin_layer(h, np.zeros((2, 0), np.int64), np.zeros((0, 2), np.int64), store, 0, SMALL.gin, final=False)
    assert np.all(out.value == 0)


def test_two_node_hand_computed():
    cfg = GinConfig(layers=1, hidden_dim=2)
    store = init_params(ModelConfig(cfg, TextEncoderConfig(256, 2, 2), ProjectionConfig(2)), 0)
    store["gin.atom_embed"].value[5] = [1.0, 0.0]  # carbon
    store["gin.atom_embed"].value[7] = [0.0, 2.0]  # oxygen
    store["gin.chirality_embed"].value[:] = 0
    store["gin.0.bond_embed"].value[0] = [0.5, -3.0]
    store["gin.0.direction_embed"].value[:] = 0
    store["gin.0.w1"].value[:] = np.eye(2)
    store["gin.0.w2"].value[:] = np.eye(2)
    store["gin.0.b1"].value[:] = 0
    store["gin.0.b2"].value[:] = 0
    # C: [1,0] + relu([0,2]+[0.5,-3]) = [1.5,0]; O: [0,2] + relu([1,0]+[0.5,-3]) = [1.5,2]
    assert np.allclose(encode_graph(smiles_to_graph("CO"), store, cfg), [1.5, 1.0], atol=1e-15)


def test_dangling_edge_raises(small_store):
    h = nn.constant(np.ones((2, 16)))
    with pytest.raises(IndexError):
        gin_layer(h, np.array([[0], [5]]), np.zeros((1, 2), np.int64), small_store, 0, SMALL.gin, final=True)


def test_empty_graph_rejected(small_store):
    g = smiles_to_graph("C")
    empty = type(g)(g.node_features[:0], g.edge_index, g.edge_features)
    with pytest.raises(ValueError):
        GraphBatch.from_graphs([empty])
    with pytest.raises(ValueError):
        GraphBatch.from_graphs([])


def test_single_atom_pool_equals_node_state(small_store):
    g = smiles_to_graph("C")
    cfg = GinConfig(layers=3, hidden_dim=16, readout="sum")
    assert np.array_equal(encode_graph(g, small_store, cfg), encode_graph(g, small_store, SMALL.gin))


def test_benzene_default_size_reproducible():
    cfg = ModelConfig()
    a = encode_graph(smiles_to_graph("c1ccccc1"), init_params(cfg, 7), cfg.gin)
    b = encode_graph(smiles_to_graph("c1ccccc1"), init_params(cfg, 7), cfg.gin)
    assert a.shape == (256,) and np.all(np.isfinite(a)) and np.array_equal(a, b)


def test_batched_equals_individual(small_store):
    graphs = [smiles_to_graph(s) for s in ("CCO", "c1ccccc1", "N")]
    batched = encode_graphs(graphs, small_store, SMALL.gin).value
    for row, g in zip(batched, graphs):
        assert np.allclose(row, encode_graph(g, small_store, SMALL.gin), atol=1e-12)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_graph_embedding_permutation_invariant(mol_seed, perm_seed):
    store = init_params(SMALL, 0)
    g = smiles_to_graph(random_smiles(np.random.default_rng(mol_seed)))
    perm = np.random.default_rng(perm_seed).permutation(g.num_nodes)
    assert np.allclose(encode_graph(g, store, SMALL.gin), encode_graph(g.permuted(perm), store, SMALL.gin), atol=1e-10)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_gin_layer_permutation_equivariant(mol_seed, perm_seed):
    store = init_params(SMALL, 0)
    g = smiles_to_graph(random_smiles(np.random.default_rng(mol_seed)))
    h = np.random.default_rng(1).normal(size=(g.num_nodes, 16))
    perm = np.random.default_rng(perm_seed).permutation(g.num_nodes)
    p = g.permuted(perm)
    out = gin_layer(nn.constant(h), g.edge_index, g.edge_features, store, 1, SMALL.gin, False).value
    out_p = gin_layer(nn.constant(h[perm]), p.edge_index, p.edge_features, store, 1, SMALL.gin, False).value
    assert np.allclose(out[perm], out_p, atol=1e-12)


def test_tokenize_examples():
    ids = tokenize("LogP: 4.635")
    assert ids == [tokenize(t)[0] for t in ("logp", "4", "635")]
    assert tokenize("") == [] and tokenize("  ::  ") == []
    assert tokenize("Hello world") == tokenize("hello   WORLD!")
    assert all(0 <= i < 64 for i in tokenize("a b c d e f", 64))


def test_tokenize_stable_across_processes():
    import subprocess
    import sys

    code = "from molalign.encoders import tokenize; print(tokenize('LogP of benzene: 1.687'))"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.strip() == str(tokenize("LogP of benzene: 1.687"))


def test_empty_text_is_bias_driven(small_store):
    out = encode_text([], small_store, SMALL.text)
    assert np.array_equal(out, np.maximum(small_store["text.b"].value, 0))


@given(st.lists(st.integers(0, 255), min_size=1, max_size=10), st.integers(0, 10**6), st.integers(2, 4))
def test_text_embedding_order_and_multiplicity_invariant(tokens, seed, k):
    store = init_params(SMALL, 0)
    base = encode_text(tokens, store, SMALL.text)
    shuffled = list(np.random.default_rng(seed).permutation(tokens))
    assert np.allclose(encode_text(shuffled, store, SMALL.text), base, atol=1e-12)
    assert np.allclose(encode_text(tokens * k, store, SMALL.text), base, atol=1e-12)


def test_project_identity_and_normalization():
    cfg = ProjectionConfig(joint_dim=4, normalize=False)
    store = nn.ParameterStore()
    store.add("proj.W_g", np.eye(4))
    h = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(project(nn.constant(h), "graph", store, cfg).value, h)
    normed = project(nn.constant(h), "graph", store, ProjectionConfig(4, True)).value
    assert np.allclose(np.linalg.norm(normed, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(project(nn.constant(np.zeros((1, 4))), "graph", store, ProjectionConfig(4)).value, np.zeros((1, 4)))
    with pytest.raises(ValueError):
        project(nn.constant(np.ones((1, 5))), "graph", store, cfg)


def test_project_matches_matrix_vector_oracle(small_store):
    h = np.random.default_rng(3).normal(size=(2, 12))
    w = small_store["proj.W_t"].value
    expected = [[sum(w[i, j] * row[j] for j in range(12)) for i in range(6)] for row in h]
    got = project(nn.constant(h), "text", small_store, ProjectionConfig(6, normalize=False)).value
    assert np.allclose(got, expected, atol=1e-12)


def test_composed_graph_map_gradients():
    store = init_params(SMALL, 1)
    graphs = [smiles_to_graph(s) for s in ("CC(=O)O", "c1ccncc1")]
    readout = np.random.default_rng(5).normal(size=(2, 6))

    def loss(s):
        z = project(encode_graphs(graphs, s, SMALL.gin), "graph", s, SMALL.projection)
        return nn.sum(nn.mul(z, nn.constant(readout)))

    assert nn.grad_check(loss, store, max_coords=200) < 1e-4


def test_frozen_text_body_receives_no_gradient():
    store = init_params(SMALL, 2)
    graphs = [smiles_to_graph("CCO"), smiles_to_graph("CCN")]
    hg, ht = embed_pairs(graphs, [tokenize("ethanol", 256), tokenize("ethylamine", 256)], store, SMALL)
    nn.sum(nn.mul(hg, ht)).backward()
    assert np.all(store["text.body"].grad == 0)
    assert np.any(store["text.w"].grad != 0)
