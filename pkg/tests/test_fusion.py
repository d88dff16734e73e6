import dataclasses
import itertools
import math

import numpy as np
import pytest

from oracles import assert_grads_close, central_difference
from secpatch import (EmbeddingMatrix, Modality, cross_attention, default_hyperparams, fuse,
                      init_pt_former, load_pt_former, named_parameters, pooled_concat,
                      pt_former_gradients, save_pt_former, self_attention)
from secpatch.fusion import fuse_backward, fuse_forward


@pytest.fixture
def hp8():
    return dataclasses.replace(default_hyperparams(), dim=8, num_heads=2, dropout=0.0)


@pytest.fixture
def state8(hp8):
    return init_pt_former(hp8, rng_seed=123)


def _matrix(rng, rows, dim=8, modality=Modality.PATCH):
    return EmbeddingMatrix(rng.standard_normal((rows, dim)), modality)


def _inputs(rng, dim=8, rows=(5, 4, 3, 4)):
    return (
        _matrix(rng, rows[0], dim, Modality.PATCH),
        _matrix(rng, rows[1], dim, Modality.EXPLANATION),
        _matrix(rng, rows[2], dim, Modality.DESCRIPTION),
        _matrix(rng, rows[3], dim, Modality.INSTRUCTION),
    )


# ---------------------------------------------------------------------------
# initialization

def test_init_deterministic(hp8):
    a = init_pt_former(hp8, rng_seed=9)
    b = init_pt_former(hp8, rng_seed=9)
    for name, arr in named_parameters(a).items():
        np.testing.assert_array_equal(arr, named_parameters(b)[name], err_msg=name)


def test_init_head_shapes(hp8):
    state = init_pt_former(hp8, rng_seed=0)
    assert state.self_attn.w_q.shape == (2, 8, 4)
    assert state.self_attn.w_q[0].shape == (8, 4)
    assert state.cross_attn.w_q.shape == (8, 8)
    assert state.ff_desc.w1.shape == (8, 8)


def test_init_standard_normal_statistics():
    hp = dataclasses.replace(default_hyperparams(), dim=256, num_heads=4)
    state = init_pt_former(hp, rng_seed=5)
    block = state.self_attn.w_q[0]  # 256 x 64
    n = block.size
    assert abs(block.mean()) <= 3.0 / math.sqrt(n)
    assert abs(block.std() - 1.0) <= 0.05


def test_ff_hidden_override(hp8):
    state = init_pt_former(hp8, rng_seed=0, ff_hidden=5)
    assert state.ff_pa_ex.w1.shape == (8, 5)
    assert state.ff_pa_ex.w2.shape == (5, 8)


# ---------------------------------------------------------------------------
# self-attention contracts

def test_self_attention_shape_and_weight_rows(state8):
    rng = np.random.default_rng(0)
    e = _matrix(rng, 6, modality=Modality.EXPLANATION)
    out, weights = self_attention(e, state8.self_attn, return_weights=True)
    assert out.values.shape == e.values.shape
    assert out.modality is Modality.EXPLANATION
    assert weights.shape == (2, 6, 6)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(weights > 0.0) and np.all(weights < 1.0)


def test_self_attention_single_token_is_value_projection(state8):
    rng = np.random.default_rng(1)
    e = _matrix(rng, 1, modality=Modality.EXPLANATION)
    out = self_attention(e, state8.self_attn)
    expected = np.concatenate([e.values @ state8.self_attn.w_v[h] for h in range(2)], axis=1)
    np.testing.assert_allclose(out.values, expected, atol=1e-12)


def test_self_attention_permutation_equivariant(state8):
    rng = np.random.default_rng(2)
    e = _matrix(rng, 3, modality=Modality.DESCRIPTION)
    base = self_attention(e, state8.self_attn).values
    for perm in itertools.permutations(range(3)):
        permuted = EmbeddingMatrix(e.values[list(perm)], Modality.DESCRIPTION)
        out = self_attention(permuted, state8.self_attn).values
        np.testing.assert_allclose(out, base[list(perm)], atol=1e-10)


# ---------------------------------------------------------------------------
# cross-attention contracts

def test_cross_attention_shape_and_rows(state8):
    rng = np.random.default_rng(3)
    pa = _matrix(rng, 5, modality=Modality.PATCH)
    ex = _matrix(rng, 7, modality=Modality.EXPLANATION)
    out, weights = cross_attention(pa, ex, state8.cross_attn, return_weights=True)
    assert out.values.shape == (5, 8)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)


def test_cross_attention_singleton_key(state8):
    rng = np.random.default_rng(4)
    pa = _matrix(rng, 4, modality=Modality.PATCH)
    ex = _matrix(rng, 1, modality=Modality.EXPLANATION)
    out = cross_attention(pa, ex, state8.cross_attn)
    expected_row = ex.values @ state8.cross_attn.w_v
    for row in out.values:
        np.testing.assert_allclose(row, expected_row[0], atol=1e-12)


def test_cross_attention_key_scaling_keeps_rows_normalized(state8):
    rng = np.random.default_rng(5)
    pa = _matrix(rng, 3, modality=Modality.PATCH)
    ex = _matrix(rng, 4, modality=Modality.EXPLANATION)
    scaled = EmbeddingMatrix(ex.values * 3.0, Modality.EXPLANATION)
    _, w_base = cross_attention(pa, ex, state8.cross_attn, return_weights=True)
    _, w_scaled = cross_attention(pa, scaled, state8.cross_attn, return_weights=True)
    assert not np.allclose(w_base, w_scaled)
    np.testing.assert_allclose(w_scaled.sum(axis=-1), 1.0, atol=1e-12)


def test_cross_attention_identity_weights_scalar_oracle():
    from secpatch.fusion import CrossAttentionParams
    params = CrossAttentionParams(w_q=np.eye(2), w_k=np.eye(2), w_v=np.eye(2))
    pa = EmbeddingMatrix(np.array([[1.0, 0.0], [0.0, 2.0]]), Modality.PATCH)
    ex = EmbeddingMatrix(np.array([[1.0, 1.0], [2.0, 0.0]]), Modality.EXPLANATION)
    out = cross_attention(pa, ex, params).values

    expected = np.zeros((2, 2))
    for i in range(2):
        scores = [sum(pa.values[i][d] * ex.values[j][d] for d in range(2)) / math.sqrt(2)
                  for j in range(2)]
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        weights = [w / total for w in weights]
        for j in range(2):
            for d in range(2):
                expected[i][d] += weights[j] * ex.values[j][d]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_cross_attention_dim_mismatch():
    from secpatch.fusion import CrossAttentionParams
    params = CrossAttentionParams(w_q=np.eye(2), w_k=np.eye(2), w_v=np.eye(2))
    pa = EmbeddingMatrix(np.ones((2, 2)), Modality.PATCH)
    ex = EmbeddingMatrix(np.ones((2, 3)), Modality.EXPLANATION)
    with pytest.raises(ValueError, match="mismatch"):
        cross_attention(pa, ex, params)


# ---------------------------------------------------------------------------
# full fusion

def test_fuse_output_length_and_determinism(state8):
    rng = np.random.default_rng(6)
    mats = _inputs(rng)
    a = fuse(*mats, state8, training=False, sample_id="s")
    b = fuse(*mats, state8, training=False)
    assert len(a) == 3 * 8
    assert a.sample_id == "s"
    np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.parametrize("rows", [(1, 1, 1, 1), (2, 5, 3, 7)])
def test_fuse_length_invariant_to_seq_lengths(state8, rows):
    rng = np.random.default_rng(7)
    assert len(fuse(*_inputs(rng, rows=rows), state8)) == 24


def test_fuse_zero_inputs_equal_bias_images(hp8):
    state = init_pt_former(hp8, rng_seed=11)
    rng = np.random.default_rng(8)
    for block in (state.ff_pa_ex, state.ff_desc, state.ff_inst):
        block.b1[:] = rng.standard_normal(block.b1.shape)
        block.b2[:] = rng.standard_normal(block.b2.shape)
    zeros = tuple(EmbeddingMatrix(np.zeros((3, 8)), m) for m in
                  (Modality.PATCH, Modality.EXPLANATION, Modality.DESCRIPTION,
                   Modality.INSTRUCTION))
    out = fuse(*zeros, state).values
    expected = np.concatenate([
        np.maximum(block.b1, 0.0) @ block.w2 + block.b2
        for block in (state.ff_pa_ex, state.ff_desc, state.ff_inst)
    ])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_fuse_invariant_to_desc_inst_row_permutation(state8):
    rng = np.random.default_rng(9)
    pa, ex, desc, inst = _inputs(rng)
    base = fuse(pa, ex, desc, inst, state8).values
    perm_desc = EmbeddingMatrix(desc.values[[2, 0, 1]], Modality.DESCRIPTION)
    perm_inst = EmbeddingMatrix(inst.values[[3, 1, 0, 2]], Modality.INSTRUCTION)
    out = fuse(pa, ex, perm_desc, perm_inst, state8).values
    np.testing.assert_allclose(out, base, atol=1e-10)


def test_fuse_finite_for_large_inputs(state8):
    rng = np.random.default_rng(10)
    mats = tuple(EmbeddingMatrix(rng.uniform(-1e3, 1e3, size=(4, 8)), m) for m in
                 (Modality.PATCH, Modality.EXPLANATION, Modality.DESCRIPTION,
                  Modality.INSTRUCTION))
    assert np.all(np.isfinite(fuse(*mats, state8).values))


def test_fuse_dim_validation(state8):
    rng = np.random.default_rng(11)
    pa, ex, desc, inst = _inputs(rng)
    bad = EmbeddingMatrix(np.ones((2, 4)), Modality.EXPLANATION)
    with pytest.raises(ValueError, match="dim"):
        fuse(pa, bad, desc, inst, state8)


def test_fuse_training_with_dropout_needs_rng(hp8):
    state = init_pt_former(dataclasses.replace(hp8, dropout=0.5), rng_seed=0)
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError, match="rng"):
        fuse(*_inputs(rng), state, training=True)
    out = fuse(*_inputs(np.random.default_rng(12)), state, training=True,
               rng=np.random.default_rng(3))
    assert np.all(np.isfinite(out.values))


def test_pooled_concat_shape_and_values():
    rng = np.random.default_rng(13)
    pa, ex, desc, inst = _inputs(rng)
    vec = pooled_concat(pa, ex, desc, inst, sample_id="x")
    assert len(vec) == 24
    expected_first = np.vstack([pa.values, ex.values]).mean(axis=0)
    np.testing.assert_allclose(vec.values[:8], expected_first, atol=1e-12)
    np.testing.assert_allclose(vec.values[8:16], desc.values.mean(axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# gradients

def test_fuse_backward_matches_finite_differences(state8):
    rng = np.random.default_rng(14)
    mats = _inputs(rng)
    raw = tuple(m.values for m in mats)
    probe = rng.standard_normal(24)

    def objective():
        vec, _ = fuse_forward(*raw, state8)
        return float(vec @ probe)

    vec, cache = fuse_forward(*raw, state8)
    analytic = fuse_backward(probe, cache, state8)
    numeric = central_difference(objective, named_parameters(state8))
    assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_pt_former_gradients_zero_and_linear(state8):
    rng = np.random.default_rng(15)
    batch = [_inputs(rng) for _ in range(2)]
    upstream = rng.standard_normal((2, 24))

    zeros = pt_former_gradients(batch, state8, np.zeros((2, 24)))
    assert all(np.all(g == 0.0) for g in zeros.values())

    single = pt_former_gradients(batch, state8, upstream)
    doubled = pt_former_gradients(batch, state8, 2.0 * upstream)
    for name in single:
        np.testing.assert_allclose(doubled[name], 2.0 * single[name], rtol=1e-12,
                                   err_msg=name)


def test_pt_former_gradients_batch_size_check(state8):
    rng = np.random.default_rng(16)
    with pytest.raises(ValueError, match="batch"):
        pt_former_gradients([_inputs(rng)], state8, np.zeros((2, 24)))


# ---------------------------------------------------------------------------
# checkpointing

def test_parameter_checkpoint_round_trips_bit_exact(tmp_path, state8):
    path_a = tmp_path / "pt_a.bin"
    path_b = tmp_path / "pt_b.bin"
    save_pt_former(path_a, state8)
    loaded = load_pt_former(path_a)
    for name, arr in named_parameters(state8).items():
        np.testing.assert_array_equal(arr, named_parameters(loaded)[name], err_msg=name)
    assert loaded.dropout_rate == state8.dropout_rate
    save_pt_former(path_b, loaded)
    assert path_a.read_bytes() == path_b.read_bytes()
