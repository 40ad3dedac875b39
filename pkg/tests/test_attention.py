"""Attention read head: scoring, masking, convex reads, merge algebra."""

import numpy as np
import pytest

from treemem import kernel as K
from treemem.attention import AttentionHead, init_attention_params
from treemem.params import lift
from helpers import check_gradients


def make_head(params):
    return AttentionHead(lift(params))


def zero_attn(k, d, kh=None):
    return {name: np.zeros_like(arr) for name, arr in
            init_attention_params(np.random.default_rng(0), k, d, hidden_dim=kh).items()}


def rand_attn(seed, k, d, kh=None):
    return init_attention_params(np.random.default_rng(seed), k, d, hidden_dim=kh)


def test_zero_mlp_gives_zero_scores_on_active_columns():
    head = make_head(zero_attn(3, 2))
    m = K.Var(np.random.default_rng(1).standard_normal((3, 5)))
    mask = np.array([True, True, False, True, False])
    s = head.score(m, mask, K.Var(np.ones(3))).data
    assert np.array_equal(s[mask], np.zeros(3))
    assert (s[~mask] == K.MASK_SENTINEL).all()


def test_identical_columns_identical_scores():
    head = make_head(rand_attn(2, 4, 2))
    col = np.random.default_rng(3).standard_normal(4)
    m = K.Var(np.repeat(col[:, None], 6, axis=1))
    mask = np.ones(6, dtype=bool)
    s = head.score(m, mask, K.Var(np.zeros(4))).data
    assert np.allclose(s, s[0], atol=1e-15)


def test_single_active_column_takes_all_weight():
    head = make_head(rand_attn(5, 3, 2))
    m = K.Var(np.random.default_rng(5).standard_normal((3, 7)))
    mask = np.zeros(7, dtype=bool)
    mask[4] = True
    _, alpha = head.read_and_predict(m, mask, K.Var(np.ones(3)))
    assert alpha.data[4] == 1.0
    assert np.array_equal(np.delete(alpha.data, 4), np.zeros(6))


def test_attend_one_hot_and_blend():
    m = K.Var(np.stack([np.zeros(3), np.full(3, 4.0)], axis=1))
    one_hot = K.Var(np.array([0.0, 1.0]))
    assert np.array_equal(AttentionHead.attend(m, one_hot).data, np.full(3, 4.0))
    blend = K.Var(np.array([0.25, 0.75]))
    assert np.allclose(AttentionHead.attend(m, blend).data, np.full(3, 3.0), atol=1e-15)
    v = np.array([1.0, -2.0, 0.5])
    m2 = K.Var(np.repeat(v[:, None], 2, axis=1))
    uniform = K.Var(np.array([0.5, 0.5]))
    assert np.allclose(AttentionHead.attend(m2, uniform).data, v, atol=1e-15)


def test_merge_zero_wout_replicates_coordinate_sum():
    head = make_head(zero_attn(2, 2))
    c = K.Var(np.array([0.2, -0.1]))
    y = head.merge_output(K.Var(np.array([7.0, -3.0])), c)
    assert np.allclose(y.data, [0.1, 0.1], atol=1e-15)


def test_merge_z_equal_c_independent_of_wout():
    c = np.array([0.3, 0.1, 0.2])
    results = []
    for seed in (1, 2):
        head = make_head(rand_attn(seed, 3, 2))
        y = head.merge_output(K.Var(c.copy()), K.Var(c.copy()))
        results.append(y.data)
    assert np.allclose(results[0], results[1], atol=1e-12)
    assert np.allclose(results[0], np.maximum(c.sum(), 0.0), atol=1e-12)


def test_merge_all_zero_inputs():
    head = make_head(rand_attn(7, 3, 2))
    y = head.merge_output(K.Var(np.zeros(3)), K.Var(np.zeros(3)))
    assert np.array_equal(y.data, np.zeros(2))


def test_empty_memory_bypass():
    params = rand_attn(9, 3, 2)
    head = make_head(params)
    c = np.array([0.4, -0.2, 0.1])
    m = K.Var(np.zeros((3, 7)))
    y, alpha = head.read_and_predict(m, np.zeros(7, dtype=bool), K.Var(c))
    expect = np.maximum(c.sum() - params["attn.w_out"] @ c, 0.0)
    assert np.allclose(y.data, expect, atol=1e-14)
    assert alpha.data.size == 0


def test_read_with_identical_active_columns_retrieves_that_vector():
    params = rand_attn(11, 3, 3)
    head = make_head(params)
    v = np.array([0.3, 0.8, -0.4])
    m = K.Var(np.repeat(v[:, None], 5, axis=1))
    mask = np.array([True, False, True, True, False])
    y, alpha = head.read_and_predict(m, mask, K.Var(np.array([0.1, 0.2, 0.3])))
    z = m.data @ alpha.data
    assert np.allclose(z, v, atol=1e-12)
    assert abs(alpha.data.sum() - 1.0) <= 1e-12
    assert np.array_equal(alpha.data[~mask], np.zeros(2))
    assert (y.data >= 0.0).all()


def test_alpha_permutation_equivariance():
    rng = np.random.default_rng(13)
    params = rand_attn(13, 4, 3)
    head = make_head(params)
    m = rng.standard_normal((4, 6))
    mask = np.array([True, True, False, True, True, False])
    c = K.Var(rng.standard_normal(4))
    _, alpha = head.read_and_predict(K.Var(m), mask, c)
    perm = rng.permutation(6)
    _, alpha_p = head.read_and_predict(K.Var(m[:, perm]), mask[perm], c)
    assert np.allclose(alpha.data[perm], alpha_p.data, atol=1e-12)
    z = m @ alpha.data
    z_p = m[:, perm] @ alpha_p.data
    assert np.allclose(z, z_p, atol=1e-12)


def test_score_bias_shift_leaves_alpha_unchanged():
    rng = np.random.default_rng(15)
    params = rand_attn(15, 3, 2)
    shifted = dict(params)
    shifted["attn.b_score"] = params["attn.b_score"] + 11.0
    m = K.Var(rng.standard_normal((3, 5)))
    mask = np.array([True, True, True, False, True])
    c = K.Var(rng.standard_normal(3))
    _, a1 = make_head(params).read_and_predict(m, mask, c)
    _, a2 = make_head(shifted).read_and_predict(m, mask, c)
    assert np.allclose(a1.data, a2.data, atol=1e-12)


def test_score_shape_mismatch_rejected():
    head = make_head(rand_attn(17, 3, 2))
    with pytest.raises(ValueError):
        head.score(K.Var(np.zeros((4, 5))), np.ones(5, dtype=bool), K.Var(np.zeros(3)))


def test_end_to_end_read_gradients():
    rng = np.random.default_rng(19)
    mask = np.array([True, False, True, True])
    for seed in range(10):
        r = np.random.default_rng(seed)
        base = rand_attn(seed, 4, 2, kh=3)
        base["mem"] = r.standard_normal((4, 4))
        base["ctx"] = r.standard_normal(4)

        def loss(p):
            head = AttentionHead(p)
            y, _ = head.read_and_predict(p["mem"], mask, p["ctx"])
            return K.total(K.mul(y, y))

        check_gradients(loss, base)
