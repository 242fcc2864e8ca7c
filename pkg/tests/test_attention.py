import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import cd_cam_loops, cd_sam_loops
from xattn import ops
from xattn.attention import (CamParams, SamParams, attention_maps, cd_cam, cd_cam_full, cd_sam,
                             cd_sam_full, channel_backward_attention, channel_energy,
                             channel_forward_attention, init_sam_params, spatial_backward_attention,
                             spatial_energy, spatial_forward_attention)
from xattn.gradcheck import finite_diff_check
from xattn.tensor import DimensionError, Tensor


def ident(c):
    return Tensor(np.eye(c)[:, :, None, None])


def random_sam(rng, c, cr, lam_s=1.0, lam_t=1.0):
    return SamParams(Tensor(rng.normal(size=(cr, c, 1, 1))), Tensor(rng.normal(size=(cr, c, 1, 1))),
                     Tensor(rng.normal(size=(c, c, 1, 1))), lam_s, lam_t)


# spatial energy / maps

def test_zero_query_key_gives_zero_energy_and_uniform_attention():
    rng = np.random.default_rng(0)
    p = SamParams(Tensor(np.zeros((2, 3, 1, 1))), Tensor(np.zeros((2, 3, 1, 1))), ident(3))
    phi, _, _ = spatial_energy(Tensor(rng.normal(size=(3, 2, 2))), Tensor(rng.normal(size=(3, 2, 2))), p)
    np.testing.assert_array_equal(phi.data, np.zeros((4, 4)))
    np.testing.assert_allclose(spatial_forward_attention(phi).data, 0.25)


def test_energy_outer_product_hand_case():
    p = SamParams(ident(1), ident(1), ident(1))
    phi, v_s, v_t = spatial_energy(Tensor([[[1.0, 2.0]]]), Tensor([[[3.0, 4.0]]]), p)
    assert phi.data.tolist() == [[3.0, 4.0], [6.0, 8.0]]
    assert v_s.data.tolist() == [[1.0, 2.0]] and v_t.data.tolist() == [[3.0, 4.0]]


def test_energy_entries_are_query_key_dots():
    rng = np.random.default_rng(5)
    p = random_sam(rng, 3, 2)
    a_s, a_t = Tensor(rng.normal(size=(3, 2, 3))), Tensor(rng.normal(size=(3, 2, 3)))
    phi, _, _ = spatial_energy(a_s, a_t, p)
    q = np.einsum("rc,cn->rn", p.w_q.data[:, :, 0, 0], a_s.data.reshape(3, -1))
    k = np.einsum("rc,cn->rn", p.w_k.data[:, :, 0, 0], a_t.data.reshape(3, -1))
    for i in range(6):
        for j in range(6):
            assert phi.data[i, j] == pytest.approx(float(np.dot(q[:, i], k[:, j])), abs=1e-12)


def test_spatial_attention_examples():
    zero = Tensor(np.zeros((2, 2)))
    np.testing.assert_allclose(spatial_forward_attention(zero).data, 0.5)
    np.testing.assert_allclose(spatial_backward_attention(zero).data, 0.5)
    np.testing.assert_array_equal(spatial_forward_attention(Tensor(np.zeros((3, 1)))).data, np.ones((3, 1)))
    np.testing.assert_array_equal(spatial_backward_attention(Tensor(np.zeros((1, 3)))).data, np.ones((1, 3)))
    row = spatial_forward_attention(Tensor([[math.log(2.0), 0.0]])).data[0]
    np.testing.assert_allclose(row, [2 / 3, 1 / 3], atol=1e-15)
    col = spatial_backward_attention(Tensor([[0.0], [math.log(3.0)]])).data[:, 0]
    np.testing.assert_allclose(col, [0.25, 0.75], atol=1e-15)


def test_cd_sam_zero_coefficients_is_identity():
    rng = np.random.default_rng(1)
    a_s, a_t = Tensor(rng.normal(size=(4, 3, 3))), Tensor(rng.normal(size=(4, 3, 3)))
    o_s, o_t = cd_sam(a_s, a_t, random_sam(rng, 4, 2, 0.0, 0.0))
    np.testing.assert_array_equal(o_s.data, a_s.data)
    np.testing.assert_array_equal(o_t.data, a_t.data)


def test_cd_sam_single_position_adds_value():
    rng = np.random.default_rng(2)
    p = random_sam(rng, 3, 1, 0.5, 2.0)
    a_s, a_t = Tensor(rng.normal(size=(3, 1, 1))), Tensor(rng.normal(size=(3, 1, 1)))
    o_s, o_t = cd_sam(a_s, a_t, p)
    wv = p.w_v.data[:, :, 0, 0]
    np.testing.assert_allclose(o_s.data[:, 0, 0], a_s.data[:, 0, 0] + 0.5 * wv @ a_t.data[:, 0, 0], atol=1e-14)
    np.testing.assert_allclose(o_t.data[:, 0, 0], a_t.data[:, 0, 0] + 2.0 * wv @ a_s.data[:, 0, 0], atol=1e-14)


def test_cd_sam_shape_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(DimensionError):
        cd_sam(Tensor(np.ones((3, 2, 2))), Tensor(np.ones((3, 2, 3))), random_sam(rng, 3, 1))


def test_sam_params_validation():
    with pytest.raises(DimensionError):
        SamParams(Tensor(np.ones((4, 3, 1, 1))), Tensor(np.ones((4, 3, 1, 1))), ident(3))
    with pytest.raises(ValueError):
        SamParams(ident(2), ident(2), ident(2), lambda_s=-1.0)
    with pytest.raises(ValueError):
        CamParams(xi_t=-0.1)


def test_shared_query_key_option():
    p = init_sam_params(8, 2, np.random.default_rng(0), shared_qk=True)
    assert p.w_k is p.w_q
    q = init_sam_params(8, 2, np.random.default_rng(0))
    assert q.w_k is not q.w_q and q.w_q.shape == (2, 8, 1, 1) and q.w_v.shape == (8, 8, 1, 1)


# channel

def test_channel_energy_examples():
    rng = np.random.default_rng(4)
    b_t = Tensor(rng.normal(size=(3, 2, 2)))
    np.testing.assert_array_equal(channel_energy(Tensor(np.zeros((3, 2, 2))), b_t).data, np.zeros((3, 3)))
    ortho = Tensor(np.eye(4).reshape(4, 2, 2))
    np.testing.assert_array_equal(channel_energy(ortho, ortho).data, np.eye(4))
    b_s = Tensor(rng.normal(size=(2, 1, 2)))
    b_t = Tensor(rng.normal(size=(2, 1, 2)))
    theta = channel_energy(b_s, b_t).data
    fs, ft = b_s.data.reshape(2, 2), b_t.data.reshape(2, 2)
    for i in range(2):
        for j in range(2):
            assert theta[i, j] == pytest.approx(fs[i, 0] * ft[j, 0] + fs[i, 1] * ft[j, 1], abs=1e-12)


def test_channel_attention_examples():
    zero = Tensor(np.zeros((4, 4)))
    np.testing.assert_allclose(channel_forward_attention(zero).data, 0.25)
    np.testing.assert_allclose(channel_backward_attention(zero).data, 0.25)
    assert channel_forward_attention(Tensor([[3.0]])).data.tolist() == [[1.0]]
    assert channel_backward_attention(Tensor([[-3.0]])).data.tolist() == [[1.0]]
    row = channel_forward_attention(Tensor([[0.0, math.log(4.0), 0.0]] * 3)).data[0]
    np.testing.assert_allclose(row, [1 / 6, 4 / 6, 1 / 6], atol=1e-15)
    col = channel_backward_attention(Tensor([[math.log(2.0)], [math.log(2.0)]])).data[:, 0]
    np.testing.assert_allclose(col, [0.5, 0.5], atol=1e-15)


def test_cd_cam_examples():
    rng = np.random.default_rng(6)
    b_s, b_t = Tensor(rng.normal(size=(3, 2, 2))), Tensor(rng.normal(size=(3, 2, 2)))
    o_s, o_t = cd_cam(b_s, b_t, CamParams(0.0, 0.0))
    np.testing.assert_array_equal(o_s.data, b_s.data)
    np.testing.assert_array_equal(o_t.data, b_t.data)
    c_s, c_t = Tensor(rng.normal(size=(1, 2, 3))), Tensor(rng.normal(size=(1, 2, 3)))
    o_s, o_t = cd_cam(c_s, c_t, CamParams(0.3, 0.7))
    np.testing.assert_allclose(o_s.data, c_s.data + 0.3 * c_t.data, atol=1e-15)
    np.testing.assert_allclose(o_t.data, c_t.data + 0.7 * c_s.data, atol=1e-15)


# scalar-loop oracles

@pytest.mark.parametrize("seed", range(50))
def test_cd_sam_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    c, h, w = (int(v) for v in rng.integers(1, 4, size=3))
    cr = int(rng.integers(1, c + 1))
    p = random_sam(rng, c, cr, *rng.uniform(0, 2, size=2))
    a_s, a_t = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
    r = cd_sam_full(Tensor(a_s), Tensor(a_t), p)
    o_s, o_t, g_st, g_ts = cd_sam_loops(a_s, a_t, p.w_q.data[:, :, 0, 0].tolist(), p.w_k.data[:, :, 0, 0].tolist(),
                                        p.w_v.data[:, :, 0, 0].tolist(), p.lambda_s, p.lambda_t)
    np.testing.assert_allclose(r.a_s.data.reshape(c, -1), o_s, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.a_t.data.reshape(c, -1), o_t, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.gamma_st.data, g_st, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.gamma_ts.data, g_ts, atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(50))
def test_cd_cam_matches_loop_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    c, h, w = (int(v) for v in rng.integers(1, 4, size=3))
    xi_s, xi_t = rng.uniform(0, 2, size=2)
    b_s, b_t = rng.normal(size=(c, h, w)), rng.normal(size=(c, h, w))
    r = cd_cam_full(Tensor(b_s), Tensor(b_t), CamParams(xi_s, xi_t))
    o_s, o_t, p_st, p_ts = cd_cam_loops(b_s, b_t, xi_s, xi_t)
    np.testing.assert_allclose(r.b_s.data.reshape(c, -1), o_s, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.b_t.data.reshape(c, -1), o_t, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.psi_st.data, p_st, atol=1e-10, rtol=0)
    np.testing.assert_allclose(r.psi_ts.data, p_ts, atol=1e-10, rtol=0)


# properties

dims = st.integers(1, 4)


@given(dims, dims, dims, st.integers(0, 10 ** 6))
def test_attention_maps_are_stochastic(c, h, w, seed):
    rng = np.random.default_rng(seed)
    cr = int(rng.integers(1, c + 1))
    feats = [Tensor(rng.normal(scale=2.0, size=(c, h, w))) for _ in range(4)]
    m = attention_maps(*feats, random_sam(rng, c, cr))
    for key in ("gamma_st", "psi_st"):
        np.testing.assert_allclose(m[key].sum(axis=1), 1.0, atol=1e-10)
    for key in ("gamma_ts", "psi_ts"):
        np.testing.assert_allclose(m[key].sum(axis=0), 1.0, atol=1e-10)
    for v in m.values():
        assert np.all(v > 0) and np.all(v <= 1)


@given(dims, dims, dims, st.floats(0, 3), st.floats(0, 3), st.integers(0, 10 ** 6))
def test_shapes_preserved_and_residual_bound(c, h, w, lam_s, lam_t, seed):
    rng = np.random.default_rng(seed)
    p = random_sam(rng, c, 1, lam_s, lam_t)
    a_s, a_t = Tensor(rng.normal(size=(c, h, w))), Tensor(rng.normal(size=(c, h, w)))
    o_s, o_t = cd_sam(a_s, a_t, p)
    assert o_s.shape == a_s.shape and o_t.shape == a_t.shape
    _, _, v_t = spatial_energy(a_s, a_t, p)
    bound = lam_s * np.abs(v_t.data).max()
    assert np.abs(o_s.data - a_s.data).max() <= bound + 1e-12
    b_s, b_t = cd_cam(a_s, a_t, CamParams(lam_s, lam_t))
    assert b_s.shape == a_s.shape and b_t.shape == a_t.shape


@given(st.integers(1, 5), st.integers(1, 5), st.floats(-100, 100), st.integers(0, 10 ** 6))
def test_energy_shift_invariance(n, m, shift, seed):
    phi = np.random.default_rng(seed).normal(size=(n, m))
    for f in (spatial_forward_attention, spatial_backward_attention):
        np.testing.assert_allclose(f(Tensor(phi + shift)).data, f(Tensor(phi)).data, atol=1e-10)


def test_cd_sam_gradients_all_parameters():
    rng = np.random.default_rng(7)
    c, cr = 3, 2
    wts = Tensor(rng.normal(size=(c, 2, 2)))

    def f(a_s, a_t, q, k, v):
        o_s, o_t = cd_sam(a_s, a_t, SamParams(q, k, v, 0.8, 1.2))
        return ops.add(ops.sum(ops.mul(o_s, wts)), ops.sum(o_t))

    inputs = [Tensor(rng.normal(size=(c, 2, 2))), Tensor(rng.normal(size=(c, 2, 2))),
              Tensor(rng.normal(size=(cr, c, 1, 1))), Tensor(rng.normal(size=(cr, c, 1, 1))),
              Tensor(rng.normal(size=(c, c, 1, 1)))]
    assert finite_diff_check(f, inputs) < 1e-4


def test_cd_cam_gradients():
    rng = np.random.default_rng(8)
    wts = Tensor(rng.normal(size=(3, 2, 3)))

    def f(b_s, b_t):
        o_s, o_t = cd_cam(b_s, b_t, CamParams(1.0, 0.5))
        return ops.sum(ops.mul(ops.add(o_s, o_t), wts))

    assert finite_diff_check(f, [Tensor(rng.normal(size=(3, 2, 3))), Tensor(rng.normal(size=(3, 2, 3)))]) < 1e-4
