import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellsearch3d.autodiff import HYBRID, KERNEL, Parameter, Tape, TapeError, Tensor, ops
from cellsearch3d.autodiff.gradcheck import check_gradients, relative_error

from grad_cases import all_cases
from oracles import (
    conv3d_direct, conv3d_transposed_scatter, depthwise_separable_direct, group_moments, pool_scan,
)


# --- tape contract ----------------------------------------------------------------

def test_linear_loss_gradient_is_input():
    x = np.arange(8.0).reshape(2, 1, 2, 2)
    w = Parameter(np.ones_like(x))
    with Tape() as tape:
        loss = ops.total(ops.mul(w, Tensor(x)))
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, x)


def test_second_backward_without_reset_fails():
    w = Parameter(np.ones((1, 1, 1, 1)))
    with Tape() as tape:
        loss = ops.total(ops.scale(w, 2.0))
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)
    tape.reset()
    assert len(tape) == 0


def test_non_scalar_loss_rejected():
    w = Parameter(np.ones((1, 2, 2, 2)))
    with Tape() as tape:
        out = ops.relu(w)
    with pytest.raises(TapeError):
        tape.backward(out)


def test_unreachable_parameter_keeps_zero_gradient():
    used, unused = Parameter(np.ones((1, 2, 2, 2))), Parameter(np.ones((1, 2, 2, 2)))
    with Tape() as tape:
        loss = ops.total(ops.scale(used, 3.0))
    tape.backward(loss)
    assert np.all(used.grad == 3.0)
    assert np.all(unused.grad == 0.0)


def test_gradients_accumulate_over_shared_inputs():
    w = Parameter(np.full((1, 1, 1, 1), 2.0))
    with Tape() as tape:
        loss = ops.total(ops.mul(w, w))
    tape.backward(loss)
    assert w.grad.item() == 4.0


def test_no_tape_means_nothing_recorded():
    w = Parameter(np.ones((1, 2, 2, 2)))
    out = ops.relu(w)
    assert not out._tracked
    with Tape() as tape:
        ops.relu(Tensor(np.ones((1, 2, 2, 2))))
    assert len(tape) == 0


def test_tape_is_topologically_ordered():
    a = Parameter(np.ones((1, 2, 2, 2)))
    with Tape() as tape:
        b = ops.relu(a)
        c = ops.scale(b, 2.0)
        ops.add(b, c)
    position = {id(n.out): i for i, n in enumerate(tape.nodes)}
    for i, node in enumerate(tape.nodes):
        for inp in node.inputs:
            assert position.get(id(inp), -1) < i


def test_parameter_kinds():
    assert Parameter(np.zeros(3), HYBRID).kind == HYBRID
    assert Parameter(np.zeros(3)).kind == KERNEL
    with pytest.raises(ValueError):
        Parameter(np.zeros(3), "other")
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(2))
    assert a.uid != b.uid
    assert a.grad.shape == a.value.shape


def test_tensor_rejects_empty_extent():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


# --- conv3d -------------------------------------------------------------------------

def test_identity_kernel_is_identity(rng):
    x = rng.standard_normal((1, 5, 4, 3))
    out = ops.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_all_ones_center_voxel_is_27():
    out = ops.conv3d(Tensor(np.ones((1, 3, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3))), 1, 1, 1)
    assert out.data[0, 1, 1, 1] == 27.0
    # corner sees 2*2*2 in-bounds voxels
    assert out.data[0, 0, 0, 0] == 8.0


def test_conv_stride_two_shape():
    out = ops.conv3d(Tensor(np.zeros((2, 8, 8, 8))), Tensor(np.zeros((3, 2, 3, 3, 3))), 2, 1, 1)
    assert out.shape == (3, 4, 4, 4)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        ops.conv3d(Tensor(np.zeros((2, 4, 4, 4))), Tensor(np.zeros((3, 3, 3, 3, 3))))


@pytest.mark.parametrize("stride,dilation,padding", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 2, 2), (1, 1, 0)])
def test_conv_matches_direct_loops(rng, stride, dilation, padding):
    x = rng.standard_normal((2, 5, 4, 6))
    w = rng.standard_normal((3, 2, 3, 3, 3))
    out = ops.conv3d(Tensor(x), Tensor(w), stride, dilation, padding).data
    np.testing.assert_allclose(out, conv3d_direct(x, w, stride, dilation, padding), rtol=0, atol=1e-12)


# --- transposed ---------------------------------------------------------------------

def test_transposed_doubles_and_matches_scatter(rng):
    x = rng.standard_normal((2, 4, 4, 4))
    w = rng.standard_normal((2, 3, 3, 3, 3))
    out = ops.conv3d_transposed(Tensor(x), Tensor(w)).data
    assert out.shape == (3, 8, 8, 8)
    np.testing.assert_allclose(out, conv3d_transposed_scatter(x, w), atol=1e-12)
    out2 = ops.conv3d_transposed(Tensor(x[:, :2, :2, :2]), Tensor(w), 2, 2, 2, 1).data
    np.testing.assert_allclose(out2, conv3d_transposed_scatter(x[:, :2, :2, :2], w, 2, 2, 2, 1), atol=1e-12)


def test_transposed_is_adjoint_of_strided_conv(rng):
    """<conv(u), v> == <u, conv^T(v)> for random u, v; probed with delta inputs too."""
    w = rng.standard_normal((3, 2, 3, 3, 3))  # conv: 2 -> 3 channels, stride 2
    u = rng.standard_normal((2, 8, 8, 8))
    v = rng.standard_normal((3, 4, 4, 4))
    cu = ops.conv3d(Tensor(u), Tensor(w), 2, 1, 1).data
    tv = ops.conv3d_transposed(Tensor(v), Tensor(w), 2, 1, 1, 1).data
    assert math.isclose(float((cu * v).sum()), float((u * tv).sum()), rel_tol=1e-12)
    # delta probe: the transposed response to a delta at output voxel o is row o of the conv matrix
    delta = np.zeros((3, 4, 4, 4))
    delta[1, 2, 1, 3] = 1.0
    column = ops.conv3d_transposed(Tensor(delta), Tensor(w), 2, 1, 1, 1).data
    for idx in [(0, 3, 2, 5), (1, 4, 1, 6), (0, 0, 0, 0)]:
        e = np.zeros_like(u)
        e[idx] = 1.0
        assert math.isclose(ops.conv3d(Tensor(e), Tensor(w), 2, 1, 1).data[1, 2, 1, 3], column[idx],
                            abs_tol=1e-14)


def test_transposed_zero_input_and_non_doubling_rejected():
    w = Tensor(np.ones((1, 1, 3, 3, 3)))
    assert not ops.conv3d_transposed(Tensor(np.zeros((1, 2, 2, 2))), w).data.any()
    with pytest.raises(ValueError):
        ops.conv3d_transposed(Tensor(np.zeros((1, 2, 2, 2))), w, 2, 1, 1, 0)


# --- depthwise separable ------------------------------------------------------------

def test_depthwise_separable_single_channel_equals_plain_conv(rng):
    x = rng.standard_normal((1, 4, 4, 4))
    dw = rng.standard_normal((1, 1, 3, 3, 3))
    pw = np.array([[[[[1.7]]]]])
    out = ops.depthwise_separable_conv3d(Tensor(x), Tensor(dw), Tensor(pw)).data
    plain = ops.conv3d(Tensor(x), Tensor(dw * 1.7), 1, 1, 1).data
    np.testing.assert_allclose(out, plain, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise_separable_two_stage_oracle(rng, stride):
    x = rng.standard_normal((2, 4, 4, 4))
    dw = rng.standard_normal((2, 1, 3, 3, 3))
    pw = rng.standard_normal((3, 2, 1, 1, 1))
    out = ops.depthwise_separable_conv3d(Tensor(x), Tensor(dw), Tensor(pw), stride).data
    np.testing.assert_allclose(out, depthwise_separable_direct(x, dw, pw, stride), rtol=0, atol=1e-10)


def test_depthwise_separable_zero_pointwise(rng):
    x = rng.standard_normal((2, 4, 4, 4))
    out = ops.depthwise_separable_conv3d(Tensor(x), Tensor(rng.standard_normal((2, 1, 3, 3, 3))),
                                         Tensor(np.zeros((2, 2, 1, 1, 1))))
    assert not out.data.any()
    with pytest.raises(ValueError):
        ops.depthwise_separable_conv3d(Tensor(x), Tensor(np.ones((2, 1, 3, 3, 3))),
                                       Tensor(np.ones((2, 3, 1, 1, 1))))


# --- squeeze and excitation ----------------------------------------------------------

def _se_weights(c, r, b2):
    return [Tensor(np.zeros((c // r, c))), Tensor(np.zeros(c // r)),
            Tensor(np.zeros((c, c // r))), Tensor(np.full(c, float(b2)))]


def test_se_gate_half_and_open(rng):
    x = rng.standard_normal((4, 4, 4, 4))
    w = rng.standard_normal((4, 4, 3, 3, 3))
    plain = ops.conv3d(Tensor(x), Tensor(w), 1, 1, 1).data
    # zero excitation weights and zero bias: sigmoid(0) = 0.5 on every channel
    half = ops.se_conv3d(Tensor(x), Tensor(w), _se_weights(4, 2, 0.0)).data
    np.testing.assert_allclose(half, 0.5 * plain, atol=1e-12)
    opened = ops.se_conv3d(Tensor(x), Tensor(w), _se_weights(4, 2, 40.0)).data
    np.testing.assert_allclose(opened, plain, rtol=1e-12, atol=1e-12)


def test_se_zero_input_and_bad_reduction():
    w = Tensor(np.ones((4, 4, 3, 3, 3)))
    out = ops.se_conv3d(Tensor(np.zeros((4, 3, 3, 3))), w, _se_weights(4, 2, 1.0))
    assert not out.data.any()
    with pytest.raises(ValueError):
        ops.se_conv3d(Tensor(np.zeros((3, 3, 3, 3))), Tensor(np.ones((3, 3, 3, 3, 3))),
                      _se_weights(4, 2, 0.0), reduction=2)


# --- pooling -------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pool_constant_and_shape(mode):
    out = ops.pool3d(Tensor(np.full((2, 8, 8, 8), 3.5)), mode)
    assert out.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(out.data, 3.5, rtol=0, atol=1e-14)


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pool_window_scan(rng, mode):
    x = rng.permutation(2 * 64).reshape(2, 4, 4, 4).astype(float)
    np.testing.assert_allclose(ops.pool3d(Tensor(x), mode).data, pool_scan(x, mode), atol=1e-12)


def test_max_pool_tie_goes_to_first_voxel():
    x = Parameter(np.ones((1, 2, 2, 2)))
    with Tape() as tape:
        loss = ops.total(ops.pool3d(x, "max"))
    tape.backward(loss)
    expected = np.zeros((1, 2, 2, 2))
    expected[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_avg_pool_gradient_is_uniform_over_window():
    x = Parameter(np.zeros((1, 2, 2, 2)))
    with Tape() as tape:
        loss = ops.total(ops.pool3d(x, "avg"))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 1 / 8)


# --- group norm ------------------------------------------------------------------------

def test_group_norm_examples(rng):
    ones, zeros = Tensor(np.ones(4)), Tensor(np.zeros(4))
    assert not ops.group_norm(Tensor(np.full((4, 3, 3, 3), 7.0)), 4, ones, zeros).data.any()
    fives = ops.group_norm(Tensor(rng.standard_normal((4, 3, 3, 3))), 4, zeros, Tensor(np.full(4, 5.0)))
    assert np.all(fives.data == 5.0)
    with pytest.raises(ValueError):
        ops.group_norm(Tensor(np.ones((4, 2, 2, 2))), 3, ones, zeros)


@pytest.mark.parametrize("groups", [1, 2, 4])
def test_group_norm_moments(rng, groups):
    x = rng.standard_normal((4, 4, 4, 4)) * 3 + 2
    y = ops.group_norm(Tensor(x), groups, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-5).data
    for g, (mu, var) in enumerate(group_moments(y, groups)):
        assert abs(mu) < 1e-8
        # the eps under the root shrinks the variance by var/(var + eps)
        raw_var = group_moments(x, groups)[g][1]
        assert abs(var - raw_var / (raw_var + 1e-5)) < 1e-12
        assert abs(var - 1) < 1e-5


# --- elementwise, softmax --------------------------------------------------------------

def test_elementwise_examples():
    assert ops.relu(Tensor(np.array([-1.0, 2.0]))).data.tolist() == [0.0, 2.0]
    assert ops.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5
    big = ops.sigmoid(Tensor(np.array([-800.0, 800.0]))).data
    assert np.isfinite(big).all()
    cat = ops.concat([Tensor(np.zeros((2, 4, 4, 4))), Tensor(np.zeros((3, 4, 4, 4)))])
    assert cat.shape == (5, 4, 4, 4)
    with pytest.raises(ValueError):
        ops.add(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 2, 3))))
    with pytest.raises(ValueError):
        ops.concat([Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 2, 3)))])


def test_relu_subgradient_at_zero_is_zero():
    x = Parameter(np.zeros(3))
    with Tape() as tape:
        loss = ops.total(ops.relu(x))
    tape.backward(loss)
    assert not x.grad.any()


def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(6))).data, np.full(6, 1 / 6), atol=1e-15)
    two = ops.softmax(Tensor(np.array([math.log(2.0), 0.0]))).data
    np.testing.assert_allclose(two, [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(values, shift):
    a = np.array(values)
    p = ops.softmax(Tensor(a)).data
    q = ops.softmax(Tensor(a + shift)).data
    assert abs(p.sum() - 1) < 1e-12
    assert (p > 0).all()
    np.testing.assert_allclose(p, q, rtol=0, atol=1e-12)


# --- gradient suite ---------------------------------------------------------------------

def test_relative_error_scaling():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert math.isclose(relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])), 0.2 / 2.2)


@pytest.mark.parametrize("name,forward,tensors", all_cases(), ids=[c[0] for c in all_cases()])
def test_gradients_match_finite_differences(name, forward, tensors):
    errors = check_gradients(forward, tensors, h=1e-5, max_entries=16, rng=np.random.default_rng(7))
    assert max(errors) < 1e-4, f"{name}: {errors}"
