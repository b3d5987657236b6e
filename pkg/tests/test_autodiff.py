import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from semanticac import autodiff as ad
from semanticac.autodiff import ShapeError, Tensor, backward, finite_difference_check, forward_op

finite = st.floats(-10, 10, allow_nan=False, width=64)


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# -- forward examples -------------------------------------------------------


def test_matmul_identity(rng):
    x = rng.standard_normal((3, 3))
    out = forward_op("matmul", Tensor(np.eye(3)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_softmax_of_zeros_is_uniform():
    out = forward_op("softmax", Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, [0.5, 0.5])


def test_conv_center_sums_window():
    x = Tensor(np.ones((1, 4, 4)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = forward_op("conv2d", x, w, stride=1, padding=1)
    assert out.shape == (1, 4, 4)
    assert out.data[0, 1, 1] == 9.0
    assert out.data[0, 0, 0] == 4.0  # corner sees a 2x2 patch


def test_conv_stride_shape():
    out = ad.conv2d(Tensor(np.zeros((2, 3, 9, 7))), Tensor(np.zeros((5, 3, 3, 3))), stride=2, padding=1)
    assert out.shape == (2, 5, 5, 4)


@pytest.mark.parametrize(
    "kind,shapes",
    [
        ("matmul", [(3, 4), (5, 2)]),
        ("add", [(3, 4), (2, 4)]),
        ("conv2d", [(2, 5, 5), (3, 4, 3, 3)]),
        ("layer_norm", [(4, 8), (6,), (8,)]),
    ],
)
def test_shape_errors_name_op_and_shapes(kind, shapes):
    inputs = [Tensor(np.zeros(s)) for s in shapes]
    with pytest.raises(ShapeError) as info:
        forward_op(kind, *inputs)
    assert info.value.op == kind
    assert str(shapes[0]) in str(info.value) or str(shapes[1]) in str(info.value)


def test_unknown_op():
    with pytest.raises(ValueError, match="fft"):
        forward_op("fft", Tensor(np.zeros(2)))


def test_spec_op_set_present():
    names = {
        "matmul", "conv2d", "add", "mul", "layer_norm", "softmax", "gelu", "sigmoid",
        "mean_pool", "max_pool", "reshape", "transpose", "embed_lookup", "concat",
    }  # fmt: skip
    assert names <= set(ad.OPS)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite))
def test_softmax_rows_positive_and_normalised(x):
    out = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (4, 2), elements=finite))
def test_forward_is_referentially_transparent(a, b):
    first = ad.gelu(ad.matmul(Tensor(a), Tensor(b))).data
    second = ad.gelu(ad.matmul(Tensor(a), Tensor(b))).data
    assert first.tobytes() == second.tobytes()


@given(hnp.arrays(np.float64, (2, 5), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_forward_finite_for_finite_inputs(x):
    t = Tensor(x)
    for out in (ad.softmax(t), ad.log_softmax(t), ad.gelu(t), ad.sigmoid(t)):
        assert np.all(np.isfinite(out.data))
    g, b = Tensor(np.ones(5)), Tensor(np.zeros(5))
    assert np.all(np.isfinite(ad.layer_norm(t, g, b).data))


def test_tensors_are_immutable():
    t = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0


# -- backward examples ------------------------------------------------------


def test_grad_of_sum_is_ones():
    x = leaf([1.0, -2.0, 3.0])
    grads = backward(ad.sum_(x))
    np.testing.assert_array_equal(grads[x], [1.0, 1.0, 1.0])


def test_grad_of_square():
    x = leaf([2.0])
    grads = backward(ad.sum_(ad.mul(x, x)))
    np.testing.assert_array_equal(grads[x], [4.0])


def test_softmax_cross_entropy_grad_closed_form():
    logits = np.array([1.0, 2.0, 3.0])
    x = leaf(logits)
    loss = ad.mul(ad.sum_(ad.mul(ad.log_softmax(x), Tensor(np.array([0.0, 0.0, 1.0])))), -1.0)
    grads = backward(loss)
    expected = np.exp(logits) / np.exp(logits).sum() - np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(grads[x], expected, rtol=0, atol=1e-10)


def test_fan_out_sums_paths():
    # f = x*y + x*x  -> df/dx = y + 2x, df/dy = x
    x, y = leaf([3.0]), leaf([5.0])
    f = ad.sum_(ad.add(ad.mul(x, y), ad.mul(x, x)))
    grads = backward(f)
    np.testing.assert_array_equal(grads[x], [11.0])
    np.testing.assert_array_equal(grads[y], [3.0])


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError, match="scalar"):
        backward(ad.mul(leaf([1.0, 2.0]), 2.0))


def test_unreached_leaf_gets_zero():
    x, unused = leaf([1.0]), leaf([[1.0, 2.0]])
    grads = backward(ad.sum_(x), wrt=[x, unused])
    np.testing.assert_array_equal(grads[unused], [[0.0, 0.0]])


def test_every_reachable_leaf_gets_gradient(rng):
    leaves = [leaf(rng.standard_normal((3, 3))) for _ in range(4)]
    out = ad.sum_(ad.gelu(ad.matmul(ad.add(leaves[0], leaves[1]), ad.mul(leaves[2], leaves[3]))))
    grads = backward(out)
    assert set(grads) == set(leaves)


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert y.is_leaf and not y.requires_grad


def test_topological_order_parents_first(rng):
    x = leaf(rng.standard_normal(3))
    y = ad.sum_(ad.exp(ad.mul(x, x)))
    order = ad.topological_order(y)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t.parents:
            assert pos[id(p)] < pos[id(t)]
    assert order[-1] is y


def test_max_pool_ties_share_gradient():
    x = leaf([[1.0, 3.0, 3.0]])
    grads = backward(ad.sum_(ad.max_pool(x, axis=1)))
    np.testing.assert_array_equal(grads[x], [[0.0, 0.5, 0.5]])


def test_embed_lookup_accumulates_repeated_rows():
    table = leaf(np.zeros((4, 2)))
    out = ad.embed_lookup(table, np.array([1, 1, 3]))
    grads = backward(ad.sum_(out))
    np.testing.assert_array_equal(grads[table], [[0, 0], [2, 2], [0, 0], [1, 1]])


# -- finite differences -----------------------------------------------------


def test_fd_matmul(rng):
    err = finite_difference_check("matmul", [Tensor(rng.standard_normal((4, 4))), Tensor(rng.standard_normal((4, 4)))])
    assert err < 1e-4


def test_fd_layer_norm(rng):
    x, g, b = (Tensor(rng.standard_normal(8)) for _ in range(3))
    assert finite_difference_check("layer_norm", [x, g, b], eps=1e-5) < 1e-4


@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (3, 4), elements=finite))
def test_fd_add_is_exact(a, b):
    assert finite_difference_check("add", [Tensor(a), Tensor(b)]) < 1e-8


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize(
    "kind,shapes,attrs",
    [
        ("gelu", [(6,)], {}),
        ("sigmoid", [(6,)], {}),
        ("softmax", [(2, 5)], {"axis": 0}),
        ("mul", [(2, 3), (3,)], {}),
        ("mean_pool", [(2, 3, 4)], {"axis": 2}),
        ("max_pool", [(2, 3, 4)], {"axis": (0, 2)}),
        ("transpose", [(2, 3, 4)], {"axes": (1, 2, 0)}),
        ("reshape", [(2, 6)], {"shape": (4, 3)}),
        ("conv2d", [(2, 2, 6, 6), (3, 2, 3, 3)], {"stride": 2, "padding": 1}),
    ],
)
def test_fd_primitives(seed, kind, shapes, attrs):
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.standard_normal(s)) for s in shapes]
    assert finite_difference_check(kind, inputs, seed=seed, **attrs) < 1e-4


def test_fd_detects_wrong_gradient(rng):
    def broken(x):
        # forward 2x, backward claims 3
        return ad._make(2 * x.data, "broken", [x], lambda g: [3 * g])

    assert finite_difference_check(broken, [Tensor(rng.standard_normal(5))]) > 0.1


def test_fd_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        finite_difference_check("add", [Tensor(np.zeros(1)), Tensor(np.zeros(1))], eps=0)
