import math

import numpy as np
import pytest

from sicot import autodiff as ad
from sicot.autodiff import SgdConfig, Tape, Tensor, grad_check, no_grad, sgd_step
from sicot.errors import DimensionError, GraphError, NumericError
from sicot.gradcheck import CASES, run_all, run_case


def param(values, name="p"):
    return Tensor(values, requires_grad=True, name=name)


# -- linear ---------------------------------------------------------------


def test_linear_identity():
    out = ad.linear(Tensor([[1, 0], [0, 1]]), Tensor([0, 0]), Tensor([3, 4]))
    assert out.data.tolist() == [3.0, 4.0]


def test_linear_hand_arithmetic():
    out = ad.linear(Tensor([[1, 2]]), Tensor([1]), Tensor([1, 1]))
    assert out.data.tolist() == [4.0]


def test_linear_gradient_of_first_output_matches_finite_differences():
    rng = np.random.default_rng(3)
    W, b, x = param(rng.normal(size=(3, 4)), "W"), param(rng.normal(size=3), "b"), param(rng.normal(size=4), "x")
    first = Tensor([1.0, 0.0, 0.0])
    rep = grad_check(lambda: ad.mul(ad.linear(W, b, x), first).sum(), [W, b, x], tolerance=1e-6)
    assert rep.passed, str(rep)


def test_linear_batched_and_without_bias():
    W = Tensor([[1.0, 2.0], [0.0, -1.0]])
    X = Tensor([[1.0, 1.0], [2.0, 0.0]])
    assert ad.linear(W, None, X).data.tolist() == [[3.0, -1.0], [2.0, 0.0]]


def test_linear_dimension_errors():
    with pytest.raises(DimensionError):
        ad.linear(Tensor(np.ones((2, 3))), None, Tensor(np.ones(2)))
    with pytest.raises(DimensionError):
        ad.linear(Tensor(np.ones((2, 3))), Tensor(np.ones(3)), Tensor(np.ones(3)))


# -- elementwise max --------------------------------------------------------


def test_max_example_and_tie_routes_to_first_operand():
    a, b = param([1.0, -2.0, 3.0], "a"), param([0.0, 5.0, 3.0], "b")
    with Tape() as tape:
        out = ad.elementwise_max(a, b)
        tape.backward(out.sum())
    assert out.data.tolist() == [1.0, 5.0, 3.0]
    assert a.grad.tolist() == [1.0, 0.0, 1.0]
    assert b.grad.tolist() == [0.0, 1.0, 0.0]


def test_max_equal_inputs_all_gradient_to_first():
    a, b = param([0.5, -1.0], "a"), param([0.5, -1.0], "b")
    with Tape() as tape:
        out = ad.elementwise_max(a, b)
        tape.backward(out.sum())
    assert out.data.tolist() == a.data.tolist()
    assert a.grad.tolist() == [1.0, 1.0]
    assert b.grad.tolist() == [0.0, 0.0]


def test_max_random_gradcheck_away_from_ties():
    rng = np.random.default_rng(0)
    a = param(rng.normal(size=20), "a")
    b = param(rng.normal(size=20), "b")
    far = np.abs(a.data - b.data) >= 1e-3
    a.data, b.data = a.data[far].copy(), b.data[far].copy()
    assert grad_check(lambda: ad.elementwise_max(a, b).sum(), [a, b]).passed


def test_max_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.elementwise_max(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


# -- mean -------------------------------------------------------------------


def test_mean_over_axis_examples():
    assert ad.mean_over_axis(Tensor([[1, 3], [3, 1]]), 0).data.tolist() == [2.0, 2.0]
    assert ad.mean_over_axis(Tensor([[1.5, -2.0]]), 0).data.tolist() == [1.5, -2.0]


def test_mean_gradcheck():
    rng = np.random.default_rng(1)
    a = param(rng.normal(size=(4, 3)))
    rep = grad_check(lambda: ad.mul(ad.mean_over_axis(a, 0), Tensor([1.0, -2.0, 0.5])).sum(), [a], tolerance=1e-6)
    assert rep.passed


# -- tanh -------------------------------------------------------------------


def test_tanh_values():
    assert ad.tanh_act(Tensor(0.0)).item() == 0.0
    # mpmath oracle: tanh(1) = 0.761594155956
    assert ad.tanh_act(Tensor(1.0)).item() == pytest.approx(0.761594155956, abs=1e-12)


def test_tanh_gradcheck():
    a = param(np.linspace(-2, 2, 7))
    assert grad_check(lambda: ad.tanh_act(a).sum(), [a]).passed


# -- softmax ----------------------------------------------------------------


def test_softmax_values():
    assert ad.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    # mpmath oracle
    np.testing.assert_allclose(
        ad.softmax(Tensor([1.0, 2.0, 3.0])).data, [0.0900305731704, 0.244728471055, 0.665240955775], atol=1e-12
    )
    assert ad.softmax(Tensor([7.5])).data.tolist() == [1.0]


def test_softmax_extreme_logits_are_stable():
    p = ad.softmax(Tensor([1000.0, 0.0, -1000.0])).data
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


def test_softmax_non_finite_input_raises():
    with pytest.raises(NumericError):
        ad.softmax(Tensor([1.0, np.nan]))
    with pytest.raises(NumericError):
        ad.softmax(Tensor([np.inf, 0.0]))


def test_softmax_mask_zeroes_padding():
    p = ad.softmax(Tensor([[1.0, 2.0, 50.0]]), mask=np.array([[True, True, False]])).data
    assert p[0, 2] == 0.0
    assert p[0, :2].sum() == pytest.approx(1.0, abs=1e-15)


# -- cross entropy --------------------------------------------------------------


def test_cross_entropy_uniform_is_log_c():
    for C in (2, 5, 17):
        assert ad.cross_entropy_from_logits(Tensor(np.zeros(C)), C - 1).item() == pytest.approx(math.log(C), abs=1e-15)


def test_cross_entropy_value():
    # mpmath oracle: -ln(softmax([1,2,3])[2])
    assert ad.cross_entropy_from_logits(Tensor([1.0, 2.0, 3.0]), 2).item() == pytest.approx(0.407605964444, abs=1e-11)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(4)
    z = param(rng.normal(size=6))
    with Tape() as tape:
        tape.backward(ad.cross_entropy_from_logits(z, 4))
    expected = np.exp(z.data - z.data.max())
    expected /= expected.sum()
    expected[4] -= 1.0
    assert np.max(np.abs(z.grad - expected)) <= 1e-12


def test_cross_entropy_batched_and_label_range():
    losses = ad.cross_entropy_from_logits(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert losses.shape == (3,)
    with pytest.raises(ValueError):
        ad.cross_entropy_from_logits(Tensor(np.zeros(3)), 3)


# -- backward -------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = param([1.0, 2.0, 3.0])
    with Tape() as tape:
        tape.backward(x.sum())
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_square_matches_central_difference():
    x = param(3.0)
    with Tape() as tape:
        tape.backward(x * x)
    assert x.grad == 6.0
    # mpmath oracle: (f(3.001) - f(2.999)) / 0.002 = 6.000000
    assert (3.001**2 - 2.999**2) / 0.002 == pytest.approx(6.0, abs=1e-9)


def test_backward_twice_is_an_error_until_reset():
    x = param(2.0)
    tape = Tape()
    with tape:
        y = x * x
    tape.backward(y)
    with pytest.raises(GraphError):
        tape.backward(y)
    tape.reset()
    with tape:
        y = x * x
    tape.backward(y)
    assert x.grad == 8.0  # leaf gradients accumulate across passes


def test_module_level_backward_uses_default_tape():
    x = param([1.0, -1.0])
    loss = ad.mul(x, x).sum()
    ad.backward(loss)
    assert x.grad.tolist() == [2.0, -2.0]
    with pytest.raises(GraphError):
        ad.backward(loss)


def test_backward_requires_scalar_and_graph():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(GraphError):
        tape.backward(y)
    with pytest.raises(GraphError):
        ad.backward(Tensor(1.0))


def test_no_grad_records_nothing():
    x = param([1.0])
    with Tape() as tape, no_grad():
        y = x * 3.0
    assert tape.nodes == [] and y.is_leaf


def test_shared_subexpression_gradient_accumulates():
    x = param(2.0)
    with Tape() as tape:
        y = x * x
        z = y + y * 3.0
        tape.backward(z)
    assert x.grad == 16.0
    assert y.grad == 4.0


def test_tapes_are_thread_local():
    import threading

    results = []

    def worker():
        x = param(1.5)
        with Tape() as tape:
            tape.backward(x * x)
        results.append(x.grad)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == [3.0] * 4


# -- sgd --------------------------------------------------------------------------


def test_sgd_step_example():
    w = param([1.0])
    w.grad = np.array([0.5])
    sgd_step([w], SgdConfig(learning_rate=0.1), epoch=0)
    assert w.data.tolist() == [0.95]
    assert w.grad.tolist() == [0.0]


def test_effective_learning_rate_step_decay():
    cfg = SgdConfig(learning_rate=0.1, gamma=0.8, step_epochs=1)
    assert cfg.effective_lr(2) == pytest.approx(0.064, abs=1e-15)
    assert SgdConfig(0.1, 0.5, 3).effective_lr(5) == pytest.approx(0.05)


def test_sgd_zero_gradient_leaves_parameter():
    w = param([1.25, -3.0])
    w.zero_grad()
    sgd_step([w], SgdConfig(), epoch=4)
    assert w.data.tolist() == [1.25, -3.0]


def test_sgd_missing_gradient_is_named():
    w = param([1.0], "lonely")
    with pytest.raises(GraphError, match="lonely"):
        sgd_step([w], SgdConfig(), 0)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdConfig(gamma=1.5)


# -- grad_check -------------------------------------------------------------------


def test_grad_check_linear_passes():
    rng = np.random.default_rng(5)
    W, b, x = param(rng.normal(size=(2, 3)), "W"), param(rng.normal(size=2), "b"), param(rng.normal(size=3), "x")
    assert grad_check(lambda: ad.tanh_act(ad.linear(W, b, x)).sum(), [W, b, x], tolerance=1e-5).passed


def test_grad_check_flags_corrupted_backward():
    x = param([0.3, -0.7, 1.1], "x")

    def broken_square(t):
        def bw(g):
            out = 2.0 * t.data * g
            out[1] *= 1.5  # wrong on purpose
            return (out,)

        return ad._make(t.data**2, (t,), bw)

    rep = grad_check(lambda: broken_square(x).sum(), [x])
    assert not rep.passed
    assert [f.index for f in rep.failures] == [(1,)]
    assert rep.failures[0].param == "x"
    assert "FAIL" in str(rep)


def test_grad_check_restores_parameters_bit_exactly():
    rng = np.random.default_rng(6)
    W = param(rng.normal(size=(3, 3)))
    before = W.data.copy()
    grad_check(lambda: ad.tanh_act(W).sum(), [W])
    assert np.array_equal(W.data, before)


@pytest.mark.parametrize("name", sorted(CASES))
def test_registered_operation_passes_gradcheck(name):
    rep = run_case(name)
    assert rep.passed, f"{name}: {rep}"
    assert rep.checked > 0


def test_registry_covers_every_differentiable_operation():
    expected = {
        "add", "sub", "mul", "scale", "matmul", "linear", "sum", "mean", "reshape", "tanh", "relu",
        "elementwise_max", "softmax", "cross_entropy", "gather_rows", "bilinear_attention",
        "sharded_cross_entropy", "cotrain_objective",
    }
    assert expected <= set(CASES)
    assert all(r.passed for r in run_all(seed=11).values())
