import numpy as np
import pytest

from graphfb import autodiff as ad
from graphfb.operators import OperatorKind, build_operator
from graphfb.optim import Adam
from graphfb.synth import random_attributed_graph


def test_tensor_shapes():
    t = ad.Tensor(3.0)
    assert t.shape == (1, 1)
    with pytest.raises(ValueError):
        ad.Tensor(np.zeros((2, 2, 2)))


def test_relu_backward_sign_cases():
    x = ad.parameter(np.array([[-2.0, 0.0, 3.0]]))
    y = ad.relu(x)
    loss = ad.matmul(y, ad.constant(np.ones((3, 1))))
    ad.backward(loss)
    assert x.grad.tolist() == [[0.0, 0.0, 1.0]]  # relu'(0) == 0


def test_sigmoid_values_and_grad():
    x = ad.parameter(np.zeros((1, 1)))
    s = ad.sigmoid(x)
    assert s.values[0, 0] == 0.5
    ad.backward(s)
    assert x.grad[0, 0] == pytest.approx(0.25)


def test_spmm_identity_passthrough(k3):
    lp = build_operator(k3, OperatorKind.HAT_A_SYM)
    hp = build_operator(k3, OperatorKind.HAT_L_SYM)
    eye = (lp.matrix + hp.matrix).tocsr()
    x = ad.parameter(np.arange(6.0).reshape(3, 2))
    y = ad.spmm(eye, x)
    assert np.array_equal(y.values, x.values)
    loss = ad.matmul(ad.matmul(ad.constant(np.ones((1, 3))), y), ad.constant(np.ones((2, 1))))
    ad.backward(loss)
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_spmm_shape_and_type_checks(k3):
    op = build_operator(k3, OperatorKind.L)
    with pytest.raises(ValueError, match="shape"):
        ad.spmm(op, ad.constant(np.ones((4, 2))))
    with pytest.raises(TypeError):
        ad.spmm(np.eye(3), ad.constant(np.ones((3, 2))))


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(x)


def test_backward_sum_gives_ones():
    x = ad.parameter(np.ones((3, 2)))
    loss = ad.matmul(ad.matmul(ad.constant(np.ones((1, 3))), x), ad.constant(np.ones((2, 1))))
    ad.backward(loss)
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_accumulates_without_zero_grad():
    x = ad.parameter(np.ones((2, 1)))
    loss = ad.matmul(ad.constant(np.ones((1, 2))), x)
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    assert np.array_equal(x.grad, 2 * first)
    ad.zero_grad([x])
    assert np.array_equal(x.grad, np.zeros((2, 1)))


def test_scale_by_scalar_grads():
    s = ad.parameter(np.array([[2.0]]))
    x = ad.parameter(np.array([[1.0, -3.0]]))
    y = ad.scale_by_scalar(s, x)
    loss = ad.matmul(y, ad.constant(np.ones((2, 1))))
    ad.backward(loss)
    assert s.grad[0, 0] == pytest.approx(-2.0)  # sum(x)
    assert np.array_equal(x.grad, np.full((1, 2), 2.0))


def test_dropout_validation_and_eval_mode():
    x = ad.parameter(np.ones((4, 4)))
    with pytest.raises(ValueError, match="probability"):
        ad.dropout(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ValueError, match="rng"):
        ad.dropout(x, 0.5, True)
    assert ad.dropout(x, 0.5, False) is x  # eval mode: identity
    assert ad.dropout(x, 0.0, True, np.random.default_rng(0)) is x


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(0)
    x = ad.parameter(np.ones((2000, 1)))
    y = ad.dropout(x, 0.25, True, rng)
    kept = y.values[y.values != 0]
    assert np.allclose(kept, 1.0 / 0.75)
    assert abs(y.values.mean() - 1.0) < 0.05  # unbiased in expectation


def test_softmax_cross_entropy_masked_rows_get_zero_grad():
    logits = ad.parameter(np.random.default_rng(1).standard_normal((5, 3)))
    labels = np.array([0, 1, 2, 0, 1])
    mask = np.zeros(5, dtype=bool)
    mask[[1, 3]] = True
    loss = ad.softmax_cross_entropy(logits, labels, mask)
    ad.backward(loss)
    assert np.array_equal(logits.grad[[0, 2, 4]], np.zeros((3, 3)))
    assert np.abs(logits.grad[[1, 3]]).sum() > 0
    # per-row gradient of masked softmax CE sums to zero
    assert np.allclose(logits.grad.sum(axis=1), 0.0, atol=1e-15)


def test_softmax_cross_entropy_uniform_value():
    logits = ad.constant(np.zeros((4, 3)))
    loss = ad.softmax_cross_entropy(logits, np.array([0, 1, 2, 0]), np.arange(4))
    assert loss.values[0, 0] == pytest.approx(np.log(3.0))


def test_random_network_finite_differences(k3):
    # all ops wired together vs central finite differences
    rng = np.random.default_rng(2)
    w0 = ad.parameter(rng.standard_normal((2, 4)))
    w1 = ad.parameter(rng.standard_normal((4, 2)))
    alpha = ad.parameter(np.zeros((1, 1)))
    lp = build_operator(k3, OperatorKind.HAT_A_SYM)
    hp = build_operator(k3, OperatorKind.HAT_L_SYM)
    labels = k3.labels
    mask = np.arange(3)

    def forward():
        h = ad.relu(ad.matmul(ad.constant(k3.features), w0))
        a = ad.sigmoid(alpha)
        mix = ad.add(
            ad.scale_by_scalar(a, ad.spmm(lp, h)),
            ad.scale_by_scalar(a, ad.spmm(hp, h)),
        )
        return ad.softmax_cross_entropy(ad.matmul(mix, w1), labels, mask)

    report = ad.grad_check(forward, [w0, w1, alpha], tolerance=1e-5)
    assert report.passed, report.max_rel_error
    assert report.max_rel_error < 1e-5


def test_grad_check_linear_model_nearly_exact():
    # linear loss: central differences are exact up to rounding
    rng = np.random.default_rng(3)
    w = ad.parameter(rng.standard_normal((3, 2)))
    x = ad.constant(rng.standard_normal((4, 3)))
    left = ad.constant(np.ones((1, 4)))
    right = ad.constant(np.ones((2, 1)))

    def forward():
        return ad.matmul(ad.matmul(left, ad.matmul(x, w)), right)

    # truncation error vanishes for a linear map, so a wide eps just
    # suppresses FD rounding noise
    report = ad.grad_check(forward, [w], tolerance=1e-9, eps=1e-3)
    assert report.max_rel_error < 1e-9


def test_adam_zero_grad_no_motion():
    p = ad.parameter(np.array([[1.0, -2.0]]))
    opt = Adam([p], lr=0.1, weight_decay=0.0)
    opt.zero_grad()
    opt.step()
    assert np.array_equal(p.values, np.array([[1.0, -2.0]]))


def test_adam_first_step_moves_by_lr():
    p = ad.parameter(np.array([[1.0]]))
    opt = Adam([p], lr=0.1)
    p.grad = np.array([[1.0]])
    opt.step()
    assert p.values[0, 0] == pytest.approx(0.9, abs=1e-6)


def test_adam_quadratic_bowl():
    p = ad.parameter(np.array([[3.0]]))
    opt = Adam([p], lr=0.1)
    for _ in range(200):
        p.grad = 2.0 * p.values  # d/dp of p^2
        opt.step()
    assert abs(p.values[0, 0]) < 1e-3


def test_adam_rejects_non_finite_grads():
    p = ad.parameter(np.array([[1.0]]))
    opt = Adam([p], lr=0.1)
    p.grad = np.array([[np.nan]])
    with pytest.raises(FloatingPointError, match="non-finite"):
        opt.step()


def test_adam_weight_decay_added_to_gradient():
    p = ad.parameter(np.array([[1.0]]))
    opt = Adam([p], lr=0.1, weight_decay=0.5)
    p.grad = np.array([[0.0]])
    opt.step()
    # effective gradient 0.5 -> bias-corrected step of ~lr
    assert p.values[0, 0] == pytest.approx(0.9, abs=1e-6)


def test_grad_check_with_relu_jitter_is_stable():
    # inputs jittered away from the relu kink give a clean report
    rng = np.random.default_rng(4)
    w = ad.parameter(rng.standard_normal((3, 3)))
    x_vals = rng.standard_normal((5, 3))
    x_vals[np.abs(x_vals) < 1e-3] += 0.01
    x = ad.constant(x_vals)
    labels = np.array([0, 1, 2, 1, 0])

    def forward():
        return ad.softmax_cross_entropy(ad.relu(ad.matmul(x, w)), labels, np.arange(5))

    report = ad.grad_check(forward, [w], tolerance=1e-5)
    assert report.passed


def test_determinism_fixed_dropout_seed(k3):
    def run():
        rng = np.random.default_rng(9)
        w = ad.parameter(np.full((2, 2), 0.3))
        h = ad.dropout(ad.constant(k3.features), 0.4, True, rng)
        loss = ad.softmax_cross_entropy(ad.matmul(h, w), k3.labels, np.arange(3))
        ad.backward(loss)
        return loss.values[0, 0], w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)
