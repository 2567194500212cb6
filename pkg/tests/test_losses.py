import numpy as np
import pytest

from errors import InputError
from losses import LossConfig, closed_set_loss, pseudo_loss, total_oss_loss
from tests.conftest import numeric_grad, relative_error


def test_uniform_logits_give_log_c(rng):
    loss, _ = closed_set_loss(np.zeros((7, 4)), rng.integers(0, 4, size=7))
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)


def test_saturated_logits_give_zero_loss():
    labels = np.array([0, 2, 1, 2])
    loss, _ = closed_set_loss(1000.0 * np.eye(3)[labels], labels)
    assert 0.0 <= loss < 1e-6


def test_closed_set_gradient(rng):
    for _ in range(50):
        n, c = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        logits = rng.normal(size=(n, c))
        labels = rng.integers(0, c, size=n)
        _, grad = closed_set_loss(logits, labels)
        fd = numeric_grad(lambda z: closed_set_loss(z, labels)[0], logits)
        assert relative_error(grad, fd) < 1e-5
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_closed_set_shift_invariance(rng):
    logits = rng.normal(size=(5, 3))
    labels = rng.integers(0, 3, size=5)
    shifted = logits + rng.normal(size=(5, 1)) * 50
    assert closed_set_loss(shifted, labels)[0] == pytest.approx(closed_set_loss(logits, labels)[0], abs=1e-10)


def test_closed_set_label_out_of_range():
    with pytest.raises(InputError) as err:
        closed_set_loss(np.zeros((2, 3)), [0, 3])
    assert err.value.kind == "label-out-of-range"


def test_pseudo_loss_saturates_on_unknown_column():
    loss, _, _ = pseudo_loss(np.zeros((4, 3)), np.full(4, 1000.0), np.full(4, 3))
    assert loss < 1e-6


def test_pseudo_loss_uniform():
    loss, _, _ = pseudo_loss(np.zeros((3, 3)), np.zeros(3), np.full(3, 3))
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)


def test_pseudo_loss_gradients(rng):
    for _ in range(50):
        n, c = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        logits = rng.normal(size=(n, c))
        u = rng.normal(size=n)
        labels = rng.integers(0, c + 1, size=n)
        _, g_logits, g_u = pseudo_loss(logits, u, labels)
        fd_logits = numeric_grad(lambda z: pseudo_loss(z, u, labels)[0], logits)
        fd_u = numeric_grad(lambda s: pseudo_loss(logits, s, labels)[0], u)
        assert relative_error(np.c_[g_logits, g_u], np.c_[fd_logits, fd_u]) < 1e-5
        assert np.allclose(g_logits.sum(axis=1) + g_u, 0.0, atol=1e-12)


def test_pseudo_loss_shift_must_include_unknown_column(rng):
    logits = rng.normal(size=(4, 3))
    u = rng.normal(size=4)
    labels = rng.integers(0, 4, size=4)
    base = pseudo_loss(logits, u, labels)[0]
    assert pseudo_loss(logits + 7.0, u + 7.0, labels)[0] == pytest.approx(base, abs=1e-10)
    assert pseudo_loss(logits + 7.0, u, labels)[0] != pytest.approx(base, abs=1e-6)


def test_pseudo_loss_errors():
    with pytest.raises(InputError) as err:
        pseudo_loss(np.zeros((2, 3)), np.zeros(2), [0, 4])
    assert err.value.kind == "label-out-of-range"
    with pytest.raises(InputError) as err:
        pseudo_loss(np.zeros((2, 3)), np.array([0.0, np.nan]), [0, 3])
    assert err.value.kind == "non-finite-input"


def test_total_loss():
    assert total_oss_loss(1.3, 5.0, LossConfig(alpha=0.0)) == 1.3
    assert total_oss_loss(1.0, 2.0, LossConfig()) == pytest.approx(1.002)
    config = LossConfig(alpha=0.25)
    a, b = total_oss_loss(1.0, 2.0, config), total_oss_loss(1.0, 6.0, config)
    assert b - a == pytest.approx(1.0)
    with pytest.raises(InputError):
        LossConfig(alpha=-1.0)
