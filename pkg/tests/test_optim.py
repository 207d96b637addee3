"""AdamW update rule, frozen/untouched-tensor semantics."""

import numpy as np
import pytest

from sensorflex.errors import NumericError
from sensorflex.optim import AdamW
from sensorflex.params import ParamStore


def store_with(value, frozen=False):
    s = ParamStore()
    s.add("p", np.array(value, dtype=np.float64), frozen=frozen)
    return s


def test_zero_grad_zero_decay_is_identity():
    s = store_with([1.0, -2.0, 3.0])
    opt = AdamW(s, lr=0.1, weight_decay=0.0)
    s.accumulate("p", np.zeros(3))
    opt.step()
    assert np.array_equal(s["p"], [1.0, -2.0, 3.0])


def test_single_step_hand_derivation():
    """g=1 on the first step: m_hat = v_hat = 1, so dp = -lr / (1 + eps)."""
    lr, eps = 0.01, 1e-8
    s = store_with([0.5])
    opt = AdamW(s, lr=lr, eps=eps, weight_decay=0.0)
    s.accumulate("p", np.ones(1))
    opt.step()
    assert s["p"][0] == pytest.approx(0.5 - lr / (1.0 + eps), abs=1e-16)


def test_pure_weight_decay_is_geometric():
    lr, wd = 0.05, 0.01
    s = store_with([2.0])
    opt = AdamW(s, lr=lr, weight_decay=wd)
    for k in range(1, 6):
        s.accumulate("p", np.zeros(1))
        opt.step()
        assert s["p"][0] == pytest.approx(2.0 * (1.0 - lr * wd) ** k, rel=1e-12)


def test_lr_zero_is_identity_even_with_gradients():
    s = store_with([1.0, 2.0])
    opt = AdamW(s, lr=0.0, weight_decay=0.5)
    s.accumulate("p", np.array([3.0, -4.0]))
    opt.step()
    assert np.array_equal(s["p"], [1.0, 2.0])


def test_untouched_tensor_never_updated():
    """A None gradient slot means the tensor took no part in the step: no
    moment update, no weight decay."""
    s = ParamStore()
    s.add("used", np.ones(2))
    s.add("unused", np.full(2, 7.0))
    opt = AdamW(s, lr=0.1, weight_decay=0.1)
    for _ in range(5):
        s.accumulate("used", np.array([1.0, -1.0]))
        opt.step()
    assert np.array_equal(s["unused"], [7.0, 7.0])
    assert not np.array_equal(s["used"], [1.0, 1.0])


def test_frozen_tensor_skipped_even_with_grad_slot():
    s = store_with([1.0], frozen=True)
    opt = AdamW(s, lr=0.1, weight_decay=0.1)
    s.grads["p"] = np.array([5.0])  # bypass accumulate's frozen guard
    opt.step()
    assert np.array_equal(s["p"], [1.0])


def test_non_finite_gradient_aborts_step():
    s = store_with([1.0])
    opt = AdamW(s, lr=0.1)
    s.accumulate("p", np.array([np.nan]))
    with pytest.raises(NumericError, match="non-finite gradient"):
        opt.step()


def test_accumulate_sums_contributions():
    s = store_with([0.0])
    s.accumulate("p", np.array([1.5]))
    s.accumulate("p", np.array([2.0]))
    assert s.grad("p")[0] == 3.5
    s.zero_grads()
    assert s.grads["p"] is None
    assert np.array_equal(s.grad("p"), [0.0])


def test_matches_reference_adamw_trajectory():
    """Cross-check several steps against a scalar re-derivation."""
    lr, b1, b2, eps, wd = 0.02, 0.9, 0.999, 1e-8, 0.04
    s = store_with([1.0])
    opt = AdamW(s, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    theta, m, v = 1.0, 0.0, 0.0
    grads = [0.3, -0.7, 1.1, 0.05]
    for t, g in enumerate(grads, start=1):
        s.accumulate("p", np.array([g]))
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * ((m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps) + wd * theta)
        assert s["p"][0] == pytest.approx(theta, rel=1e-14)
