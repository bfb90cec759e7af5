import math

import numpy as np
import pytest

from graycl.optim import (
    Lars,
    LarsConfig,
    OptimError,
    ScheduleConfig,
    Sgd,
    lr_at,
)
from graycl.tensor import Tensor


def param(data, ndim2=False):
    arr = np.array(data, dtype=np.float32)
    if ndim2:
        arr = arr.reshape(1, -1)
    t = Tensor(arr, requires_grad=True)
    return t


class TestLars:
    def test_zero_grad_is_noop(self):
        w = param([2.0, 3.0], ndim2=True)
        w.grad = np.zeros_like(w.data)
        opt = Lars({"w": w}, LarsConfig(weight_decay=0.0))
        opt.step(0.1)
        np.testing.assert_array_equal(w.data, [[2.0, 3.0]])

    def test_hand_computed_scalar_update(self):
        # w=2, g=1, wd=0, trust=1e-3, momentum=0, lr=1 -> r=0.002, w=1.998
        w = param([2.0], ndim2=True)
        w.grad = np.ones_like(w.data)
        opt = Lars(
            {"w": w},
            LarsConfig(momentum=0.0, weight_decay=0.0, trust_coefficient=1e-3),
        )
        opt.step(1.0)
        assert w.data[0, 0] == np.float32(1.998)

    def test_excluded_bias_matches_sgd(self):
        # 1-D params skip decay and trust scaling; with a power-of-two lr
        # the trajectories agree bitwise
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=3).astype(np.float32) for _ in range(5)]
        b1 = param([1.0, -2.0, 0.5])
        b2 = param([1.0, -2.0, 0.5])
        lars = Lars({"b": b1}, LarsConfig(momentum=0.9, weight_decay=1e-6))
        sgd = Sgd({"b": b2}, momentum=0.9)
        for g in grads:
            b1.grad = g.copy()
            b2.grad = g.copy()
            lars.step(0.5)
            sgd.step(0.5)
        np.testing.assert_array_equal(b1.data, b2.data)

    def test_weight_decay_shrinks_norm(self):
        w = param([3.0, 4.0], ndim2=True)
        opt = Lars({"w": w}, LarsConfig(momentum=0.0, weight_decay=0.1))
        before = np.linalg.norm(w.data)
        w.grad = np.zeros_like(w.data)
        opt.step(1.0)
        assert np.linalg.norm(w.data) < before

    def test_refuses_non_finite_gradient(self):
        w = param([1.0], ndim2=True)
        w.grad = np.array([[np.nan]], dtype=np.float32)
        opt = Lars({"w": w}, LarsConfig())
        with pytest.raises(OptimError, match="non-finite"):
            opt.step(0.1)

    def test_deterministic(self):
        def run():
            w = param([1.0, 2.0], ndim2=True)
            opt = Lars({"w": w}, LarsConfig())
            for i in range(3):
                w.grad = np.full_like(w.data, 0.1 * (i + 1))
                opt.step(0.3)
            return w.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestSgd:
    def test_vanilla_descent(self):
        w = param([1.0])
        w.grad = np.array([0.5], dtype=np.float32)
        Sgd({"w": w}, momentum=0.0).step(0.1)
        assert w.data[0] == np.float32(1.0 - 0.05)

    def test_two_step_momentum(self):
        # w=1, g=1, lr=0.1, m=0.9: after two steps w = 1 - 0.1 - 0.19 = 0.71
        w = param([1.0])
        opt = Sgd({"w": w}, momentum=0.9)
        for _ in range(2):
            w.grad = np.ones(1, dtype=np.float32)
            opt.step(0.1)
        assert w.data[0] == pytest.approx(0.71, abs=1e-6)

    def test_quadratic_contraction(self):
        w = param([1.0])
        opt = Sgd({"w": w}, momentum=0.0)
        prev = abs(w.data[0])
        for _ in range(10):
            w.grad = 2.0 * w.data  # d/dw of w^2
            opt.step(0.1)
            assert abs(w.data[0]) < prev
            prev = abs(w.data[0])

    def test_refuses_non_finite_gradient(self):
        w = param([1.0])
        w.grad = np.array([np.inf], dtype=np.float32)
        with pytest.raises(OptimError, match="non-finite"):
            Sgd({"w": w}).step(0.1)


class TestSchedule:
    CFG = ScheduleConfig(warmup_steps=10, total_steps=110, base_lr=0.4)

    def test_warmup_endpoint(self):
        assert lr_at(10, self.CFG) == pytest.approx(0.4)

    def test_final_step_reaches_final_lr(self):
        assert lr_at(110, self.CFG) == pytest.approx(0.0, abs=1e-12)

    def test_cosine_midpoint(self):
        assert lr_at(60, self.CFG) == pytest.approx(0.2)

    def test_continuous_at_boundary(self):
        before = lr_at(9, self.CFG)
        assert before == pytest.approx(0.4 * 10 / 10)
        assert abs(lr_at(10, self.CFG) - before) < 0.05

    def test_non_negative_everywhere(self):
        assert all(lr_at(s, self.CFG) >= 0 for s in range(111))

    def test_warmup_is_linear(self):
        vals = [lr_at(s, self.CFG) for s in range(10)]
        diffs = np.diff(vals)
        np.testing.assert_allclose(diffs, diffs[0], rtol=1e-9)

    def test_out_of_range_raises(self):
        with pytest.raises(OptimError, match="outside"):
            lr_at(111, self.CFG)
        with pytest.raises(OptimError, match="outside"):
            lr_at(-1, self.CFG)

    def test_matches_direct_formula(self):
        for step in (15, 37, 80):
            t = (step - 10) / 100
            expect = 0.4 * 0.5 * (1 + math.cos(math.pi * t))
            assert lr_at(step, self.CFG) == pytest.approx(expect, rel=1e-12)
