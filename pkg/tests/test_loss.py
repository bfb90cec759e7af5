import math

import numpy as np
import pytest

from graycl import loss as L
from graycl import tensor as T
from graycl.loss import LossError
from graycl.tensor import Tape, Tensor, backward

from helpers import finite_diff, ntxent_brute, rel_err


def unit_rows(rng, n, d=16):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestPairwiseSimilarity:
    def test_identical_rows_all_ones(self):
        z = np.tile([[1.0, 0.0, 0.0]], (4, 1))
        np.testing.assert_allclose(L.pairwise_similarity(z), 1.0)

    def test_orthogonal_rows(self):
        z = np.eye(3)
        s = L.pairwise_similarity(z)
        np.testing.assert_allclose(s - np.diag(np.diag(s)), 0.0)

    def test_dot_product_example(self):
        z = np.zeros((2, 4))
        z[0, :2] = [0.6, 0.8]
        z[1, :2] = [0.8, 0.6]
        assert L.pairwise_similarity(z)[0, 1] == pytest.approx(0.96)

    def test_rejects_unnormalized(self):
        with pytest.raises(LossError, match="unit"):
            L.pairwise_similarity(np.ones((2, 3)))


class TestPairLoss:
    def test_degenerate_single_pair_is_zero(self):
        z = unit_rows(np.random.default_rng(0), 2)
        s = L.pairwise_similarity(z)
        assert L.pair_loss(s, 0, 1, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_identical_embeddings_closed_form(self):
        # all entries equal: the k != i denominator keeps 2N-1 equal terms
        for n in (2, 4, 8):
            z = np.tile(np.eye(1, 8), (2 * n, 1))
            s = L.pairwise_similarity(z)
            assert L.pair_loss(s, 0, 1, 0.5) == pytest.approx(
                math.log(2 * n - 1), abs=1e-9
            )

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        z = unit_rows(rng, 8)
        s = L.pairwise_similarity(z)
        direct = -math.log(
            math.exp(s[2, 3] / 0.5)
            / sum(math.exp(s[2, k] / 0.5) for k in range(8) if k != 2)
        )
        assert L.pair_loss(s, 2, 3, 0.5) == pytest.approx(direct, abs=1e-6)

    def test_bad_temperature(self):
        s = L.pairwise_similarity(unit_rows(np.random.default_rng(1), 4))
        with pytest.raises(LossError, match="temperature"):
            L.pair_loss(s, 0, 1, 0.0)

    def test_attraction_repulsion_signs(self):
        # positive entry pulls (negative derivative), negatives push
        rng = np.random.default_rng(2)
        z = unit_rows(rng, 8)
        s = L.pairwise_similarity(z)
        h = 1e-6
        for k in range(8):
            if k == 0:
                continue
            sp = s.copy()
            sp[0, k] += h
            d = (L.pair_loss(sp, 0, 1, 0.5) - L.pair_loss(s, 0, 1, 0.5)) / h
            if k == 1:
                assert d < 0
            else:
                assert d > 0


class TestBatchLoss:
    def test_single_pair_zero(self):
        z = Tensor(unit_rows(np.random.default_rng(3), 2))
        assert L.batch_loss(z, 0.5).item() == pytest.approx(0.0, abs=1e-6)

    def test_identical_embeddings_match_brute_force(self):
        for n in (2, 4, 8):
            z = np.tile(np.eye(1, 16), (2 * n, 1))
            got = L.batch_loss(Tensor(z, dtype=np.float64), 0.5).item()
            assert got == pytest.approx(ntxent_brute(z, 0.5), abs=1e-9)
            assert got == pytest.approx(math.log(2 * n - 1), abs=1e-9)

    @pytest.mark.parametrize("n", [2, 4, 8])
    @pytest.mark.parametrize("tau", [0.1, 0.5])
    def test_matches_brute_force(self, n, tau):
        rng = np.random.default_rng(100 * n + int(10 * tau))
        for _ in range(5):
            z = unit_rows(rng, 2 * n)
            got = L.batch_loss(Tensor(z, dtype=np.float64), tau).item()
            assert abs(got - ntxent_brute(z, tau)) < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        z = Tensor(unit_rows(rng, 8), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            backward(L.batch_loss(z, 0.5), tape)
        entries = [(0, 0), (3, 5), (7, 11)]
        fd = finite_diff(lambda: ntxent_brute(z.data, 0.5), z, h=1e-6, entries=entries)
        for idx, d in fd.items():
            assert rel_err(z.grad[idx], d) < 1e-4

    def test_odd_row_count_raises(self):
        with pytest.raises(LossError, match="even"):
            L.batch_loss(Tensor(unit_rows(np.random.default_rng(5), 3)), 0.5)

    def test_permutation_equivariance(self):
        # reordering whole pairs leaves the batch loss unchanged
        rng = np.random.default_rng(6)
        z = unit_rows(rng, 8)
        base = L.batch_loss(Tensor(z, dtype=np.float64), 0.5).item()
        for _ in range(5):
            pair_perm = rng.permutation(4)
            rows = np.concatenate([[2 * p, 2 * p + 1] for p in pair_perm])
            got = L.batch_loss(Tensor(z[rows], dtype=np.float64), 0.5).item()
            assert got == pytest.approx(base, abs=1e-9)

    def test_small_gradient_step_decreases_loss(self):
        rng = np.random.default_rng(7)
        z = Tensor(unit_rows(rng, 8), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            before = L.batch_loss(z, 0.5)
            backward(before, tape)
        stepped = z.data - 1e-3 * z.grad
        stepped /= np.linalg.norm(stepped, axis=1, keepdims=True)
        after = L.batch_loss(Tensor(stepped, dtype=np.float64), 0.5).item()
        assert after <= before.item()

    def test_high_temperature_flattens_losses(self):
        rng = np.random.default_rng(8)
        z1, z2 = unit_rows(rng, 8), unit_rows(rng, 8)
        spreads = []
        for tau in (0.3, 0.5, 1.0, 2.0, 5.0):
            a = L.batch_loss(Tensor(z1, dtype=np.float64), tau).item()
            b = L.batch_loss(Tensor(z2, dtype=np.float64), tau).item()
            spreads.append(abs(a - b))
        assert all(s1 >= s2 - 1e-12 for s1, s2 in zip(spreads, spreads[1:]))
