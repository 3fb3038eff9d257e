"""Correlation losses and metrics against textbook oracles, plus the
4-parameter logistic fit against synthetic ground truth."""

import numpy as np
import pytest
import scipy.stats

from blindvq import objectives as obj
from blindvq import tensor as tk
from blindvq.objectives import DegenerateInputError, Logistic4
from blindvq.tensor import Tensor

from conftest import assert_grads_close, numeric_grad


def pearson_oracle(x, y):
    """Direct covariance formula, written independently of the library."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    xm, ym = x - x.mean(), y - y.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm**2) * np.sum(ym**2)))


def spearman_oracle(x, y):
    """Rank-difference formula for tie-free data, Pearson-of-average-ranks
    otherwise."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = len(x)
    if len(set(x.tolist())) == n and len(set(y.tolist())) == n:
        rx = np.empty(n)
        rx[np.argsort(x)] = np.arange(1, n + 1)
        ry = np.empty(n)
        ry[np.argsort(y)] = np.arange(1, n + 1)
        d = rx - ry
        return float(1.0 - 6.0 * np.sum(d**2) / (n * (n**2 - 1)))
    return pearson_oracle(scipy.stats.rankdata(x), scipy.stats.rankdata(y))


class TestPlcc:
    def test_self_correlation(self):
        assert obj.plcc([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).item() == pytest.approx(1.0)

    def test_hand_case(self):
        # oracle: xm=[-1,0,1], ym=[-1,1,0] -> 1 / (sqrt(2)*sqrt(2)) = 0.5
        assert pearson_oracle([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
        assert obj.plcc([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]).item() == pytest.approx(0.5)

    def test_anticorrelation(self):
        x = np.array([0.3, 1.7, 2.2, 5.0])
        assert obj.plcc(x, -x).item() == pytest.approx(-1.0)

    def test_constant_vector_raises(self):
        with pytest.raises(DegenerateInputError):
            obj.plcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_symmetry_and_range(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 13))
            x, y = rng.standard_normal(n), rng.standard_normal(n)
            r = obj.plcc(x, y).item()
            assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
            assert r == pytest.approx(obj.plcc(y, x).item(), abs=1e-14)

    def test_against_oracles_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(2, 13))
            x, y = rng.standard_normal(n), rng.standard_normal(n)
            r = obj.plcc(x, y).item()
            assert r == pytest.approx(pearson_oracle(x, y), abs=1e-10)
            assert r == pytest.approx(scipy.stats.pearsonr(x, y)[0], abs=1e-10)


class TestSrcc:
    def test_monotone(self):
        assert obj.srcc([1.0, 2.0, 5.0], [10.0, 20.0, 21.0]) == pytest.approx(1.0)

    def test_rank_difference_case(self):
        # ranks (1,2,3) vs (2,1,3): 1 - 6*2/(3*8) = 0.5
        assert spearman_oracle([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5)
        assert obj.srcc([1.0, 2.0, 3.0], [2.0, 1.0, 3.0]) == pytest.approx(0.5)

    def test_reversal(self):
        assert obj.srcc([1.0, 2.0, 3.0, 4.0], [9.0, 7.0, 5.0, 1.0]) == pytest.approx(-1.0)

    def test_all_tied_raises(self):
        with pytest.raises(DegenerateInputError):
            obj.srcc([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_tie_handling_matches_scipy(self, rng):
        for _ in range(100):
            n = int(rng.integers(3, 13))
            x = rng.integers(0, 4, size=n).astype(float)  # heavy ties
            y = rng.standard_normal(n)
            if np.ptp(x) == 0:
                continue
            assert obj.srcc(x, y) == pytest.approx(scipy.stats.spearmanr(x, y)[0], abs=1e-10)

    def test_against_oracles_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(2, 13))
            x, y = rng.standard_normal(n), rng.standard_normal(n)
            assert obj.srcc(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-10)

    def test_symmetry(self, rng):
        x, y = rng.standard_normal(9), rng.standard_normal(9)
        assert obj.srcc(x, y) == pytest.approx(obj.srcc(y, x), abs=1e-14)


class TestSoftRank:
    def test_all_equal_gives_midrank(self):
        r = obj.soft_rank(Tensor([3.0, 3.0, 3.0]), tau=0.5)
        np.testing.assert_allclose(r.data, [2.0, 2.0, 2.0], atol=1e-12)

    def test_cold_limit_matches_hard_ranks(self):
        r = obj.soft_rank(Tensor([0.1, 0.9, 0.5]), tau=1e-4)
        np.testing.assert_allclose(r.data, [3.0, 1.0, 2.0], atol=1e-3)

    def test_rank_sum_is_invariant(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 10))
            r = obj.soft_rank(Tensor(rng.standard_normal(n)), tau=0.3)
            assert r.data.sum() == pytest.approx(n * (n + 1) / 2.0, abs=1e-9)
            assert np.all(r.data > 1.0 - 1e-9) and np.all(r.data < n + 1e-9)

    def test_small_tau_tracks_hard_ranks_within_tolerance(self, rng):
        # descending hard ranks; tau at most a twentieth of the minimum gap
        for _ in range(100):
            n = int(rng.integers(3, 10))
            s = rng.standard_normal(n)
            while np.min(np.diff(np.sort(s))) < 1e-3:
                s = rng.standard_normal(n)
            gap = np.min(np.diff(np.sort(s)))
            soft = obj.soft_rank(Tensor(s), tau=gap / 20.0).data
            hard = (n + 1) - obj.rank_average_ties(s)
            assert np.abs(soft - hard).max() <= 0.01

    def test_bad_tau_raises(self):
        with pytest.raises(ValueError):
            obj.soft_rank(Tensor([1.0, 2.0]), tau=0.0)


class TestLosses:
    def test_plcc_loss_zero_on_affine_positive(self):
        mos = np.array([1.0, 2.5, 3.0, 4.8])
        assert obj.plcc_loss(2.0 * mos + 1.0, mos).item() == pytest.approx(0.0, abs=1e-12)

    def test_plcc_loss_one_on_negation(self):
        mos = np.array([1.0, 2.5, 3.0, 4.8])
        assert obj.plcc_loss(-mos, mos).item() == pytest.approx(1.0, abs=1e-12)

    def test_plcc_loss_affine_invariance(self, rng):
        pred, mos = rng.standard_normal(8), rng.standard_normal(8)
        base = obj.plcc_loss(pred, mos).item()
        shifted = obj.plcc_loss(3.7 * pred + 11.0, mos).item()
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_srcc_loss_small_when_monotone(self):
        mos = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        pred = np.array([0.1, 0.2, 0.35, 0.7, 0.9])  # same order as mos
        assert obj.srcc_loss(pred, mos, tau=1e-3).item() < 1e-3

    def test_srcc_loss_one_on_reversed_order(self):
        mos = np.array([1.0, 2.0, 3.0, 4.0])
        pred = np.array([4.0, 3.0, 2.0, 1.0])
        assert obj.srcc_loss(pred, mos, tau=1e-4).item() == pytest.approx(1.0, abs=1e-3)

    def test_srcc_loss_degenerate_mos_raises(self):
        with pytest.raises(DegenerateInputError):
            obj.srcc_loss([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])

    def test_total_loss_mixing(self, rng):
        pred, mos = rng.standard_normal(6), rng.standard_normal(6)
        pl = obj.plcc_loss(pred, mos).item()
        sl = obj.srcc_loss(pred, mos, tau=0.1).item()
        assert obj.total_loss(pred, mos, alpha=1.0).item() == pytest.approx(pl, abs=1e-14)
        assert obj.total_loss(pred, mos, alpha=0.0).item() == pytest.approx(sl, abs=1e-14)
        assert obj.total_loss(pred, mos, alpha=0.5).item() == pytest.approx(
            0.5 * pl + 0.5 * sl, abs=1e-12
        )

    def test_total_loss_zero_when_components_zero(self):
        mos = np.array([1.0, 2.0, 3.0, 4.0])
        assert obj.total_loss(mos.copy(), mos, alpha=0.5, tau=1e-4).item() == pytest.approx(
            0.0, abs=1e-6
        )

    def test_total_loss_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            obj.total_loss([1.0, 2.0], [1.0, 2.0], alpha=1.5)

    def test_loss_bounds(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 9))
            pred, mos = rng.standard_normal(n), rng.standard_normal(n)
            for v in (
                obj.plcc_loss(pred, mos).item(),
                obj.srcc_loss(pred, mos, tau=0.1).item(),
                obj.total_loss(pred, mos, 0.5, 0.1).item(),
            ):
                assert -1e-12 <= v <= 1.0 + 1e-12

    @pytest.mark.parametrize("loss_name", ["plcc", "srcc", "total"])
    def test_gradients_match_finite_differences(self, loss_name, rng):
        builders = {
            "plcc": lambda p, m: obj.plcc_loss(p, m),
            "srcc": lambda p, m: obj.srcc_loss(p, m, tau=0.2),
            "total": lambda p, m: obj.total_loss(p, m, alpha=0.4, tau=0.2),
        }
        for seed in range(5):
            r = np.random.default_rng(300 + seed)
            pred = Tensor(r.standard_normal(6), requires_grad=True)
            mos = r.standard_normal(6)
            loss = builders[loss_name](pred, mos)
            tk.backward(loss)
            numeric = numeric_grad(lambda: builders[loss_name](pred, mos).item(), pred.data)
            assert_grads_close(pred.grad, numeric)


class TestLogistic4:
    def test_midpoint_identity(self):
        p = Logistic4(5.0, 1.0, 0.7, 0.3)
        assert obj.logistic4_apply(p, np.array([0.7]))[0] == pytest.approx((5.0 + 1.0) / 2.0)

    def test_recovers_known_parameters(self):
        rng = np.random.default_rng(42)
        truth = Logistic4(5.0, 1.0, 0.5, 0.2)
        pred = rng.uniform(-0.5, 1.5, size=50)
        mos = obj.logistic4_apply(truth, pred)
        fitted, mapped = obj.fit_logistic4(pred, mos)
        for got, want in [(fitted.b1, 5.0), (fitted.b2, 1.0), (fitted.b3, 0.5), (fitted.b4, 0.2)]:
            assert got == pytest.approx(want, abs=1e-3)
        assert mapped >= 0.9999

    def test_linear_data_keeps_raw_plcc(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(0.0, 1.0, size=40)
        mos = 3.0 * pred + 1.0
        raw = obj.plcc(pred, mos).item()
        _, mapped = obj.fit_logistic4(pred, mos)
        assert mapped >= raw - 1e-6

    def test_too_few_points_raises(self):
        with pytest.raises(DegenerateInputError):
            obj.fit_logistic4([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])

    def test_constant_predictions_raise(self):
        with pytest.raises(DegenerateInputError):
            obj.fit_logistic4(np.ones(6), np.arange(6.0))

    def test_noisy_recovery_many_seeds(self):
        for seed in range(20):
            rng = np.random.default_rng(9000 + seed)
            truth = Logistic4(
                b1=float(rng.uniform(4.0, 5.0)),
                b2=float(rng.uniform(1.0, 2.0)),
                b3=float(rng.uniform(0.2, 0.8)),
                b4=float(rng.uniform(0.1, 0.4)),
            )
            pred = rng.uniform(-0.6, 1.6, size=60)
            mos = obj.logistic4_apply(truth, pred)
            fitted, mapped = obj.fit_logistic4(pred, mos)
            assert fitted.b1 == pytest.approx(truth.b1, abs=1e-3)
            assert fitted.b2 == pytest.approx(truth.b2, abs=1e-3)
            assert fitted.b3 == pytest.approx(truth.b3, abs=1e-3)
            assert fitted.b4 == pytest.approx(truth.b4, abs=1e-3)
            assert mapped >= 0.9999
