import numpy as np
import pytest

from mfsac import linalg_control as lc
from mfsac.errors import NotHurwitz, NotStabilizable

import oracles

# frozen from oracles.care_eigvec / oracles.lyapunov_quadrature (see fixtures below)
A2 = np.array([[-1.5466251646398361, 1.3597475403099617], [1.2247210785859324, -2.0911250086806876]])
B2 = np.array([[-0.2979695111064471, -0.5273841930334252], [0.5697263575719601, -0.05606443904561759]])
PI2 = np.array([[0.5607105371011952, 0.3405866214782961], [0.3405866214782961, 0.4450357943442512]])

A3 = np.array([
    [-0.8426643705354913, -2.5556650313141818, 0.41809884672577885],
    [-0.5677696061279298, -3.3362327840311194, -0.2155971630897659],
    [-2.019986129147251, -0.23193237764418947, -3.7487965681956155],
])
Q3 = np.diag([1.0, 2.0, 3.0])
LYAP3 = np.array([
    [1.1901793800867904, -0.8132098374692942, -0.02039911484107706],
    [-0.8132098374692941, 0.9283897398897091, -0.08205987465192795],
    [-0.02039911484107705, -0.08205987465192795, 0.40257266627715993],
])


def test_frozen_fixtures_match_live_oracles():
    assert np.allclose(oracles.care_eigvec(A2, B2, np.eye(2), np.eye(2)), PI2, atol=1e-13)
    assert np.allclose(oracles.lyapunov_quadrature(A3, Q3), LYAP3, atol=1e-11)


class TestCare:
    def test_marginal_scalar(self):
        assert lc.care_solve([[0.0]], [[1.0]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_unstable_scalar(self):
        P = lc.care_solve([[1.0]], [[1.0]], [[2.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(1 + np.sqrt(3), abs=1e-12)
        assert P[0, 0] == pytest.approx(2.7320508, abs=1e-7)

    def test_random_2x2_against_eigvec_oracle(self):
        P = lc.care_solve(A2, B2, np.eye(2), np.eye(2))
        assert np.allclose(P, PI2, atol=1e-9)
        assert lc.is_hurwitz(lc.closed_loop(A2, B2, np.eye(2), P))

    def test_residual_bound(self):
        P = lc.care_solve(A2, B2, np.eye(2), np.eye(2))
        assert lc.care_residual(A2, B2, np.eye(2), np.eye(2), P) <= 1e-10 * (1 + np.linalg.norm(P, 2) ** 2)

    def test_unstabilizable_raises(self):
        with pytest.raises(NotStabilizable):
            lc.care_solve(np.eye(2), [[1.0], [0.0]], np.eye(2), [[1.0]])


class TestLyapunov:
    def test_scalar(self):
        assert lc.lyapunov_solve([[-1.0]], [[2.0]])[0, 0] == pytest.approx(1.0)

    def test_decoupled(self):
        P = lc.lyapunov_solve(np.diag([-1.0, -2.0]), np.eye(2))
        assert np.allclose(P, np.diag([0.5, 0.25]), atol=1e-14)

    def test_random_3x3_against_quadrature(self):
        assert np.allclose(lc.lyapunov_solve(A3, Q3), LYAP3, atol=1e-10)

    def test_unstable_raises(self):
        with pytest.raises(NotHurwitz):
            lc.lyapunov_solve([[0.1]], [[1.0]])


class TestExpm:
    def test_zero_time(self):
        assert np.array_equal(lc.expm(A3, 0.0), np.eye(3))

    def test_nilpotent(self):
        assert np.allclose(lc.expm([[0.0, 1.0], [0.0, 0.0]], 1.0), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)

    def test_scalar(self):
        assert lc.expm([[-1.0]], 2.0)[0, 0] == pytest.approx(np.exp(-2.0), rel=1e-14)


class TestRankMargins:
    def test_double_integrator(self):
        assert lc.check_controllable([[0, 1], [0, 0]], [[0], [1]], margin=1e-6)

    def test_rank_one(self):
        assert not lc.check_controllable(np.eye(2), [[1], [0]], margin=1e-6)

    def test_zero_input(self):
        assert not lc.check_controllable(np.eye(2), np.zeros((2, 1)), margin=1e-6)

    def test_observability_by_duality(self):
        # (Q^{1/2}, A) observable iff (A', Q^{1/2}') controllable
        assert lc.check_observable([[0, 0], [0, 1]], [[0, 0], [1, 0]], margin=1e-6)
        assert not lc.check_observable([[1, 0], [0, 0]], np.eye(2), margin=1e-6)
        assert not lc.check_observable(np.zeros((2, 2)), np.eye(2), margin=1e-6)


class TestStabilityFit:
    def test_unit_exponential(self):
        t = np.linspace(0, 5, 50)
        est = lc.fit_stability_bound(list(zip(t, np.exp(-t))))
        assert est.gain == pytest.approx(1.0, rel=1e-6)
        assert est.decay_rate == pytest.approx(1.0, rel=1e-6)

    def test_scaled_exponential(self):
        t = np.linspace(0, 8, 80)
        est = lc.fit_stability_bound(list(zip(t, 2 * np.exp(-0.5 * t))))
        assert est.gain == pytest.approx(2.0, rel=1e-6)
        assert est.decay_rate == pytest.approx(0.5, rel=1e-6)

    def test_bound_holds_on_samples(self):
        t = np.linspace(0, 6, 60)
        y = np.exp(-t) * (1.5 + np.cos(3 * t))
        est = lc.fit_stability_bound(list(zip(t, y)))
        assert np.all(y <= est.gain * np.exp(-est.decay_rate * t) * (1 + 1e-9))

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            lc.fit_stability_bound([(0.0, 1.0), (1.0, 0.5)])
