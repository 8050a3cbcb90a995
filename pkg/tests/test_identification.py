import numpy as np
import pytest

from mfsac import identification as ident
from mfsac import linalg_control as lc
from mfsac.errors import EmptyObservation, SingularBhat
from mfsac.population import CategoricalAtoms, ThetaParams, TruncatedGaussian1D, sample_theta

import oracles


class TestGainSchedule:
    def test_at_zero(self):
        assert ident.gain_schedule(0.0) == 1.0

    def test_closed_form(self):
        assert ident.gain_schedule(np.e**2 - np.e) == pytest.approx(0.25, abs=1e-15)

    def test_nonincreasing(self):
        a = ident.gain_schedule(np.linspace(0, 1e4, 5001))
        assert np.all(np.diff(a) <= 0)


class TestDither:
    def test_silent_first_intervals(self):
        g = np.random.default_rng(0)
        assert np.all(ident.dither(1, 0.7, g, m=3) == 0.0)
        assert np.all(ident.dither(0, 0.3, g) == 0.0)

    def test_amplitude(self):
        assert ident.xi(7) ** 2 == pytest.approx(np.log(7) / np.sqrt(7), rel=1e-14)
        assert ident.xi(7) == pytest.approx(0.8576, abs=5e-5)
        assert ident.xi(7) ** 2 == pytest.approx(0.7355, abs=5e-5)

    def test_variance(self):
        g = np.random.default_rng(1)
        k, s = 7, 0.6
        draws = np.array([ident.dither(k, s, g)[0] for _ in range(10_000)])
        assert draws.var() == pytest.approx(ident.xi(k) ** 2 * s, rel=0.05)

    def test_path_restarts_each_interval(self):
        z = np.random.default_rng(2).standard_normal((1000, 1))
        d, _ = ident.dither_path(0.0, 0.01, z)
        assert np.all(d[:200] == 0.0)
        # at an integer time the Wiener path has just restarted
        assert d[300, 0] == 0.0 and d[301, 0] != 0.0


class TestDynamicsRegression:
    def test_zero_regressor(self):
        st = ident.RwlsState.initial(2, 1)
        nxt = ident.rwls_dyn_step(st, [0.0], [0.0], [0.3], 0.01)
        assert np.array_equal(nxt.info, st.info) and np.array_equal(nxt.cross, st.cross)
        assert nxt.r == st.r and nxt.t == pytest.approx(0.01)

    def test_noise_free_scalar_plant(self):
        # the kappa prior biases the estimate by O(1 / excitation energy), hence the amplitude
        a, b, dt = 0.7, 1.3, 1e-2
        st = ident.RwlsState.initial(2, 1)
        x = 1.0
        for k in range(100_000):
            u = 5.0 * (np.sin(0.37 * k * dt) + np.cos(1.1 * k * dt)) - 2.0 * x
            dx = (a * x + b * u) * dt
            st = ident.rwls_dyn_step(st, [x], [u], [dx], dt)
            x += dx
        A, B = ident.split_dynamics(st, 1)
        assert np.hypot(A[0, 0] - a, B[0, 0] - b) < 1e-3

    def test_information_monotone(self):
        g = np.random.default_rng(3)
        st = ident.RwlsState.initial(3, 2)
        for _ in range(50):
            nxt = ident.rwls_dyn_step(st, g.standard_normal(2), g.standard_normal(1), g.standard_normal(2), 0.01)
            # Psi_next <= Psi in the PSD order
            assert np.min(np.linalg.eigvalsh(st.Psi - nxt.Psi)) >= -1e-10
            assert nxt.r >= st.r
            st = nxt


class TestCostRegression:
    def test_synthetic_feedback(self):
        Pi = np.array([[2.0, 0.3], [0.3, 1.0]])
        s = np.array([0.5, -1.0])
        B = np.array([[1.0, 0.2], [0.0, 0.9]])
        R = np.eye(2)
        dt = 1e-2
        st = ident.RwlsState.initial(3, 2)
        for k in range(100_000):
            t = k * dt
            x = 3.0 * np.array([np.sin(t), np.cos(0.7 * t) + 0.5 * np.sin(2.3 * t)])
            u = -np.linalg.solve(R, B.T @ (Pi @ x + s))
            st = ident.rwls_cost_step(st, x, u, B, R, dt)
        P_hat, s_hat = ident.split_cost(st, 2)
        assert np.max(np.abs(P_hat - Pi)) < 1e-3
        assert np.max(np.abs(s_hat - s)) < 1e-3

    def test_constant_regressor_only(self):
        B, R, s = np.eye(1), np.eye(1), np.array([0.8])
        st = ident.RwlsState.initial(2, 1)
        for _ in range(100_000):
            u = -(B.T @ s)
            st = ident.rwls_cost_step(st, [0.0], u, B, R, 1e-2)
        P_hat, s_hat = ident.split_cost(st, 1)
        assert P_hat[0, 0] == 0.0
        assert s_hat[0] == pytest.approx(0.8, rel=1e-3)

    def test_singular_input_matrix(self):
        with pytest.raises(SingularBhat):
            ident.rwls_cost_step(ident.RwlsState.initial(3, 2), [1.0, 0.0], [0.0, 0.0],
                                 [[1.0, 1.0], [1.0, 1.0]], np.eye(2), 0.01)


class TestRecoverQ:
    def test_scalar(self):
        assert ident.recover_Q([[0.0]], [[1.0]], [[1.0]], [[1.0]])[0, 0] == 1.0

    def test_zero(self):
        assert np.all(ident.recover_Q(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2)) == 0.0)

    def test_roundtrip_2x2(self):
        g = np.random.default_rng(5)
        A = g.standard_normal((2, 2))
        B = g.standard_normal((2, 2)) + 2 * np.eye(2)
        M = g.standard_normal((2, 2))
        Q = M @ M.T + 0.5 * np.eye(2)
        P = lc.care_solve(A, B, Q, np.eye(2))
        assert np.allclose(ident.recover_Q(A, B, P, np.eye(2)), Q, atol=1e-8)


def scalar(a, b, q):
    return ThetaParams([[a]], [[b]], [[q]])


ATOMS3 = (scalar(0.5, 1.0, 1.0), scalar(1.0, 1.5, 2.0), scalar(-0.5, 0.8, 0.5))


class TestMle:
    def test_degenerate_vertex(self):
        spec = CategoricalAtoms(ATOMS3, [1 / 3, 1 / 3, 1 / 3], delta=0.01)
        res = ident.mle_estimate(spec, [ATOMS3[2]] * 10)
        assert np.allclose(res.zeta_hat, [0.0, 0.0, 1.0])

    def test_two_atom_counts(self):
        assert np.allclose(ident.categorical_mle([3, 7], 0.0), [0.3, 0.7])

    def test_floor_active_set(self):
        # with a large floor a rarely seen atom is pushed to zero weight
        z = ident.categorical_mle([1, 50, 49], 0.05)
        assert z[0] == 0.0 and z.sum() == pytest.approx(1.0)

    def test_nearest_atom_assignment(self):
        spec = CategoricalAtoms(ATOMS3, [0.2, 0.3, 0.5])
        noisy = [scalar(0.52, 1.01, 0.97), scalar(-0.45, 0.82, 0.5)]
        assert ident.nearest_atoms(spec, noisy).tolist() == [0, 2]

    def test_empty(self):
        with pytest.raises(EmptyObservation):
            ident.mle_estimate(CategoricalAtoms(ATOMS3, [0.2, 0.3, 0.5]), [])

    def test_gaussian_self_consistency(self):
        spec = TruncatedGaussian1D(scalar(0.0, 1.0, 1.0), scalar(1.0, 2.0, 3.0), [0.5, 0.1], delta=1e-4)
        draws = sample_theta(spec, 17, 10_000)
        res = ident.mle_estimate(spec, draws)
        assert abs(res.zeta_hat[0] - 0.5) <= 3 * 0.1 / np.sqrt(10_000)
        assert abs(res.zeta_hat[1] - 0.1) <= 3 * 0.1 / np.sqrt(2 * 10_000)

    def test_gaussian_against_grid_oracle(self):
        spec = TruncatedGaussian1D(scalar(0.0, 1.0, 1.0), scalar(1.0, 2.0, 3.0), [0.3, 0.15], delta=1e-3)
        draws = sample_theta(spec, 8, 2000)
        lam = np.array([spec.coordinate(th)[0] for th in draws])
        res = ident.mle_estimate(spec, draws)
        grid_mu, grid_sd = np.linspace(0.2, 0.4, 41), np.linspace(0.1, 0.2, 41)
        ref = oracles.scalar_continuous_mle(lam, 1e-3, grid_mu, grid_sd)
        assert abs(res.zeta_hat[0] - ref[0]) <= grid_mu[1] - grid_mu[0]
        assert abs(res.zeta_hat[1] - ref[1]) <= grid_sd[1] - grid_sd[0]
