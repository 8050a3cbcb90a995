import numpy as np
import pytest

from mfsac import linalg_control as lc
from mfsac import mf_solver as mf
from mfsac.errors import ContractionViolated
from mfsac.population import CategoricalAtoms, ThetaParams

import oracles


def scalar(a, b, q):
    return ThetaParams([[a]], [[b]], [[q]])


def unit_theta():
    return scalar(0.0, 1.0, 1.0)  # Pi = 1, A* = -1


def signal(values, h=0.01):
    values = np.asarray(values, dtype=float)
    return mf.MassSignal(h * np.arange(values.shape[0]), values)


class TestOffset:
    def test_zero_forcing(self):
        s = mf.solve_offset(unit_theta(), [[1.0]], [[1.0]], signal(np.zeros(501)))
        assert np.all(s.values == 0.0)

    def test_constant_target(self):
        c = 1.7
        s = mf.solve_offset(unit_theta(), [[1.0]], [[1.0]], signal(np.full(501, c)))
        assert np.allclose(s.values, -c, atol=1e-12)

    def test_sinusoid_self_refinement(self):
        th = scalar(0.5, 1.0, 2.0)
        P = lc.care_solve(th.A, th.B, th.Q, [[1.0]])
        errs = []
        for h in (0.1, 0.05):
            t = np.arange(0, 10 + 1e-9, h)
            coarse = mf.solve_offset(th, P, [[1.0]], signal(np.sin(t), h))
            tf = np.arange(0, 10 + 1e-9, h / 10)
            fine = mf.solve_offset(th, P, [[1.0]], signal(np.sin(tf), h / 10))
            errs.append(np.max(np.abs(coarse.values[:, 0] - fine.at(t)[:, 0])))
        assert errs[0] < 0.1 ** 2
        assert errs[1] < errs[0] / 3  # at least second order


class TestMean:
    def test_zero(self):
        s = mf.OffsetTrajectory(0.01 * np.arange(301), np.zeros((301, 1)))
        x = mf.solve_agent_mean(unit_theta(), [[1.0]], [[1.0]], s, [0.0])
        assert np.all(x == 0.0)

    def test_homogeneous(self):
        t = 0.01 * np.arange(301)
        s = mf.OffsetTrajectory(t, np.zeros((301, 1)))
        x = mf.solve_agent_mean(unit_theta(), [[1.0]], [[1.0]], s, [2.0])
        assert np.allclose(x[:, 0], 2.0 * np.exp(-t), atol=1e-9)

    def test_constant_offset_variation_of_constants(self):
        th = ThetaParams([[0.2, 0.1], [0.0, 0.2]], np.eye(2), np.eye(2))
        R = np.eye(2)
        P = lc.care_solve(th.A, th.B, th.Q, R)
        Astar = lc.closed_loop(th.A, th.B, R, P)
        t = 0.01 * np.arange(501)
        sc = np.array([0.3, -0.8])
        x0 = np.array([1.0, -1.0])
        x = mf.solve_agent_mean(th, P, R, mf.OffsetTrajectory(t, np.tile(sc, (501, 1))), x0)
        f = -th.B @ th.B.T @ sc
        for k in (0, 100, 500):
            E = lc.expm(Astar, t[k])
            exact = E @ x0 + np.linalg.solve(Astar, (E - np.eye(2)) @ f)
            assert np.allclose(x[k], exact, atol=1e-9)


class TestFixedPoint:
    def test_decoupled_one_iteration(self):
        spec = CategoricalAtoms((unit_theta(),), [1.0], delta=0.0)
        coup = mf.CouplingSpec([[0.0]], [0.7], [3.0])
        sig = mf.solve_mf_system(spec, coup, [[1.0]], horizon=5.0)
        assert sig.info.iterations == 1
        assert np.allclose(sig.values, 0.7)

    def test_scalar_steady_state_linear_system(self):
        # frozen from oracles.scalar_steady_state(0, 1, 1, 1, 0.5, 2.0)
        s_bar, x_bar, x_star = -2.0, 2.0, 2.0
        assert np.allclose(oracles.scalar_steady_state(0, 1, 1, 1, 0.5, 2.0), [s_bar, x_bar, x_star])
        spec = CategoricalAtoms((unit_theta(),), [1.0], delta=0.0)
        coup = mf.CouplingSpec([[0.5]], [0.0], [2.0])
        xs, xb = mf.steady_state(spec, coup, [[1.0]])
        assert xs[0] == pytest.approx(x_star, abs=1e-12)
        assert xb[0, 0] == pytest.approx(x_bar, abs=1e-12)
        sig = mf.solve_mf_system(spec, coup, [[1.0]], horizon=20.0, x0=[x_bar], tol=1e-10)
        assert np.allclose(sig.values, x_star, atol=1e-6)

    def test_refinement_invariance(self, base_scenario):
        s = base_scenario
        a = mf.solve_mf_system(s.spec, s.coupling, s.R)
        b = mf.solve_mf_system(s.spec, s.coupling, s.R, horizon=2 * a.horizon, h=a.step / 2)
        t, v = a.interior(0.8)
        assert np.max(np.abs(b.at(t) - v)) < 1e-8

    def test_contraction_violation(self):
        spec = CategoricalAtoms((unit_theta(),), [1.0], delta=0.0)
        with pytest.raises(ContractionViolated):
            mf.solve_mf_system(spec, mf.CouplingSpec([[1.5]], [0.0], [1.0]), [[1.0]])

    def test_csv_roundtrip(self, tmp_path, scalar_scenario):
        s = scalar_scenario
        sig = mf.solve_mf_system(s.spec, s.coupling, s.R, horizon=5.0)
        sig.to_csv(tmp_path / "m.csv")
        back = mf.MassSignal.from_csv(tmp_path / "m.csv")
        assert np.array_equal(back.values, sig.values) and np.array_equal(back.t, sig.t)


def test_coupling_lipschitz():
    assert mf.CouplingSpec([[0.4, 0.1], [0.0, -0.3]], [1.0, 0.0], [0.0, 0.0]).check_lipschitz()
