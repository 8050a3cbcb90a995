import numpy as np
import pytest

from mfsac import evaluation as ev
from mfsac.errors import GridMismatch, MissingRun
from mfsac.population import ThetaParams
from mfsac.simulation import run_scenario

import oracles
from helpers import parse_scenario, scalar_dict, scalar_single, variant


class TestLraCost:
    def test_perfect_tracking(self):
        t = np.linspace(0, 10, 101)
        m = np.sin(t)
        assert ev.lra_cost(t, m, np.zeros_like(t), m, [[2.0]], [[3.0]]) == 0.0

    def test_constant_arithmetic(self):
        t = np.linspace(0, 10, 101)
        assert ev.lra_cost(t, np.ones_like(t), np.ones_like(t), np.zeros_like(t), [[2.0]], [[3.0]]) == pytest.approx(5.0)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            ev.lra_cost(np.arange(5.0), np.zeros(4), np.zeros(5), np.zeros(5), [[1.0]], [[1.0]])

    def test_nonnegative_components(self, scalar_scenario):
        art = run_scenario(variant("scalar_two_atom.json", N=10, T=10.0, mode="oracle"))
        led = ev.CostLedger.from_artifacts(art)
        assert np.all(led.tracking >= 0) and np.all(led.control >= 0)
        assert np.allclose(led.J, led.tracking + led.control, rtol=1e-12)


class TestBestResponse:
    def test_decoupled_gap_vanishes(self):
        scen = scalar_single(a=0.5, q=2.0, c=1.0, d=0.5)
        rep = ev.nash_gap(scen, probes=[0])
        assert abs(rep.gap[0]) < 1e-10

    def test_noise_free_optimal_agent(self):
        scen = scalar_single(a=-0.5, q=1.0, c=-2.0, d=0.0)
        rep = ev.nash_gap(scen, probes=[0])
        assert abs(rep.gap[0]) < 1e-10

    def test_constant_mass_static_tracking(self):
        a, b, q, c = 0.5, 1.0, 2.0, 1.2
        scen = scalar_single(a=a, b=b, q=q, d=0.0, T=40.0)
        L = int(round(scen.config.T / scen.config.dt))
        th = ThetaParams([[a]], [[b]], [[q]])
        _, J = ev.best_response_oracle(th, scen, 0, np.full((L, 1), c))
        assert J == pytest.approx(oracles.scalar_tracking_cost(a, b, q, 1.0, c), rel=1e-3)

    def test_deviation_is_not_profitable(self):
        data = scalar_dict(a=-1.0, q=2.0, d=0.5, gamma=0.5, eta=2.0, N=20, T=40.0, mode="adaptive", seed=4)
        played = run_scenario(parse_scenario(data))
        rep = ev.nash_gap(parse_scenario(data), artifacts=played, probes=[0])
        data["sim"].update(mode="deviation", deviator=0, deviation_gain=[[0.0]])
        dev = run_scenario(parse_scenario(data))
        assert dev.costs["J"][0] >= played.costs["J"][0] - max(rep.epsilon_observed, 0.0)


class TestEqualCost:
    def test_self_comparison_is_zero(self):
        a = run_scenario(variant("scalar_two_atom.json", N=10, T=10.0, mode="oracle"))
        b = run_scenario(variant("scalar_two_atom.json", N=10, T=10.0, mode="oracle"))
        rows = ev.equal_cost_report({"self": {"adaptive": a, "oracle": b}})
        assert rows[0].median_abs_gap == 0.0 and rows[0].median_rel_gap == 0.0

    def test_missing_run(self):
        with pytest.raises(MissingRun):
            ev.equal_cost_report({"x": {"adaptive": np.ones(3)}})

    def test_pooled_replicates(self):
        rows = ev.equal_cost_report({"p": {"adaptive": [np.array([1.1, 2.0]), np.array([3.0])],
                                           "oracle": [np.array([1.0, 2.0]), np.array([2.0])]}})
        assert rows[0].n_agents == 3
        assert rows[0].median_rel_gap == pytest.approx(0.1)


def test_trajectory_gap_window():
    t = np.linspace(0, 10, 101)
    a = np.zeros((101, 2, 1))
    b = np.zeros((101, 2, 1))
    b[:50, 0, 0] = 5.0  # only in the first half
    b[:, 1, 0] = 1.0
    g = ev.trajectory_gap(a, b, t)
    assert g[0] == 0.0 and g[1] == pytest.approx(1.0)


def test_base_closed_loop_decays():
    art = run_scenario(variant("base.json", N=20, T=20.0, dt=0.01))
    fits = ev.stability_fits(art)
    assert fits and all(f.decay_rate > 0 for f in fits.values())
