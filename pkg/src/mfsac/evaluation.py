"""
Post-processing of runs: long-run-average costs, epsilon-Nash gaps against a
frozen-mass best response, adaptive/oracle cost comparisons and summary
metrics of identification and stability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import linalg_control as lc
from . import mf_solver as mf
from . import rng as rngmod
from .errors import GridMismatch, MissingRun
from .population import ThetaParams, sample_theta
from .simulation import RunArtifacts, Scenario, _advance, initial_states, run_scenario

# --------------------------------------------------------------------------
# costs


@dataclass(frozen=True)
class CostLedger:
    J: np.ndarray
    tracking: np.ndarray
    control: np.ndarray
    T: float
    window: tuple

    @classmethod
    def from_artifacts(cls, art: RunArtifacts) -> "CostLedger":
        cfg = art.config
        start = np.ceil(cfg.cost_skip * cfg.T / cfg.dt - 1e-9) * cfg.dt
        return cls(np.asarray(art.costs["J"]), np.asarray(art.costs["tracking"]),
                   np.asarray(art.costs["control"]), cfg.T, (float(start), cfg.T))


def lra_cost(t, x, u, mass, Q, R, skip: float = 0.2) -> float:
    """Time average of ``|x - m|_Q^2 + |u|_R^2`` over the last ``1 - skip`` of the grid.

    Uses the trapezoidal rule; all inputs are sampled on the common grid ``t``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(t.size, -1) if np.size(x) == t.size else np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(t.size, -1) if np.size(u) == t.size else np.asarray(u, dtype=float)
    mass = np.asarray(mass, dtype=float).reshape(t.size, -1) if np.size(mass) == t.size else np.asarray(mass, dtype=float)
    if not (x.shape[0] == u.shape[0] == mass.shape[0] == t.size) or x.shape != mass.shape:
        raise GridMismatch("trajectory, control and mass must share one time grid")
    if t.size < 2:
        raise GridMismatch("need at least two samples")
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    e = x - mass
    f = np.einsum("ti,ij,tj->t", e, Q, e) + np.einsum("ti,ij,tj->t", u, R, u)
    t0 = t[0] + skip * (t[-1] - t[0])
    keep = t >= t0 - 1e-12
    tt, ff = t[keep], f[keep]
    if tt.size < 2:
        raise GridMismatch("evaluation window holds fewer than two samples")
    return float(np.trapezoid(ff, tt) / (tt[-1] - tt[0]))


# --------------------------------------------------------------------------
# best response against the realized mass


def _mass_grid(mass_realized: np.ndarray) -> np.ndarray:
    """Step samples m(t_0..t_{L-1}) extended by one sample to close the grid."""
    return np.vstack([mass_realized, mass_realized[-1:]])


def frozen_mass_policy(theta: ThetaParams, R, mass_realized, dt: float):
    """Optimal tracking gains against a known tracked signal sampled every ``dt``.

    Returns ``(K, v)`` with ``u = -K x + v[j]`` at step ``j``.
    """
    R = np.atleast_2d(R)
    Pi = lc.care_solve(theta.A, theta.B, theta.Q, R)
    K = np.linalg.solve(R, theta.B.T @ Pi)
    Astar = theta.A - theta.B @ K
    s = mf.offsets_batch(Astar[None], theta.Q[None], _mass_grid(np.asarray(mass_realized, float)), dt)[0]
    v = -np.linalg.solve(R, theta.B.T @ s[:-1].T).T
    return K, v


def replay_agent(theta: ThetaParams, scen: Scenario, agent: int, K, v, mass_realized, seed=None):
    """Cost of one agent driven by ``u = -K x + v`` with its own noise record.

    The agent's plant increments and initial state are regenerated from the
    run's seed, so the replay shares the noise of the recorded run.
    """
    cfg = scen.config
    seed = cfg.seed if seed is None else seed
    L = mass_realized.shape[0]
    n, m = cfg.n, cfg.m
    x = initial_states(seed, agent + 1, n, cfg.x0_radius)[agent:agent + 1].copy()
    G = scen.noise.increment_factor(cfg.dt)
    g = rngmod.stream(seed, "plant", agent)
    steps = cfg.steps_per_epoch
    z = np.concatenate([g.standard_normal((steps, G.shape[1])) for _ in range(L // steps)], axis=0)
    noise = (z @ G.T)[None]
    v = np.asarray(v, dtype=float).reshape(1, L, m)
    track, ctrl, x2 = np.zeros(1), np.zeros(1), np.zeros(1)
    cost_from = int(np.ceil(cfg.cost_skip * cfg.T / cfg.dt - 1e-9))
    _advance(x, theta.A[None].copy(), theta.B[None].copy(), np.ascontiguousarray(np.asarray(K, float).reshape(1, m, n)),
             np.ascontiguousarray(v), np.ascontiguousarray(noise), scen.coupling,
             np.ascontiguousarray(mass_realized), np.zeros((L, n)), theta.Q[None].copy(), scen.R, cfg.dt,
             cost_from, track, ctrl, x2, blowup=np.inf)
    window = cfg.T - cost_from * cfg.dt
    return float((track[0] + ctrl[0]) / window)


def best_response_oracle(theta: ThetaParams, scen: Scenario, agent: int, mass_realized, seed=None):
    """Frozen-mass best response of ``agent`` and the cost it achieves."""
    K, v = frozen_mass_policy(theta, scen.R, mass_realized, scen.config.dt)
    return (K, v), replay_agent(theta, scen, agent, K, v, mass_realized, seed)


@dataclass
class NashGapReport:
    N: int
    agents: list
    J_played: np.ndarray
    J_best_response: np.ndarray
    mode: str = "adaptive"

    @property
    def gap(self) -> np.ndarray:
        return self.J_played - self.J_best_response

    @property
    def epsilon_observed(self) -> float:
        return float(np.max(self.gap))

    def rows(self):
        return [[self.N, a, jp, jb, jp - jb] for a, jp, jb in zip(self.agents, self.J_played, self.J_best_response)]


def probe_agents(N: int, count: int, seed: int) -> list:
    count = min(count, N)
    return sorted(rngmod.stream(seed, "probe", 1).choice(N, size=count, replace=False).tolist())


def nash_gap(scen: Scenario, probes: Optional[Sequence[int]] = None, mode: Optional[str] = None,
             artifacts: Optional[RunArtifacts] = None, n_probe: int = 5) -> NashGapReport:
    """Played cost versus frozen-mass best response for a few agents.

    Gaps keep their sign: the best response ignores the agent's own effect
    on the mass, so small negative values are possible at finite N.
    """
    from .config import with_sim

    if mode is not None and mode != scen.config.mode:
        scen = with_sim(scen, mode=mode)
    cfg = scen.config
    art = artifacts if artifacts is not None else run_scenario(scen)
    if probes is None:
        probes = probe_agents(cfg.N, n_probe, cfg.seed)
    thetas = art.thetas
    played, best = [], []
    for i in probes:
        _, jb = best_response_oracle(thetas[i], scen, i, art.mass_realized)
        played.append(float(art.costs["J"][i]))
        best.append(jb)
    return NashGapReport(cfg.N, list(probes), np.array(played), np.array(best), cfg.mode)


# --------------------------------------------------------------------------
# adaptive versus oracle costs


def relative_gaps(J_adaptive, J_oracle) -> np.ndarray:
    Ja, Jo = np.asarray(J_adaptive, float), np.asarray(J_oracle, float)
    if Ja.shape != Jo.shape:
        raise GridMismatch("cost vectors have different lengths")
    return np.abs(Ja - Jo) / np.abs(Jo)


@dataclass
class EqualCostRow:
    label: str
    N: int
    T: float
    median_abs_gap: float
    median_rel_gap: float
    n_agents: int


def equal_cost_report(runs: Mapping, labels: Optional[Sequence] = None) -> list:
    """One row per key of ``runs``; each value is ``{"adaptive": costs, "oracle": costs}``.

    ``costs`` may be :class:`RunArtifacts`, a :class:`CostLedger` or a list
    of either (pooled over replicate seeds).
    """
    rows = []
    for key in (labels if labels is not None else list(runs)):
        pair = runs.get(key)
        if pair is None or "adaptive" not in pair or "oracle" not in pair:
            raise MissingRun(f"adaptive and oracle runs are required for {key!r}")
        ad, orc = _as_list(pair["adaptive"]), _as_list(pair["oracle"])
        if len(ad) != len(orc):
            raise MissingRun(f"replicate counts differ for {key!r}")
        Ja = np.concatenate([_costs(a) for a in ad])
        Jo = np.concatenate([_costs(o) for o in orc])
        cfg = getattr(ad[0], "config", None)
        N = cfg.N if cfg is not None else len(Ja)
        if cfg is not None:
            T = cfg.T
        else:
            T = ad[0].T if isinstance(ad[0], CostLedger) else float("nan")
        rows.append(EqualCostRow(str(key), N, T, float(np.median(np.abs(Ja - Jo))),
                                 float(np.median(relative_gaps(Ja, Jo))), Ja.size))
    return rows


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _costs(obj) -> np.ndarray:
    if isinstance(obj, RunArtifacts):
        return np.asarray(obj.costs["J"], float)
    if isinstance(obj, (CostLedger, StoredRun)):
        return np.asarray(obj.J, float)
    return np.asarray(obj, float)


# --------------------------------------------------------------------------
# trajectory comparison


def trajectory_gap(rec_a, rec_b, t, frac: float = 0.5) -> np.ndarray:
    """Per-agent time average of ``|x_a - x_b|^2`` over the last ``frac`` of ``t``."""
    xa, xb = np.asarray(rec_a, float), np.asarray(rec_b, float)
    if xa.shape != xb.shape or xa.shape[0] != len(t):
        raise GridMismatch("recorded trajectories are not aligned")
    t = np.asarray(t, float)
    keep = t >= t[0] + (1 - frac) * (t[-1] - t[0]) - 1e-12
    d = np.sum((xa[keep] - xb[keep]) ** 2, axis=-1)
    return np.trapezoid(d, t[keep], axis=0) / (t[keep][-1] - t[keep][0])


# --------------------------------------------------------------------------
# summaries


def checkpoint_medians(art: RunArtifacts, fractions=(0.25, 0.5, 1.0), raw: bool = True) -> dict:
    """Median self-estimate error at the initial time and at fractions of the horizon."""
    err = art.self_err_raw if raw else art.self_err_proj
    E = err.shape[0] - 1
    out = {0.0: float(np.nanmedian(err[0]))}
    for f in fractions:
        out[float(f)] = float(np.nanmedian(err[int(round(f * E))]))
    return out


def stability_ratios(art: RunArtifacts) -> np.ndarray:
    """Per-agent ``avg |x|^2`` at T over its value at T/2."""
    return np.asarray(art.costs["x2_avg"]) / np.asarray(art.costs["x2_avg_half"])


def stability_fits(art: RunArtifacts, dt: float = 0.05, horizon: float = 10.0) -> dict:
    """Fitted ``|Phi(t, s)| <= beta e^{-rho (t - s)}`` for each recorded agent.

    The fundamental matrix is built from the piecewise-constant closed loops
    applied during the run, starting at the second epoch.
    """
    out = {}
    de = art.config.delta_re
    for i, loops in art.closed_loops.items():
        if len(loops) < 3:
            continue
        ts, norms = [0.0], [1.0]
        Phi = np.eye(loops[0].shape[0])
        t = 0.0
        for Acl in loops[1:]:
            step = lc.expm(Acl, dt)
            for _ in range(int(round(de / dt))):
                Phi = step @ Phi
                t += dt
                ts.append(t)
                norms.append(np.linalg.norm(Phi, 2))
                if t >= horizon:
                    break
            if t >= horizon:
                break
        out[i] = lc.fit_stability_bound(np.column_stack([ts, norms]))
    return out


@dataclass
class ConsistencySummary:
    checkpoints: dict
    zeta_err_final: float
    stability_min: float
    stability_max: float
    blowup: bool
    extra: dict = field(default_factory=dict)

    def lines(self) -> list:
        cp = ", ".join(f"t/T={k:g}: {v:.4g}" for k, v in self.checkpoints.items())
        return [
            f"median self-estimate error: {cp}",
            f"median distribution-parameter error at T: {self.zeta_err_final:.4g}",
            f"avg|x|^2 ratio T vs T/2: min {self.stability_min:.4g}, max {self.stability_max:.4g}",
            f"blow-up: {'yes' if self.blowup else 'no'}",
        ]


def consistency_summary(art: RunArtifacts) -> ConsistencySummary:
    r = stability_ratios(art)
    return ConsistencySummary(checkpoint_medians(art), float(np.nanmedian(art.zeta_err[-1])),
                              float(np.min(r)), float(np.max(r)), art.blowup_step >= 0)


# --------------------------------------------------------------------------
# artifacts on disk


@dataclass
class StoredRun:
    """The parts of a written run that the evaluations need."""

    path: Path
    scenario: Scenario
    J: np.ndarray
    mass_realized: np.ndarray
    thetas: list

    @property
    def config(self):
        return self.scenario.config


def load_run(path) -> StoredRun:
    from .config import parse_scenario

    path = Path(path)
    for name in ("config.json", "costs.csv", "mass_realized.csv"):
        if not (path / name).exists():
            raise MissingRun(f"{path}: missing {name}")
    scen = parse_scenario(json.loads((path / "config.json").read_text()), str(path / "config.json"), check=False)
    costs = np.loadtxt(path / "costs.csv", delimiter=",", skiprows=1, ndmin=2)
    mass = np.loadtxt(path / "mass_realized.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
    cfg = scen.config
    thetas = sample_theta(scen.spec, rngmod.stream(cfg.seed, "theta"), cfg.N)
    return StoredRun(path, scen, costs[:, 1], mass, thetas)


def nash_gap_stored(run: StoredRun, probes=None, n_probe: int = 5) -> NashGapReport:
    cfg = run.config
    if probes is None:
        probes = probe_agents(cfg.N, n_probe, cfg.seed)
    played, best = [], []
    for i in probes:
        _, jb = best_response_oracle(run.thetas[i], run.scenario, i, run.mass_realized)
        played.append(float(run.J[i]))
        best.append(jb)
    return NashGapReport(cfg.N, list(probes), np.array(played), np.array(best), cfg.mode)
