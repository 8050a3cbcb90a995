"""
Closed-loop population simulation under the adaptive mean-field law, the
complete-information baseline, or with one deviating agent.
"""
from __future__ import annotations

import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, kernels
from . import identification as ident
from . import linalg_control as lc
from . import mf_solver as mf
from . import rng as rngmod
from .errors import InvalidSpec, NonFinite, SingularBhat, StaleEstimates
from .population import (
    CategoricalAtoms,
    DistributionSpec,
    NoiseSpec,
    ThetaParams,
    ThetaSet,
    TruncatedGaussian1D,
    project_theta,
    quadrature_nodes,
    sample_theta,
)

MODES = ("adaptive", "oracle", "deviation")


@dataclass
class SimConfig:
    N: int
    n: int
    m: int
    r: int
    dt: float = 1e-3
    T: float = 100.0
    alpha: float = 0.5
    delta_re: float = 1.0
    seed: int = 0
    mode: str = "adaptive"
    h_mf: float = 1e-2
    mf_tol: float = 1e-8
    mf_horizon: Optional[float] = None
    cost_skip: float = 0.2
    pcpi: bool = True
    record_agents: int = 10
    record_every: float = 0.1
    x0_radius: float = 10.0
    blowup: float = 1e8
    deviator: int = 0
    deviation_gain: Optional[list] = None
    deviation_base: str = "adaptive"
    cost_id_start: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpec(f"mode must be one of {MODES}")
        if self.deviation_base not in ("adaptive", "oracle"):
            raise InvalidSpec("deviation_base must be adaptive or oracle")
        if self.dt <= 0 or self.T <= 0 or self.delta_re <= 0:
            raise InvalidSpec("dt, T and delta_re must be positive")
        if self.T < 10 * self.delta_re - 1e-12:
            raise InvalidSpec("T must be at least 10 re-estimation epochs")
        if self.N < 1:
            raise InvalidSpec("N must be positive")
        if not 0 < self.alpha < 1:
            raise InvalidSpec("alpha must lie in (0, 1)")
        for name, val in (("delta_re", self.delta_re), ("1", 1.0), ("T", self.T), ("record_every", self.record_every)):
            k = val / self.dt
            if abs(k - round(k)) > 1e-6:
                raise InvalidSpec(f"{name} must be a whole number of time steps")
        if abs(self.T / self.delta_re - round(self.T / self.delta_re)) > 1e-9:
            raise InvalidSpec("T must be a whole number of epochs")
        spe = round(self.delta_re / self.dt)
        if spe % max(1, round(self.record_every / self.dt)) != 0:
            raise InvalidSpec("record_every must divide delta_re")

    @property
    def steps_per_epoch(self) -> int:
        return int(round(self.delta_re / self.dt))

    @property
    def n_epochs(self) -> int:
        return int(round(self.T / self.delta_re))

    @property
    def effective_mode(self) -> str:
        return self.deviation_base if self.mode == "deviation" else self.mode


@dataclass
class Scenario:
    spec: DistributionSpec
    theta_set: ThetaSet
    noise: NoiseSpec
    coupling: mf.CouplingSpec
    R: np.ndarray
    config: SimConfig
    name: str = "scenario"


@dataclass(frozen=True)
class ObservationGraph:
    obs: np.ndarray  # (N, n0) observed ids per agent
    n0: int


def observation_count(N: int, alpha: float) -> int:
    return min(int(math.floor(N**alpha + 1e-12)), N - 1)


def build_observation_graph(N: int, alpha: float, seed: int) -> ObservationGraph:
    """Each agent observes ``floor(N^alpha)`` others drawn without replacement."""
    if N < 2:
        raise InvalidSpec("an observation graph needs at least two agents")
    n0 = observation_count(N, alpha)
    obs = np.empty((N, n0), dtype=np.int64)
    for i in range(N):
        pick = rngmod.stream(seed, "obs", i).choice(N - 1, size=n0, replace=False)
        obs[i] = np.where(pick >= i, pick + 1, pick)
    return ObservationGraph(obs, n0)


# --------------------------------------------------------------------------
# single-agent and single-step building blocks


@dataclass
class AgentRuntime:
    """Live control-relevant state of one agent."""

    id: int
    theta_true: ThetaParams
    x: np.ndarray
    R: np.ndarray
    B_hat: Optional[np.ndarray] = None
    Pi_hat: Optional[np.ndarray] = None
    s_hat: Optional[Callable] = None
    dither_fn: Optional[Callable] = None
    zeta_hat: Optional[np.ndarray] = None


def control_mfsac(agent: AgentRuntime, t: float) -> np.ndarray:
    """Certainty-equivalence control ``-R^-1 B'(Pi x + s(t))`` plus dither."""
    if agent.B_hat is None or agent.Pi_hat is None or agent.s_hat is None:
        raise StaleEstimates(f"agent {agent.id} has no current estimates")
    R = np.atleast_2d(agent.R)
    s = agent.s_hat(t) if callable(agent.s_hat) else agent.s_hat.at(t)
    u = -np.linalg.solve(R, agent.B_hat.T @ (agent.Pi_hat @ agent.x + np.ravel(s)))
    if agent.dither_fn is not None:
        k = int(np.floor(t + 1e-12))
        u = u + agent.dither_fn(k, t - k)
    if not np.all(np.isfinite(u)):
        raise NonFinite("control is not finite")
    return u


@dataclass
class World:
    """Arrays for a population step: true dynamics, feedback and state."""

    x: np.ndarray  # (N, n)
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray  # (N, m, n) feedback gains, u = -K x + v
    v: np.ndarray  # (N, m) feedforward
    G: np.ndarray  # noise factor, D dW = G z
    coupling: mf.CouplingSpec
    t: float = 0.0
    cost_track: np.ndarray = None
    cost_ctrl: np.ndarray = None

    def __post_init__(self):
        N = self.x.shape[0]
        if self.cost_track is None:
            self.cost_track = np.zeros(N)
        if self.cost_ctrl is None:
            self.cost_ctrl = np.zeros(N)


def step_population(world: World, dt: float, z: np.ndarray) -> World:
    """One Euler-Maruyama step in place; ``z`` holds standard normals (N, r)."""
    N, n = world.x.shape
    m = world.v.shape[1]
    noise = (z @ world.G.T)[:, None, :]
    mass = np.zeros((1, n))
    _advance(
        world.x, world.A, world.B, world.K, world.v[:, None, :], noise, world.coupling,
        None, mass, world.Q, world.R, dt, 0, world.cost_track, world.cost_ctrl, np.zeros(N),
        blowup=1e8,
    )
    world.t += dt
    return world


def _advance(x, A, B, K, v, noise, coupling, mass_in, mass_out, Q, R, dt, cost_from,
             cost_track, cost_ctrl, x2_int, dyn=None, cost=None, rec_every=0, rec=None,
             blowup=1e8, backend=None):
    """Thin wrapper supplying empty buffers for the optional kernel features."""
    N, n = x.shape
    m = v.shape[2]
    L = v.shape[1]
    impl = kernels if backend is None else backend
    if dyn is None:
        dyn = (0, np.zeros((N, 1, 1)), np.zeros((N, 1, 1)), np.zeros(N))
    if cost is None:
        cost = (np.zeros(0, dtype=np.int64), np.zeros((0, n, m)), np.zeros((0, n + 1, n + 1)),
                np.zeros((0, n + 1, n)), np.zeros(0))
    if rec is None:
        rec = (np.zeros((0, N, n)), np.zeros((0, N, m)))
    if mass_in is None:
        mass_in = np.zeros((0, n))
    hit = impl.advance_block(
        x, A, B, K, v, noise,
        coupling.Gamma, coupling.c, coupling.eta, mass_in, mass_out,
        Q, np.atleast_2d(R), float(dt), int(cost_from),
        cost_track, cost_ctrl, x2_int,
        int(dyn[0]), dyn[1], dyn[2], dyn[3],
        cost[0], cost[1], cost[2], cost[3], cost[4],
        int(rec_every), rec[0], rec[1], float(blowup),
    )
    return int(hit)


def initial_states(seed: int, N: int, n: int, radius: float) -> np.ndarray:
    """Standard normal initial states, redrawn until inside ``radius``."""
    x0 = np.empty((N, n))
    for i in range(N):
        g = rngmod.stream(seed, "x0", i)
        while True:
            z = g.standard_normal(n)
            if np.linalg.norm(z) <= radius:
                break
        x0[i] = z
    return x0


# --------------------------------------------------------------------------
# full run


@dataclass
class RunArtifacts:
    out_dir: Optional[Path]
    config: SimConfig
    thetas: list
    obs: Optional[ObservationGraph]
    epoch_times: np.ndarray
    self_err_raw: np.ndarray  # (epochs+1, N)
    self_err_proj: np.ndarray
    zeta_err: np.ndarray
    zeta_hat: np.ndarray  # (epochs+1, N, dim)
    costs: dict
    x2_epoch: np.ndarray  # (epochs+1, N) cumulative int ||x||^2
    closed_loops: dict  # agent -> list of applied closed-loop matrices per epoch
    mass_realized: np.ndarray  # (steps, n)
    recorded: list
    blowup_step: int = -1
    wall_time: float = 0.0
    mf_solves: int = 0
    # median ||Q_hat - Q|| over the cost-identified agents; NaN when PCPI is off
    cost_err: Optional[np.ndarray] = None


def _proj_key(v: np.ndarray) -> bytes:
    return np.ascontiguousarray(v).tobytes()


def _zeta_key(z) -> tuple:
    return tuple(np.round(np.asarray(z, dtype=float), 9).tolist())


def _mean_A(spec: DistributionSpec, zeta) -> np.ndarray:
    nodes = quadrature_nodes(spec.with_zeta(zeta))
    return sum(w * th.A for th, w in nodes)


class _Runner:
    """Holds the evolving state of one run; see :func:`run_scenario`."""

    def __init__(self, scen: Scenario, out_dir=None, backend=None):
        self.s = scen
        self.cfg = cfg = scen.config
        self.backend = backend
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.R = np.atleast_2d(np.asarray(scen.R, dtype=float))
        self.Rinv = np.linalg.inv(self.R)
        N, n, m = cfg.N, cfg.n, cfg.m
        self.mode = cfg.effective_mode
        if self.mode == "adaptive" and N < 2:
            raise InvalidSpec("the adaptive law needs at least two agents")

        self.thetas = sample_theta(scen.spec, rngmod.stream(cfg.seed, "theta"), N)
        self.A = np.stack([th.A for th in self.thetas])
        self.B = np.stack([th.B for th in self.thetas])
        self.Q = np.stack([th.Q for th in self.thetas])
        self.x = initial_states(cfg.seed, N, n, cfg.x0_radius)
        self.G = scen.noise.increment_factor(cfg.dt)
        self.plant = rngmod.StreamBank(cfg.seed, "plant", range(N))
        self.dither_bank = rngmod.StreamBank(cfg.seed, "dither", range(N))
        self.dither_carry = np.zeros((N, m))
        self.obs = build_observation_graph(N, cfg.alpha, cfg.seed) if N >= 2 else None
        self.pcpi = bool(cfg.pcpi and n == m and scen.theta_set.invertible_B_margin is not None)

        rec_n = min(cfg.record_agents, N) if cfg.record_agents >= 0 else N
        picker = rngmod.stream(cfg.seed, "probe", 0)
        self.recorded = sorted(picker.choice(N, size=rec_n, replace=False).tolist()) if rec_n < N else list(range(N))

        p = n + m
        self.info_d = np.broadcast_to(np.eye(p) / ident.KAPPA, (N, p, p)).copy()
        self.cross_d = np.zeros((N, p, n))
        self.r_d = np.full(N, 1.0 / ident.KAPPA)
        if self.obs is not None:
            self.observed = np.unique(self.obs.obs)
        else:
            self.observed = np.zeros(0, dtype=np.int64)
        Nc = self.observed.size if (self.pcpi and self.mode == "adaptive") else 0
        self.cost_idx = self.observed[:Nc].astype(np.int64) if Nc else np.zeros(0, dtype=np.int64)
        self.info_c = np.broadcast_to(np.eye(n + 1) / ident.KAPPA, (Nc, n + 1, n + 1)).copy()
        self.cross_c = np.zeros((Nc, n + 1, n))
        self.r_c = np.full(Nc, 1.0 / ident.KAPPA)
        self.W = np.zeros((Nc, n, m))

        self.mf_cache: dict = {}
        self.proj_cache: dict = {}
        self.ric_cache: dict = {}
        self.mf_solves = 0
        self.mf_horizon = cfg.mf_horizon or mf.default_horizon(scen.spec, self.R, cfg.h_mf)
        Lmf = int(round(self.mf_horizon / cfg.h_mf))
        self.t_mf = np.arange(Lmf + 1) * cfg.h_mf

        self.true_zeta = np.asarray(scen.spec.zeta, dtype=float)
        self.true_meanA = _mean_A(scen.spec, self.true_zeta)
        self.pop_rows: list = []
        self.est_rows: list = []

    # ---- estimation ------------------------------------------------------

    def mass(self, zeta) -> mf.MassSignal:
        key = _zeta_key(zeta)
        if key not in self.mf_cache:
            spec = self.s.spec.with_zeta(np.asarray(key))
            self.mf_cache[key] = mf.solve_mf_system(
                spec, self.s.coupling, self.R, horizon=self.mf_horizon, tol=self.cfg.mf_tol,
                h=self.cfg.h_mf, check_contraction=False,
            )
            self.mf_solves += 1
        return self.mf_cache[key]

    def project(self, A, B, Q, known_Q: bool) -> ThetaParams:
        n, m = self.cfg.n, self.cfg.m
        raw = ThetaParams(A, B, Q)
        key = (_proj_key(raw.vec), known_Q)
        if key not in self.proj_cache:
            if len(self.proj_cache) > 200_000:
                self.proj_cache.clear()
            self.proj_cache[key] = project_theta(raw, self.s.theta_set, known_Q=Q if known_Q else None)
        return self.proj_cache[key]

    def riccati(self, th: ThetaParams) -> np.ndarray:
        key = _proj_key(th.vec)
        if key not in self.ric_cache:
            if len(self.ric_cache) > 200_000:
                self.ric_cache.clear()
            self.ric_cache[key] = lc.care_solve(th.A, th.B, th.Q, self.R)
        return self.ric_cache[key]

    def estimates(self):
        """Raw and projected self estimates plus each agent's distribution estimate."""
        cfg, N, n = self.cfg, self.cfg.N, self.cfg.n
        if self.mode == "oracle":
            self.last_cost_err = np.nan
            zeta = np.broadcast_to(self.true_zeta, (N,) + self.true_zeta.shape).copy()
            return list(self.thetas), list(self.thetas), zeta
        U = np.linalg.solve(self.info_d, self.cross_d)  # (N, p, n)
        A_raw = np.swapaxes(U[:, :n, :], 1, 2)
        B_raw = np.swapaxes(U[:, n:, :], 1, 2)
        raw = [ThetaParams(A_raw[i], B_raw[i], self.Q[i]) for i in range(N)]
        proj = [self.project(A_raw[i], B_raw[i], self.Q[i], True) for i in range(N)]

        spec = self.s.spec
        pop = {}
        qerr = []
        mask = None
        if not self.pcpi:
            mask = np.zeros(2 * n * n + n * cfg.m, dtype=bool)
            mask[: n * n + n * cfg.m] = True
            Qnom = 0.5 * (self.s.theta_set.box_lo + self.s.theta_set.box_hi)[n * n + n * cfg.m:].reshape(n, n)
        for c, j in enumerate(self.observed):
            if self.pcpi:
                Ups = np.linalg.solve(self.info_c[c], self.cross_c[c]).T
                Qhat = ident.recover_Q(A_raw[j], B_raw[j], Ups[:, :n], self.R)
                pop[j] = self.project(A_raw[j], B_raw[j], Qhat, False)
                qerr.append(np.linalg.norm(Qhat - self.thetas[j].Q))
            else:
                pop[j] = self.project(A_raw[j], B_raw[j], Qnom, False)
        if self.pcpi:
            for c, j in enumerate(self.observed):
                try:
                    self.W[c] = ident.cost_measurement_map(pop[j].B, self.R)
                except SingularBhat:
                    pass
        self.last_cost_err = float(np.median(qerr)) if qerr else np.nan

        if isinstance(spec, CategoricalAtoms):
            atom = np.zeros(N, dtype=np.int64)
            if self.observed.size:
                atom[self.observed] = ident.nearest_atoms(spec, [pop[j] for j in self.observed], mask)
            zeta = np.empty((N, spec.K))
            for i in range(N):
                counts = np.bincount(atom[self.obs.obs[i]], minlength=spec.K)
                zeta[i] = ident.categorical_mle(counts, spec.delta)
        else:
            zeta = np.empty((N, 2))
            for i in range(N):
                zeta[i] = ident.mle_estimate(spec, [pop[j] for j in self.obs.obs[i]], mask).zeta_hat
        return raw, proj, zeta

    # ---- feedforward -----------------------------------------------------

    def feedforward(self, t_e: float, proj, zeta, Astar):
        """Offsets on the epoch's step grid, shape (N, steps, n)."""
        cfg, N, n = self.cfg, self.cfg.N, self.cfg.n
        steps = cfg.steps_per_epoch
        tj = t_e + cfg.dt * np.arange(steps)
        h = cfg.h_mf
        Lmf = self.t_mf.size - 1
        keys = [_zeta_key(z) for z in zeta]
        if t_e >= self.t_mf[-1] - 1e-12:
            xs_end = np.stack([self.mass(np.asarray(k)).values[-1] for k in keys])
            s_ss = mf.steady_offset(Astar, self.Q, xs_end)
            return np.broadcast_to(s_ss[:, None, :], (N, steps, n))
        l0 = int(np.floor(t_e / h + 1e-9))
        xs = np.stack([self.mass(np.asarray(k)).values[l0:] for k in keys])
        s = mf.offsets_batch(Astar, self.Q, xs, h)  # (N, Lw+1, n)
        Lw = s.shape[1] - 1
        pos = np.clip((tj - self.t_mf[l0]) / h, 0.0, Lw)
        i0 = np.minimum(np.floor(pos).astype(int), Lw - 1)
        w = (pos - i0)[None, :, None]
        return s[:, i0] * (1 - w) + s[:, i0 + 1] * w

    # ---- main loop -------------------------------------------------------

    def run(self) -> RunArtifacts:
        cfg, N, n, m = self.cfg, self.cfg.N, self.cfg.n, self.cfg.m
        t_start = time.perf_counter()
        E, steps = cfg.n_epochs, cfg.steps_per_epoch
        total_steps = E * steps
        cost_from = int(math.ceil(cfg.cost_skip * cfg.T / cfg.dt - 1e-9))
        rec_every = int(round(cfg.record_every / cfg.dt))
        dim_z = np.asarray(self.s.spec.zeta).size

        self.cost_track = np.zeros(N)
        self.cost_ctrl = np.zeros(N)
        self.x2 = np.zeros(N)
        mass_realized = np.zeros((total_steps, n))
        err_raw = np.full((E + 1, N), np.nan)
        err_proj = np.full((E + 1, N), np.nan)
        zerr = np.full((E + 1, N), np.nan)
        zhat = np.full((E + 1, N, dim_z), np.nan)
        qerr = np.full(E + 1, np.nan)
        x2_epoch = np.zeros((E + 1, N))
        loops = {i: [] for i in self.recorded}
        traj_rows = []
        true_vec = [th.vec for th in self.thetas]
        blow = -1

        for e in range(E + 1):
            t_e = e * cfg.delta_re
            raw, proj, zeta = self.estimates()
            for i in range(N):
                err_raw[e, i] = np.linalg.norm(raw[i].vec - true_vec[i])
                err_proj[e, i] = np.linalg.norm(proj[i].vec - true_vec[i])
            zhat[e] = zeta
            qerr[e] = self.last_cost_err
            zerr[e] = np.linalg.norm(zeta - self.true_zeta, axis=1)
            x2_epoch[e] = self.x2
            self._log_estimates(t_e, raw, proj, zeta)
            if e == E:
                break

            Pis = np.stack([self.riccati(th) for th in proj])
            Bh = np.stack([th.B for th in proj])
            Ah = np.stack([th.A for th in proj])
            K = np.einsum("ab,ikb,ikn->ian", self.Rinv, Bh, Pis)  # R^-1 B' Pi
            Astar = Ah - np.einsum("ink,ikm->inm", Bh, K)
            s = self.feedforward(t_e, proj, zeta, Astar)
            v = -np.einsum("ab,ikb,ilk->ila", self.Rinv, Bh, s)
            if self.mode == "adaptive":
                z = self.dither_bank.normal(steps, m)
                d, self.dither_carry = ident.dither_path(t_e, cfg.dt, z, self.dither_carry)
                v = v + d
            if cfg.mode == "deviation":
                dv = cfg.deviator
                gain = np.zeros((m, n)) if cfg.deviation_gain is None else np.asarray(cfg.deviation_gain, dtype=float).reshape(m, n)
                K = K.copy()
                K[dv] = gain
                v = np.array(v)
                v[dv] = 0.0
            for i in self.recorded:
                loops[i].append(self.A[i] - self.B[i] @ K[i])

            noise = self.plant.normal(steps, self.G.shape[1]) @ self.G.T
            nrec = steps // rec_every if rec_every > 0 else 0
            rec = (np.zeros((nrec, N, n)), np.zeros((nrec, N, m)))
            adaptive = self.mode == "adaptive"
            dyn = (1 if adaptive else 0, self.info_d, self.cross_d, self.r_d)
            cost = None
            if adaptive and self.cost_idx.size and t_e >= cfg.cost_id_start - 1e-12:
                cost = (self.cost_idx, self.W, self.info_c, self.cross_c, self.r_c)
            mass_blk = mass_realized[e * steps:(e + 1) * steps]
            hit = _advance(
                self.x, self.A, self.B, np.ascontiguousarray(K), np.ascontiguousarray(v),
                np.ascontiguousarray(noise), self.s.coupling, None, mass_blk, self.Q, self.R, cfg.dt,
                max(0, cost_from - e * steps), self.cost_track, self.cost_ctrl, self.x2,
                dyn=dyn, cost=cost, rec_every=rec_every, rec=rec, blowup=cfg.blowup,
                backend=self.backend,
            )
            for k in range(nrec):
                tk = t_e + k * cfg.record_every
                for i in self.recorded:
                    traj_rows.append([tk, i, *rec[0][k, i], *rec[1][k, i]])
            if hit >= 0:
                blow = e * steps + hit
                break

        window = cfg.T - cost_from * cfg.dt
        costs = {
            "J": (self.cost_track + self.cost_ctrl) / window,
            "tracking": self.cost_track / window,
            "control": self.cost_ctrl / window,
            "x2_avg": self.x2 / cfg.T,
            "x2_avg_half": x2_epoch[E // 2] / (E // 2 * cfg.delta_re) if E >= 2 else self.x2 / cfg.T,
        }
        art = RunArtifacts(
            self.out_dir, cfg, self.thetas, self.obs, np.arange(E + 1) * cfg.delta_re,
            err_raw, err_proj, zerr, zhat, costs, x2_epoch, loops, mass_realized,
            self.recorded, blow, time.perf_counter() - t_start, self.mf_solves, qerr,
        )
        if self.out_dir is not None:
            self._write(art, traj_rows)
        if blow >= 0:
            raise NonFinite(f"state exceeded {cfg.blowup:g} at step {blow}")
        return art

    def _log_estimates(self, t_e, raw, proj, zeta):
        spec = self.s.spec
        true_norm = np.linalg.norm(self.true_meanA, 2)
        for i in self.recorded:
            th = self.thetas[i]
            self.est_rows.append([
                t_e, i,
                np.linalg.norm(raw[i].vec - th.vec), np.linalg.norm(proj[i].vec - th.vec),
                np.linalg.norm(proj[i].A, 2), np.linalg.norm(th.A, 2),
                np.linalg.norm(zeta[i] - self.true_zeta),
            ])
            mA = _mean_A(spec, zeta[i])
            self.pop_rows.append([t_e, i, *zeta[i], np.linalg.norm(mA, 2), true_norm,
                                  np.linalg.norm(zeta[i] - self.true_zeta)])

    def _write(self, art: RunArtifacts, traj_rows):
        d = self.out_dir
        d.mkdir(parents=True, exist_ok=True)
        cfg, n, m = self.cfg, self.cfg.n, self.cfg.m
        from .config import scenario_to_dict

        with open(d / "config.json", "w") as fh:
            json.dump(scenario_to_dict(self.s), fh, indent=2, sort_keys=True)
        _write_csv(d / "trajectories.csv", ["t", "agent_id"] + [f"x_{k + 1}" for k in range(n)]
                   + [f"u_{k + 1}" for k in range(m)], traj_rows, int_cols=(1,))
        _write_csv(d / "estimates.csv", ["t", "agent_id", "theta_err_raw", "theta_err", "A_hat_norm",
                                         "A_true_norm", "zeta_err"], self.est_rows, int_cols=(1,))
        dz = np.asarray(self.s.spec.zeta).size
        _write_csv(d / "population_estimates.csv", ["t", "agent_id"] + [f"zeta_{k + 1}" for k in range(dz)]
                   + ["mean_A_hat_norm", "mean_A_true_norm", "zeta_err"], self.pop_rows, int_cols=(1,))
        c = art.costs
        rows = [[i, c["J"][i], c["tracking"][i], c["control"][i], c["x2_avg_half"][i], c["x2_avg"][i]]
                for i in range(cfg.N)]
        _write_csv(d / "costs.csv", ["agent_id", "J", "tracking", "control", "x2_avg_half", "x2_avg"], rows,
                   int_cols=(0,))
        summary = [[t, float(np.nanmedian(a)), float(np.nanmedian(b)), float(np.nanmedian(z)), q]
                   for t, a, b, z, q in zip(art.epoch_times, art.self_err_raw, art.self_err_proj, art.zeta_err,
                                            art.cost_err)]
        _write_csv(d / "estimate_summary.csv", ["t", "median_theta_err_raw", "median_theta_err", "median_zeta_err",
                                                "median_Q_hat_err"], summary)
        ms = self.mass(self.true_zeta)
        ms.to_csv(d / "mass_signal.csv")
        tgrid = cfg.dt * np.arange(art.mass_realized.shape[0])
        _write_csv(d / "mass_realized.csv", ["t"] + [f"m_{k + 1}" for k in range(n)],
                   np.column_stack([tgrid, art.mass_realized]))
        meta = {
            "seed": cfg.seed,
            "mode": cfg.mode,
            "backend": kernels.BACKEND if self.backend is None else getattr(self.backend, "__name__", "custom"),
            "mfsac": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "blowup_step": art.blowup_step,
            "mf_solves": art.mf_solves,
            "n_observed": self.obs.n0 if self.obs is not None else 0,
            "recorded_agents": self.recorded,
        }
        with open(d / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows, int_cols=()):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(int(v)) if k in int_cols else _fmt(v) for k, v in enumerate(row)) + "\n")


def run_scenario(scen: Scenario, out_dir=None, backend=None) -> RunArtifacts:
    """Simulate ``scen`` and, if ``out_dir`` is given, write the artifact files.

    On a state blow-up the artifacts gathered so far are flushed before
    :class:`NonFinite` is raised.
    """
    return _Runner(scen, out_dir, backend).run()
