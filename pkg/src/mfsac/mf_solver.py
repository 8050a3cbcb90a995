"""
Mean-field fixed point: offset functions, type-conditional means and the
mass tracking signal, all on a truncated uniform grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from . import linalg_control as lc
from .errors import ContractionViolated, MaxIterations, NonFinite, NotHurwitz
from .population import DistributionSpec, ThetaParams, contraction_constant, quadrature_nodes


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Affine coupling ``m(x) = Gamma x + c`` and offset ``eta``."""

    Gamma: np.ndarray
    c: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        n = G.shape[0]
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "c", np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy())
        object.__setattr__(self, "eta", np.broadcast_to(np.asarray(self.eta, dtype=float), (n,)).copy())

    @property
    def gamma(self) -> float:
        return float(np.linalg.norm(self.Gamma, 2))

    def m(self, x):
        return np.asarray(x) @ self.Gamma.T + self.c

    def check_lipschitz(self, trials: int = 1000, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        n = self.Gamma.shape[0]
        X, Y = rng.normal(size=(2, trials, n)) * 10
        lhs = np.linalg.norm(self.m(X) - self.m(Y), axis=1)
        rhs = self.gamma * np.linalg.norm(X - Y, axis=1)
        return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-12))


@dataclass
class MFDiagnostics:
    iterations: int
    gaps: list
    ratios: list
    contraction: Optional[float]
    horizon: float
    step: float


@dataclass(eq=False)
class MassSignal:
    """Sampled tracking signal ``x*`` on a uniform grid; held constant past the end."""

    t: np.ndarray
    values: np.ndarray
    zeta: Optional[np.ndarray] = None
    info: Optional[MFDiagnostics] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not np.all(np.isfinite(self.values)):
            raise NonFinite("mass signal has non-finite entries")

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def steady(self) -> np.ndarray:
        return self.values[-1]

    def at(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        out = np.stack([np.interp(tau, self.t, self.values[:, k]) for k in range(self.values.shape[1])], axis=-1)
        return out

    def interior(self, frac: float = 0.8):
        """Grid slice covering the central ``frac`` of the horizon."""
        T0, T1 = self.t[0], self.t[-1]
        pad = 0.5 * (1 - frac) * (T1 - T0)
        mask = (self.t >= T0 + pad - 1e-12) & (self.t <= T1 - pad + 1e-12)
        return self.t[mask], self.values[mask]

    def to_csv(self, path) -> None:
        n = self.values.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"xstar_{k + 1}" for k in range(n)])
            for t, row in zip(self.t, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "MassSignal":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


@dataclass(eq=False)
class OffsetTrajectory:
    t: np.ndarray
    values: np.ndarray

    def at(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return np.stack([np.interp(tau, self.t, self.values[:, k]) for k in range(self.values.shape[1])], axis=-1)


# --------------------------------------------------------------------------
# integration helpers


def rk4_coefficients(M, h: float):
    """Matrices ``(Phi, G0, Gm, G1)`` of one RK4 step of ``y' = M y + f``.

    ``y+ = Phi y + G0 f(t) + Gm f(t + h/2) + G1 f(t + h)``. ``M`` may carry
    leading batch axes.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    I = np.broadcast_to(np.eye(n), M.shape)
    P = h * M
    P2 = P @ P
    P3 = P2 @ P
    P4 = P3 @ P
    Phi = I + P + P2 / 2 + P3 / 6 + P4 / 24
    G0 = h / 6 * (I + P + P2 / 2 + P3 / 4)
    Gm = h / 6 * (4 * I + 2 * P + P2 / 2)
    G1 = h / 6 * I
    return Phi, G0, Gm, G1


def midpoints(f):
    """Cubic-interpolated midpoints of samples along axis -2.

    ``f`` has shape (..., L+1, n); returns (..., L, n).
    """
    f = np.asarray(f, dtype=float)
    L = f.shape[-2] - 1
    if L < 3:
        return 0.5 * (f[..., :-1, :] + f[..., 1:, :])
    mid = np.empty(f.shape[:-2] + (L, f.shape[-1]))
    mid[..., 1:-1, :] = (-f[..., :-3, :] + 9 * f[..., 1:-2, :] + 9 * f[..., 2:-1, :] - f[..., 3:, :]) / 16
    mid[..., 0, :] = (5 * f[..., 0, :] + 15 * f[..., 1, :] - 5 * f[..., 2, :] + f[..., 3, :]) / 16
    mid[..., -1, :] = (5 * f[..., -1, :] + 15 * f[..., -2, :] - 5 * f[..., -3, :] + f[..., -4, :]) / 16
    return mid


def integrate_linear(M, f, h: float, y0):
    """RK4 solution of ``y' = M y + f(t)`` on a uniform grid, batched.

    M: (K, n, n); f: (K, L+1, n) samples of the forcing; y0: (K, n).
    Returns (K, L+1, n).
    """
    Phi, G0, Gm, G1 = rk4_coefficients(M, h)
    fm = midpoints(f)
    c = (np.einsum("kij,klj->kli", G0, f[:, :-1]) + np.einsum("kij,klj->kli", Gm, fm)
         + (h / 6) * f[:, 1:])
    y = kernels.linear_recurrence(Phi, c, y0)
    if not np.all(np.isfinite(y)):
        raise NonFinite("linear ODE integration produced non-finite values")
    return y


def _check_hurwitz(Astar):
    ev = np.linalg.eigvals(Astar)
    if np.any(ev.real >= 0):
        raise NotHurwitz("closed-loop matrix is not Hurwitz")


def steady_offset(Astar, Q, xstar):
    """Constant ``s`` with ``0 = A*' s - Q x*``; batched over leading axes."""
    rhs = np.einsum("...ij,...j->...i", Q, xstar)
    return np.linalg.solve(np.swapaxes(Astar, -1, -2), rhs[..., None])[..., 0]


def offsets_batch(Astar, Q, xstar_values, h: float):
    """Backward offset integration for a batch of closed loops.

    Astar, Q: (K, n, n); xstar_values: (K, L+1, n) or (L+1, n) on a grid of
    step ``h``. Terminal value is the steady closure at the final sample.
    """
    Astar = np.asarray(Astar, dtype=float)
    Q = np.asarray(Q, dtype=float)
    K = Astar.shape[0]
    xs = np.asarray(xstar_values, dtype=float)
    if xs.ndim == 2:
        xs = np.broadcast_to(xs, (K,) + xs.shape)
    # reversed time sigma = T - tau turns the backward equation into a stable forward one
    forcing = -np.einsum("kij,klj->kli", Q, xs[:, ::-1])
    sT = steady_offset(Astar, Q, xs[:, -1])
    s_rev = integrate_linear(np.swapaxes(Astar, 1, 2), forcing, h, sT)
    return s_rev[:, ::-1]


def means_batch(Astar, S, s_values, h: float, x0):
    """Forward noiseless closed-loop means ``x' = A* x - S s``, batched."""
    forcing = -np.einsum("kij,klj->kli", S, s_values)
    return integrate_linear(Astar, forcing, h, x0)


def solve_offset(theta: ThetaParams, Pi, R, xstar: MassSignal) -> OffsetTrajectory:
    """Offset ``s_theta`` on the grid of ``xstar`` (backward, steady terminal closure)."""
    Astar = lc.closed_loop(theta.A, theta.B, R, Pi)
    _check_hurwitz(Astar)
    s = offsets_batch(Astar[None], theta.Q[None], xstar.values, xstar.step)[0]
    return OffsetTrajectory(xstar.t.copy(), s)


def solve_agent_mean(theta: ThetaParams, Pi, R, s: OffsetTrajectory, x0) -> np.ndarray:
    """Noiseless closed-loop mean driven by the offset ``s``."""
    R = np.atleast_2d(R)
    Astar = lc.closed_loop(theta.A, theta.B, R, Pi)
    _check_hurwitz(Astar)
    S = theta.B @ np.linalg.solve(R, theta.B.T)
    h = float(s.t[1] - s.t[0])
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    return means_batch(Astar[None], S[None], s.values[None], h, x0)[0]


# --------------------------------------------------------------------------
# fixed point


@dataclass
class _NodeData:
    thetas: list
    weights: np.ndarray
    Pi: np.ndarray
    Astar: np.ndarray
    S: np.ndarray
    Q: np.ndarray

    @property
    def rho_min(self) -> float:
        return float(min(-np.max(np.linalg.eigvals(A).real) for A in self.Astar))


def _node_data(spec: DistributionSpec, R) -> _NodeData:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    nodes = quadrature_nodes(spec)
    thetas = [th for th, _ in nodes]
    w = np.array([wk for _, wk in nodes])
    Pis = np.stack([lc.care_solve(th.A, th.B, th.Q, R) for th in thetas])
    Astar = np.stack([lc.closed_loop(th.A, th.B, R, P) for th, P in zip(thetas, Pis)])
    S = np.stack([th.B @ np.linalg.solve(R, th.B.T) for th in thetas])
    Q = np.stack([th.Q for th in thetas])
    return _NodeData(thetas, w, Pis, Astar, S, Q)


def default_horizon(spec: DistributionSpec, R, h: float = 1e-2) -> float:
    rho = _node_data(spec, R).rho_min
    return float(np.ceil(20.0 / rho / h) * h)


def steady_state(spec: DistributionSpec, coupling: CouplingSpec, R):
    """Constant solution of the mean-field system.

    Returns ``(xstar, xbar_nodes)`` where ``xbar_nodes[k]`` is the steady
    mean of quadrature node ``k``.
    """
    nd = _node_data(spec, R)
    n = nd.Q.shape[1]
    # xbar_k = A*_k^-1 S_k (A*_k')^-1 Q_k x*  =: M_k x*
    Mk = np.stack([np.linalg.solve(A, S @ np.linalg.solve(A.T, Q)) for A, S, Q in zip(nd.Astar, nd.S, nd.Q)])
    M = np.einsum("k,kij->ij", nd.weights, Mk)
    G = coupling.Gamma
    xstar = np.linalg.solve(np.eye(n) - G @ M, G @ coupling.eta + coupling.c)
    return xstar, Mk @ xstar


def _apply_map(nd: _NodeData, coupling: CouplingSpec, xs: np.ndarray, h: float, x0):
    s = offsets_batch(nd.Astar, nd.Q, xs, h)
    xb = means_batch(nd.Astar, nd.S, s, h, x0)
    xbar = np.einsum("k,kli->li", nd.weights, xb)
    return coupling.m(xbar + coupling.eta), s, xb


def _initial_means(x0, K: int, n: int) -> np.ndarray:
    if x0 is None:
        return np.zeros((K, n))
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return np.broadcast_to(x0, (K, n)).copy()
    return x0.reshape(K, n)


def apply_mf_map(spec, coupling, R, mass: MassSignal, x0=None) -> np.ndarray:
    """One application of the composite map ``x* -> m(xbar + eta)`` on ``mass``'s grid."""
    nd = _node_data(spec, R)
    x0 = _initial_means(x0, len(nd.thetas), mass.values.shape[1])
    return _apply_map(nd, coupling, mass.values, mass.step, x0)[0]


def solve_mf_system(
    spec: DistributionSpec,
    coupling: CouplingSpec,
    R,
    horizon: Optional[float] = None,
    tol: float = 1e-8,
    h: float = 1e-2,
    x0=None,
    max_iter: int = 200,
    check_contraction: bool = True,
) -> MassSignal:
    """Picard iteration for the mean-field tracking signal on ``[0, horizon]``.

    ``x0`` is the initial mean of every type (a vector, or one row per
    quadrature node); it defaults to zero.
    """
    nd = _node_data(spec, R)
    n = nd.Q.shape[1]
    kappa = None
    if check_contraction:
        kappa = contraction_constant(spec, R, coupling.gamma)
        if kappa >= 1:
            raise ContractionViolated(f"contraction constant {kappa:.4g} is not below 1")
    if horizon is None:
        horizon = 20.0 / nd.rho_min
    L = max(int(np.ceil(horizon / h - 1e-9)), 4)
    t = np.arange(L + 1) * h
    xb0 = _initial_means(x0, len(nd.thetas), n)

    xs = np.broadcast_to(coupling.m(nd.weights @ xb0 + coupling.eta), (L + 1, n)).copy()
    gaps = []
    for it in range(1, max_iter + 1):
        new = _apply_map(nd, coupling, xs, h, xb0)[0]
        gap = float(np.max(np.abs(new - xs)))
        gaps.append(gap)
        xs = new
        if gap < tol:
            break
    else:
        raise MaxIterations(f"no convergence after {max_iter} iterations (gap {gaps[-1]:.3g})")
    ratios = [g1 / g0 for g0, g1 in zip(gaps[:-1], gaps[1:]) if g0 > 0]
    info = MFDiagnostics(it, gaps, ratios, kappa, float(t[-1]), h)
    return MassSignal(t, xs, zeta=np.array(spec.zeta, dtype=float), info=info)
