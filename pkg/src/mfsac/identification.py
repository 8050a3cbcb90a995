"""
Online identification: weighted least squares for dynamics and cost
parameters, cost-matrix recovery, likelihood estimation of the population
distribution parameter and the diminishing dither.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .errors import EmptyObservation, InvalidSpec, NonFinite, SingularBhat
from .population import CategoricalAtoms, DistributionSpec, ThetaParams, TruncatedGaussian1D

KAPPA = 100.0
SINGULAR_B_TOL = 1e-10


def gain_schedule(r) -> float:
    """Weight ``a = 1/f(r)`` with ``f(x) = max(1, log^2(x + e))``."""
    return 1.0 / np.maximum(1.0, np.log(np.asarray(r, dtype=float) + np.e) ** 2)


@dataclass(frozen=True, eq=False)
class RwlsState:
    """Weighted least squares in information form.

    ``info`` is the inverse gain matrix and ``cross`` the weighted
    regressor/measurement correlation; the estimate is ``info^-1 cross``.
    """

    info: np.ndarray
    cross: np.ndarray
    r: float
    t: float = 0.0

    @classmethod
    def initial(cls, p: int, q: int, kappa: float = KAPPA) -> "RwlsState":
        return cls(np.eye(p) / kappa, np.zeros((p, q)), 1.0 / kappa)

    @property
    def upsilon(self) -> np.ndarray:
        return np.linalg.solve(self.info, self.cross)

    @property
    def Psi(self) -> np.ndarray:
        return np.linalg.inv(self.info)

    def _update(self, psi, meas, dt, weight_meas_by_dt: bool) -> "RwlsState":
        psi = np.asarray(psi, dtype=float).ravel()
        meas = np.asarray(meas, dtype=float).ravel()
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(meas))):
            raise NonFinite("non-finite regressor or measurement")
        a = float(gain_schedule(self.r))
        scale = a * dt if weight_meas_by_dt else a
        return RwlsState(
            self.info + a * dt * np.outer(psi, psi),
            self.cross + scale * np.outer(psi, meas),
            self.r + float(psi @ psi) * dt,
            self.t + dt,
        )


def rwls_dyn_step(state: RwlsState, x, u, dx, dt: float) -> RwlsState:
    """One step of the dynamics regression ``dx = [A, B] [x; u] dt + noise``."""
    if dt <= 0:
        raise InvalidSpec("dt must be positive")
    psi = np.concatenate([np.ravel(x), np.ravel(u)])
    return state._update(psi, dx, dt, weight_meas_by_dt=False)


def split_dynamics(state: RwlsState, n: int):
    """``(A_hat, B_hat)`` from the transposed estimate ``[A, B]``."""
    U = state.upsilon.T
    return U[:, :n], U[:, n:]


def cost_measurement_map(B_hat, R) -> np.ndarray:
    """``W = -(B_hat')^-1 R`` so that the measurement is ``W u``."""
    B_hat = np.atleast_2d(B_hat)
    if B_hat.shape[0] != B_hat.shape[1]:
        raise SingularBhat("cost identification needs a square input matrix")
    if abs(np.linalg.det(B_hat)) < SINGULAR_B_TOL:
        raise SingularBhat("estimated input matrix is singular")
    return -np.linalg.solve(B_hat.T, np.atleast_2d(R))


def rwls_cost_step(state: RwlsState, x, u, B_hat, R, dt: float) -> RwlsState:
    """One step of the cost regression ``-(B')^-1 R u = [Pi, s] [x; 1]``."""
    if dt <= 0:
        raise InvalidSpec("dt must be positive")
    W = cost_measurement_map(B_hat, R)
    y = W @ np.ravel(u)
    psi = np.append(np.ravel(x), 1.0)
    return state._update(psi, y, dt, weight_meas_by_dt=True)


def split_cost(state: RwlsState, n: int):
    """``(Pi_hat, s_hat)`` from the transposed estimate ``[Pi, s]``."""
    U = state.upsilon.T
    return U[:, :n], U[:, n]


def recover_Q(A_hat, B_hat, Pi_hat, R) -> np.ndarray:
    """Cost matrix implied by the Riccati equation at the estimates (symmetrized)."""
    A, B, P, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A_hat, B_hat, Pi_hat, R))
    M = -A.T @ P.T - P @ A + P.T @ B @ np.linalg.solve(R, B.T @ P)
    return 0.5 * (M + M.T)


# --------------------------------------------------------------------------
# likelihood estimation


@dataclass(frozen=True)
class MleResult:
    zeta_hat: np.ndarray
    neg_log_likelihood: float
    n_observed: int


def nearest_atoms(spec: CategoricalAtoms, thetas: Sequence[ThetaParams], mask=None) -> np.ndarray:
    """Index of the closest atom to each estimate (ties to the lowest index)."""
    atoms = np.stack([a.vec for a in spec.atoms])
    X = np.stack([th.vec for th in thetas])
    if mask is not None:
        atoms, X = atoms[:, mask], X[:, mask]
    d = np.linalg.norm(X[:, None, :] - atoms[None, :, :], axis=2)
    return np.argmin(d, axis=1)


def categorical_mle(counts, delta: float) -> np.ndarray:
    """Exact maximizer of ``sum c_k log((1 - K delta) z_k + delta)`` over the simplex."""
    c = np.asarray(counts, dtype=float)
    K = c.size
    total = c.sum()
    if total <= 0:
        raise EmptyObservation("no observations")
    if delta == 0:
        return c / total
    active = c > 0
    for _ in range(K + 1):
        mu = c[active].sum() / (1.0 - delta * (K - active.sum()))
        drop = active & (c / mu < delta)
        if not drop.any():
            break
        active &= ~drop
    p = np.where(active, c / mu, delta)
    z = (p - delta) / (1.0 - delta * K)
    z = np.clip(z, 0.0, None)
    return z / z.sum()


def _categorical_nll(spec: CategoricalAtoms, counts, zeta) -> float:
    p = spec.probabilities(zeta)
    with np.errstate(divide="ignore"):
        logp = np.where(counts > 0, np.log(np.maximum(p, 1e-300)), 0.0)
    return float(-(counts * logp).sum() / counts.sum())


def _gaussian_nll(spec: TruncatedGaussian1D, lam: np.ndarray, mu, sd) -> np.ndarray:
    """Negative mean log-likelihood on arrays of ``(mu, sd)`` (broadcast)."""
    mu = np.asarray(mu, dtype=float)[..., None]
    sd = np.asarray(sd, dtype=float)[..., None]
    Z = special.ndtr((1.0 - mu) / sd) - special.ndtr(-mu / sd)
    g = np.exp(-0.5 * ((lam - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi) * Z)
    return -np.mean(np.log((1.0 - spec.delta) * g + spec.delta), axis=-1)


def mle_estimate(spec_family: DistributionSpec, thetas: Sequence[ThetaParams], mask=None, grid: int = 200) -> MleResult:
    """Maximum-likelihood distribution parameter for observed (projected) estimates.

    ``mask`` restricts the parameter coordinates used to place an estimate in
    the family's support (e.g. dynamics only, when costs are not identified).
    """
    thetas = list(thetas)
    if not thetas:
        raise EmptyObservation("no observed estimates")
    if isinstance(spec_family, CategoricalAtoms):
        idx = nearest_atoms(spec_family, thetas, mask)
        counts = np.bincount(idx, minlength=spec_family.K).astype(float)
        z = categorical_mle(counts, spec_family.delta)
        return MleResult(z, _categorical_nll(spec_family, counts, z), len(thetas))
    if isinstance(spec_family, TruncatedGaussian1D):
        use_Q = mask is None
        lam = np.array([spec_family.coordinate(th, use_Q=use_Q)[0] for th in thetas])
        return _gaussian_mle(spec_family, lam, grid)
    raise InvalidSpec(f"unknown family {type(spec_family).__name__}")


def _gaussian_mle(spec: TruncatedGaussian1D, lam: np.ndarray, grid: int) -> MleResult:
    (mlo, slo), (mhi, shi) = spec.zeta_lo, spec.zeta_hi
    mus = np.linspace(mlo, mhi, grid)
    sds = np.linspace(slo, shi, grid)
    best = (np.inf, mlo, slo)
    chunk = max(1, int(4e6 // max(lam.size * grid, 1)))
    for i in range(0, grid, chunk):
        M, S = np.meshgrid(mus[i:i + chunk], sds, indexing="ij")
        vals = _gaussian_nll(spec, lam, M, S)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] < best[0]:
            best = (float(vals[k]), float(M[k]), float(S[k]))
    val, mu, sd = best
    dm, ds = mus[1] - mus[0], sds[1] - sds[0]
    for _ in range(3):
        res = optimize.minimize_scalar(
            lambda m_: float(_gaussian_nll(spec, lam, m_, sd)),
            bounds=(max(mlo, mu - dm), min(mhi, mu + dm)), method="bounded",
            options={"xatol": 1e-10},
        )
        if res.fun < val:
            val, mu = float(res.fun), float(res.x)
        res = optimize.minimize_scalar(
            lambda s_: float(_gaussian_nll(spec, lam, mu, s_)),
            bounds=(max(slo, sd - ds), min(shi, sd + ds)), method="bounded",
            options={"xatol": 1e-10},
        )
        if res.fun < val:
            val, sd = float(res.fun), float(res.x)
    return MleResult(np.array([mu, sd]), val, lam.size)


# --------------------------------------------------------------------------
# dither


def xi(k: int) -> float:
    """Dither amplitude for the unit interval starting at ``k``; zero for ``k < 2``."""
    k = int(k)
    if k < 2:
        return 0.0
    return float(np.sqrt(np.log(k) / np.sqrt(k)))


def dither(k: int, t_in_interval: float, rng: np.random.Generator, m: int = 1) -> np.ndarray:
    """One draw of ``xi_k (eps(k + s) - eps(k))`` for ``s = t_in_interval``."""
    if not 0 <= t_in_interval <= 1:
        raise InvalidSpec("t_in_interval must lie in [0, 1]")
    return xi(k) * np.sqrt(t_in_interval) * rng.standard_normal(m)


def dither_path(t0: float, dt: float, z: np.ndarray, carry=None):
    """Dither on the grid ``t0 + j dt`` from standard normal increments ``z``.

    ``z`` has shape (..., steps, m). The Wiener path restarts at every
    integer time, so the value at step ``j`` is built from the increments
    since ``floor(t_j)``. ``carry`` is the path value at ``t0`` relative to
    ``floor(t0)`` (zero at an integer start); the returned carry continues
    the path into the next block.
    """
    steps = z.shape[-2]
    t = t0 + dt * np.arange(steps + 1)
    k = np.floor(t + 1e-9).astype(int)
    amp = np.array([xi(kk) for kk in k[:-1]])
    incr = np.sqrt(dt) * z
    path = np.zeros(z.shape[:-2] + (steps + 1, z.shape[-1]))
    cur = np.zeros(z.shape[:-2] + (z.shape[-1],)) if carry is None else np.array(carry, dtype=float)
    start = 0
    while start <= steps:
        stop = start + 1
        while stop <= steps and k[stop] == k[start]:
            stop += 1
        if start > 0:
            cur = np.zeros_like(cur)
        seg = np.cumsum(incr[..., start:stop - 1, :], axis=-2)
        path[..., start, :] = cur
        path[..., start + 1:stop, :] = cur[..., None, :] + seg
        if stop - 1 > start:
            cur = path[..., stop - 1, :]
        start = stop
    return path[..., :steps, :] * amp[:, None], path[..., steps, :].copy()
