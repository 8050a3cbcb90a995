"""
Standalone numerical checks of the auxiliary results the convergence
arguments rest on: ergodic second moments of stable linear SDEs, the
fundamental matrix of a slowly converging system and the vanishing of the
filtered dither.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, signal

from . import linalg_control as lc
from .identification import dither_path


@dataclass(frozen=True)
class ErgodicCheck:
    time_average: float
    stationary: float

    @property
    def rel_error(self) -> float:
        return abs(self.time_average - self.stationary) / self.stationary


def ergodic_second_moment(A, D, Sigma=None, T: float = 1e3, dt: float = 1e-2, seed: int = 0,
                          x0=None) -> ErgodicCheck:
    """``(1/T) int |x|^2`` along one path of ``dx = A x dt + D dW`` vs ``tr P``.

    ``P`` solves ``A P + P A' + D Sigma D' = 0``. The path uses the exact
    Gaussian transition over each step, so the check is free of
    discretization bias.
    """
    A = np.atleast_2d(np.asarray(A, float))
    D = np.atleast_2d(np.asarray(D, float))
    n = A.shape[0]
    Sigma = np.eye(D.shape[1]) if Sigma is None else np.atleast_2d(Sigma)
    if not lc.is_hurwitz(A):
        from .errors import NotHurwitz

        raise NotHurwitz("ergodic check needs a stable drift")
    W = D @ Sigma @ D.T
    P = lc.lyapunov_solve(A, W)
    F = lc.expm(A, dt)
    Qd = P - F @ P @ F.T  # covariance of the one-step innovation
    Ld = lc.psd_sqrt(Qd)
    L = int(round(T / dt))
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((L, n)) @ Ld.T
    x = np.zeros(n) if x0 is None else np.asarray(x0, float)
    if n == 1:
        path = signal.lfilter([1.0], [1.0, -F[0, 0]], e[:, 0], zi=[F[0, 0] * x[0]])[0][:, None]
    else:
        path = np.empty((L, n))
        for k in range(L):
            x = F @ x + e[k]
            path[k] = x
    sq = np.sum(path**2, axis=1)
    return ErgodicCheck(float(np.mean(sq)), float(np.trace(P)))


def fundamental_gap(A, A_hat: Callable[[float], np.ndarray], T: float, dt: float = 1e-2) -> float:
    """``(1/T) int_0^T |Phi(t, 0) - e^{A t}|_F^2 dt`` with ``dPhi/dt = A_hat(t) Phi``."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]

    def rhs(t, y):
        return (A_hat(t) @ y.reshape(n, n)).ravel()

    ts = np.linspace(0.0, T, int(round(T / dt)) + 1)
    sol = integrate.solve_ivp(rhs, (0.0, T), np.eye(n).ravel(), t_eval=ts, rtol=1e-10, atol=1e-13,
                              method="DOP853")
    Phi = sol.y.T.reshape(-1, n, n)
    step = lc.expm(A, dt)
    E = np.empty_like(Phi)
    cur = np.eye(n)
    for k in range(ts.size):
        E[k] = cur
        cur = step @ cur
    g = np.sum((Phi - E) ** 2, axis=(1, 2))
    return float(np.trapezoid(g, ts) / T)


def scripted_convergent(A, E, power: float = 2.0) -> Callable[[float], np.ndarray]:
    """``A_hat(t) = A + E / (1 + t)^power``."""
    A = np.atleast_2d(np.asarray(A, float))
    E = np.atleast_2d(np.asarray(E, float))
    return lambda t: A + E / (1.0 + t) ** power


@dataclass(frozen=True)
class DitherAverages:
    T: float
    local: float  # (1/T) int |int_{floor t}^t f d|^2
    cumulative: float  # (1/T) int |int_0^t f d|^2
    power: float  # (1/T) int |d|^2


def dither_averages(T: float, dt: float = 1e-2, seed: int = 0, m: int = 1,
                    f: Callable[[np.ndarray], np.ndarray] = np.cos) -> DitherAverages:
    """Time averages of the filtered dither on ``[0, T]``.

    ``local`` integrates ``f(t) d(t)`` only since the last integer time,
    ``cumulative`` from zero; both are reported because only the first can
    vanish when ``f`` does not decay.
    """
    L = int(round(T / dt))
    z = np.random.default_rng(seed).standard_normal((L, m))
    d, _ = dither_path(0.0, dt, z)
    t = dt * np.arange(L)
    g = f(t)[:, None] * d * dt
    C = np.cumsum(g, axis=0)
    k = np.floor(t + 1e-9)
    first = np.searchsorted(t, k - 1e-9)
    base = np.where(first[:, None] > 0, C[np.maximum(first - 1, 0)], 0.0)
    local = C - base
    return DitherAverages(
        float(T),
        float(np.mean(np.sum(local**2, axis=1))),
        float(np.mean(np.sum(C**2, axis=1))),
        float(np.mean(np.sum(d**2, axis=1))),
    )
