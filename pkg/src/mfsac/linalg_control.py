"""
Control-theoretic linear algebra for small dense systems.

Riccati and Lyapunov solvers, the matrix exponential, rank-margin
controllability/observability tests and an exponential-decay fit for
fundamental-matrix norms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import IllConditioned, NonFinite, NotDecaying, NotHurwitz, NotStabilizable

DEFAULT_MARGIN = 1e-8


def _as2d(M) -> np.ndarray:
    return np.atleast_2d(np.asarray(M, dtype=float))


def care_residual(A, B, Q, R, Pi) -> float:
    A, B, Q, R, Pi = map(_as2d, (A, B, Q, R, Pi))
    S = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ Pi + Pi @ A - Pi @ S @ Pi + Q, 2))


def _care_tolerance(Pi: np.ndarray) -> float:
    return 1e-10 * (1.0 + np.linalg.norm(Pi, 2) ** 2)


def care_solve(A, B, Q, R, max_refine: int = 8) -> np.ndarray:
    """Stabilizing solution of ``A'P + PA - P B R^-1 B' P + Q = 0``.

    The stable invariant subspace of the Hamiltonian matrix is found with an
    ordered real Schur form; Newton-Kleinman sweeps then polish the residual.
    """
    A, B, Q, R = map(_as2d, (A, B, Q, R))
    n = A.shape[0]
    if not all(np.all(np.isfinite(M)) for M in (A, B, Q, R)):
        raise NonFinite("non-finite Riccati data")
    Rinv = np.linalg.inv(R)
    S = B @ Rinv @ B.T
    H = np.block([[A, -S], [-Q, -A.T]])
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizable(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NotStabilizable("stable subspace is not a graph over the state space")
    Pi = np.linalg.solve(U11.T, U21.T).T
    Pi = 0.5 * (Pi + Pi.T)

    for _ in range(max_refine):
        if care_residual(A, B, Q, R, Pi) <= 0.1 * _care_tolerance(Pi):
            break
        K = Rinv @ B.T @ Pi
        Acl = A - B @ K
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            break
        Pi_new = linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        Pi = 0.5 * (Pi_new + Pi_new.T)

    if care_residual(A, B, Q, R, Pi) > _care_tolerance(Pi):
        raise IllConditioned("Riccati residual above tolerance after refinement")
    Astar = A - S @ Pi
    if np.max(np.linalg.eigvals(Astar).real) >= 0:
        raise NotStabilizable("closed loop is not Hurwitz")
    return Pi


def closed_loop(A, B, R, Pi) -> np.ndarray:
    """``A - B R^-1 B' Pi``."""
    A, B, R, Pi = map(_as2d, (A, B, R, Pi))
    return A - B @ np.linalg.solve(R, B.T @ Pi)


def is_hurwitz(A) -> bool:
    return bool(np.max(np.linalg.eigvals(_as2d(A)).real) < 0)


def lyapunov_solve(A, Q) -> np.ndarray:
    """Solve ``Pi A + A' Pi = -Q`` for Hurwitz ``A``."""
    A, Q = _as2d(A), _as2d(Q)
    if not is_hurwitz(A):
        raise NotHurwitz("A has an eigenvalue with nonnegative real part")
    Pi = linalg.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (Pi + Pi.T)


def expm(A, t: float = 1.0) -> np.ndarray:
    """``e^{At}`` via scaling and squaring with a degree-13 Pade approximant."""
    A = _as2d(A)
    E = linalg.expm(A * float(t))
    if not np.all(np.isfinite(E)):
        raise NonFinite("matrix exponential overflowed")
    return E


def controllability_matrix(A, B) -> np.ndarray:
    A, B = _as2d(A), _as2d(B)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def controllability_margin(A, B) -> float:
    """Smallest (n-th) singular value of ``[B, AB, ..., A^{n-1}B]``."""
    C = controllability_matrix(A, B)
    n = C.shape[0]
    sv = np.linalg.svd(C, compute_uv=False)
    return float(sv[n - 1]) if len(sv) >= n else 0.0


def psd_sqrt(Q) -> np.ndarray:
    Q = _as2d(Q)
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def observability_margin(Q, A) -> float:
    """Controllability margin of the dual pair ``(A', Q^{1/2}')``."""
    C = psd_sqrt(Q)
    return controllability_margin(_as2d(A).T, C.T)


def check_controllable(A, B, margin: float = DEFAULT_MARGIN) -> bool:
    return controllability_margin(A, B) >= margin


def check_observable(Q, A, margin: float = DEFAULT_MARGIN) -> bool:
    return observability_margin(Q, A) >= margin


@dataclass(frozen=True)
class StabilityEstimate:
    gain: float
    decay_rate: float


def fit_stability_bound(samples: Sequence[tuple[float, float]]) -> StabilityEstimate:
    """Fit ``||Phi(t,0)|| <= beta exp(-rho t)`` to sampled norms.

    ``rho`` is the negated least-squares slope of the log-norm; ``beta`` is
    raised to the smallest envelope constant so the bound holds at every
    sample (and is at least 1).
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 10:
        raise ValueError("need at least 10 (t, norm) samples")
    t, y = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be increasing")
    if np.any(y <= 0):
        raise ValueError("norms must be positive")
    slope, _ = np.polyfit(t, np.log(y), 1)
    rho = -float(slope)
    if rho <= 0:
        raise NotDecaying(f"fitted decay rate {rho:.3g} is not positive")
    envelope = np.max(np.log(y) + rho * t)
    beta = max(1.0, float(np.exp(envelope)))
    return StabilityEstimate(gain=beta, decay_rate=rho)
