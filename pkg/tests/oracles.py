"""
Reference computations used as test oracles.

Nothing here imports mfsac: each routine takes a different numerical route
from the library code it checks (eigenvectors instead of Schur vectors,
quadrature instead of Bartels-Stewart, dense linear solves instead of ODE
integration).
"""
from __future__ import annotations

import numpy as np
from scipy import integrate


def care_eigvec(A, B, Q, R):
    """Stabilizing Riccati solution from the stable eigenvectors of the Hamiltonian."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    n = A.shape[0]
    S = B @ np.linalg.inv(R) @ B.T
    H = np.block([[A, -S], [-Q, -A.T]])
    w, V = np.linalg.eig(H)
    stable = V[:, w.real < 0]
    assert stable.shape[1] == n, "Hamiltonian has no n-dimensional stable subspace"
    P = stable[n:] @ np.linalg.inv(stable[:n])
    P = P.real
    return 0.5 * (P + P.T)


def _expm_eig(A, t):
    w, V = np.linalg.eig(A)
    return (V * np.exp(w * t)) @ np.linalg.inv(V)


def lyapunov_quadrature(A, Q):
    """``int_0^inf e^{A't} Q e^{At} dt`` by adaptive quadrature of the eigen-expansion."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))

    def f(t):
        E = _expm_eig(A, t).real
        return E.T @ Q @ E

    val, _ = integrate.quad_vec(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val


def scalar_care(a, b, q, r):
    """Positive root of ``2 a p - p^2 b^2 / r + q = 0``."""
    return r * (a + np.sqrt(a * a + b * b * q / r)) / (b * b)


def scalar_steady_state(a, b, q, r, gamma, eta, c=0.0):
    """Steady ``(s, xbar, xstar)`` of one scalar type with ``m(x) = gamma x + c``.

    Solves the three linear equations
        a_* s - q x*        = 0
        a_* xbar - S s      = 0       (S = b^2 / r)
        x* - gamma xbar     = gamma eta + c
    directly.
    """
    p = scalar_care(a, b, q, r)
    S = b * b / r
    astar = a - S * p
    M = np.array([[astar, 0.0, -q], [-S, astar, 0.0], [0.0, -gamma, 1.0]])
    rhs = np.array([0.0, 0.0, gamma * eta + c])
    return np.linalg.solve(M, rhs)


def scalar_tracking_cost(a, b, q, r, xstar, d2=0.0):
    """Long-run average of ``q (x - x*)^2 + r u^2`` under the optimal tracker.

    The deterministic part is evaluated at the steady state; the noise part
    is ``p d2`` with ``d2 = D Sigma D'``, the stationary LQG identity.
    """
    p = scalar_care(a, b, q, r)
    S = b * b / r
    astar = a - S * p
    s = q * xstar / astar
    xbar = S * s / astar
    u = -(b / r) * (p * xbar + s)
    return q * (xbar - xstar) ** 2 + r * u * u + p * d2


def scalar_continuous_mle(lam, delta, mu_grid, sd_grid):
    """Grid maximizer of the floor-mixed truncated normal likelihood on [0, 1]."""
    from scipy.stats import truncnorm

    best = (np.inf, None)
    for mu in mu_grid:
        for sd in sd_grid:
            a, b = (0.0 - mu) / sd, (1.0 - mu) / sd
            g = truncnorm.pdf(lam, a, b, loc=mu, scale=sd)
            nll = -np.mean(np.log((1 - delta) * g + delta))
            if nll < best[0]:
                best = (nll, (mu, sd))
    return np.array(best[1])
