"""
Agent parameters, the compact feasible set, parametric population
distributions and the projection onto the feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from . import linalg_control as lc
from .errors import InvalidSpec, OutOfSupport, ProjectionFailed, RiccatiFailure


@dataclass(frozen=True, eq=False)
class ThetaParams:
    """Dynamical and cost parameters ``(A, B, Q)`` of one agent."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or Q.shape != A.shape:
            raise InvalidSpec(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def vec(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel(), self.Q.ravel()])

    @classmethod
    def from_vec(cls, v, n: int, m: int) -> "ThetaParams":
        v = np.asarray(v, dtype=float)
        a, b = n * n, n * n + n * m
        return cls(v[:a].reshape(n, n), v[a:b].reshape(n, m), v[b:].reshape(n, n))

    def distance(self, other: "ThetaParams") -> float:
        return float(np.linalg.norm(self.vec - other.vec))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "Q": self.Q.tolist()}

    def __repr__(self) -> str:
        return f"ThetaParams(A={self.A.tolist()}, B={self.B.tolist()}, Q={self.Q.tolist()})"


def _dims_size(n: int, m: int) -> int:
    return 2 * n * n + n * m


@dataclass(frozen=True, eq=False)
class ThetaSet:
    """Compact feasible set: an entrywise box intersected with margin conditions."""

    box_lo: np.ndarray
    box_hi: np.ndarray
    n: int
    m: int
    controllability_margin: float = lc.DEFAULT_MARGIN
    observability_margin: float = lc.DEFAULT_MARGIN
    q_floor: float = 0.0
    contraction_budget: float = 0.99
    invertible_B_margin: Optional[float] = None
    anchors: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.box_lo, dtype=float).ravel()
        hi = np.asarray(self.box_hi, dtype=float).ravel()
        size = _dims_size(self.n, self.m)
        if lo.shape != (size,) or hi.shape != (size,):
            raise InvalidSpec(f"box bounds must have {size} entries")
        if np.any(lo > hi):
            raise InvalidSpec("box_lo must not exceed box_hi")
        if not 0 < self.contraction_budget < 1:
            raise InvalidSpec("contraction_budget must lie in (0, 1)")
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        object.__setattr__(self, "anchors", tuple(self.anchors))

    @classmethod
    def from_bounds(cls, n: int, m: int, A, B, Q, **kw) -> "ThetaSet":
        """Build from per-block ``(lo, hi)`` pairs (scalars or arrays)."""
        lo, hi = [], []
        for (l, h), shape in ((A, (n, n)), (B, (n, m)), (Q, (n, n))):
            lo.append(np.broadcast_to(np.asarray(l, dtype=float), shape).ravel())
            hi.append(np.broadcast_to(np.asarray(h, dtype=float), shape).ravel())
        return cls(np.concatenate(lo), np.concatenate(hi), n, m, **kw)

    def with_anchors(self, anchors: Sequence[ThetaParams]) -> "ThetaSet":
        return replace(self, anchors=tuple(anchors))

    def violations(self, theta: ThetaParams) -> list[str]:
        out = []
        v = theta.vec
        if not np.all(np.isfinite(v)):
            return ["non-finite entries"]
        if np.any(v < self.box_lo - 1e-12) or np.any(v > self.box_hi + 1e-12):
            out.append("box")
        if not np.allclose(theta.Q, theta.Q.T, atol=1e-12):
            out.append("Q asymmetric")
        elif np.min(np.linalg.eigvalsh(theta.Q)) < self.q_floor - 1e-12:
            out.append("Q floor")
        if lc.controllability_margin(theta.A, theta.B) < self.controllability_margin:
            out.append("controllability")
        if lc.observability_margin(theta.Q, theta.A) < self.observability_margin:
            out.append("observability")
        if self.invertible_B_margin is not None:
            if theta.n != theta.m:
                out.append("B not square")
            elif np.linalg.svd(theta.B, compute_uv=False)[-1] < self.invertible_B_margin:
                out.append("B singular")
        return out

    def contains(self, theta: ThetaParams) -> bool:
        return not self.violations(theta)


# --------------------------------------------------------------------------
# distributions


class DistributionSpec:
    """Parametric family ``F_zeta`` over the feasible set."""

    family: str = ""
    delta: float

    def with_zeta(self, zeta) -> "DistributionSpec":
        raise NotImplementedError

    def support_points(self) -> list[ThetaParams]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class CategoricalAtoms(DistributionSpec):
    """``K`` fixed atoms with probabilities on the simplex, floor-mixed."""

    atoms: tuple
    zeta: np.ndarray
    delta: float = 1e-4
    family = "categorical"

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float).ravel()
        object.__setattr__(self, "zeta", z)
        object.__setattr__(self, "atoms", tuple(self.atoms))
        K = len(self.atoms)
        if K == 0 or z.shape != (K,):
            raise InvalidSpec("zeta must have one entry per atom")
        if np.any(z < -1e-12) or abs(z.sum() - 1.0) > 1e-9:
            raise InvalidSpec("zeta must lie on the probability simplex")
        if not 0 <= self.delta * K < 1:
            raise InvalidSpec("delta * K must lie in [0, 1)")

    @property
    def K(self) -> int:
        return len(self.atoms)

    def probabilities(self, zeta=None) -> np.ndarray:
        z = self.zeta if zeta is None else np.asarray(zeta, dtype=float)
        return (1.0 - self.delta * self.K) * z + self.delta

    def with_zeta(self, zeta) -> "CategoricalAtoms":
        z = np.clip(np.asarray(zeta, dtype=float), 0.0, None)
        return replace(self, zeta=z / z.sum())

    def support_points(self) -> list[ThetaParams]:
        return list(self.atoms)

    def atom_index(self, theta: ThetaParams, tol: float = 1e-9) -> int:
        d = [a.distance(theta) for a in self.atoms]
        k = int(np.argmin(d))
        if d[k] > tol:
            raise OutOfSupport("theta is not an atom of the distribution")
        return k


@dataclass(frozen=True, eq=False)
class TruncatedGaussian1D(DistributionSpec):
    """Parameters vary along the segment ``theta(lam)``, ``lam in [0,1]``.

    ``lam`` follows a normal law ``(mean, std)`` truncated to ``[0,1]``
    mixed with a uniform component of mass ``delta``.
    """

    theta_lo: ThetaParams
    theta_hi: ThetaParams
    zeta: np.ndarray
    delta: float = 1e-4
    grid: int = 101
    zeta_lo: tuple = (0.0, 0.02)
    zeta_hi: tuple = (1.0, 0.5)
    family = "gaussian1d"

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float).ravel()
        object.__setattr__(self, "zeta", z)
        if z.shape != (2,) or z[1] <= 0:
            raise InvalidSpec("zeta must be (mean, std) with std > 0")
        if not 0 <= self.delta < 1:
            raise InvalidSpec("delta must lie in [0, 1)")
        if self.grid < 3:
            raise InvalidSpec("grid needs at least 3 nodes")

    def with_zeta(self, zeta) -> "TruncatedGaussian1D":
        return replace(self, zeta=np.asarray(zeta, dtype=float))

    def theta_at(self, lam: float) -> ThetaParams:
        v = self.theta_lo.vec + lam * (self.theta_hi.vec - self.theta_lo.vec)
        return ThetaParams.from_vec(v, self.theta_lo.n, self.theta_lo.m)

    def coordinate(self, theta: ThetaParams, use_Q: bool = True) -> tuple[float, float]:
        """Clipped segment coordinate of ``theta`` and its distance to the segment."""
        lo, hi, v = self.theta_lo.vec, self.theta_hi.vec, theta.vec
        if not use_Q:
            k = self.theta_lo.n * (self.theta_lo.n + self.theta_lo.m)
            lo, hi, v = lo[:k], hi[:k], v[:k]
        d = hi - lo
        lam = float(np.clip(np.dot(v - lo, d) / np.dot(d, d), 0.0, 1.0))
        return lam, float(np.linalg.norm(lo + lam * d - v))

    def pdf(self, lam, zeta=None) -> np.ndarray:
        mu, sd = self.zeta if zeta is None else zeta
        lam = np.asarray(lam, dtype=float)
        Z = special.ndtr((1.0 - mu) / sd) - special.ndtr(-mu / sd)
        g = np.exp(-0.5 * ((lam - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi) * Z)
        return (1.0 - self.delta) * g + self.delta

    def support_points(self) -> list[ThetaParams]:
        return [self.theta_at(l) for l in np.linspace(0.0, 1.0, self.grid)]


@dataclass(frozen=True)
class NoiseSpec:
    """Disturbance input ``D`` and Wiener covariance ``Sigma``."""

    D: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if S.shape != (D.shape[1], D.shape[1]):
            raise InvalidSpec("Sigma must be r x r where D is n x r")
        if np.min(np.linalg.eigvalsh(0.5 * (S + S.T))) < -1e-12:
            raise InvalidSpec("Sigma must be positive semidefinite")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Sigma", S)

    def increment_factor(self, dt: float) -> np.ndarray:
        """Matrix ``G`` with ``D dW = G z``, ``z`` standard normal."""
        w, V = np.linalg.eigh(self.Sigma)
        L = V * np.sqrt(np.clip(w, 0.0, None))
        return self.D @ L * np.sqrt(dt)


# --------------------------------------------------------------------------
# operations


def validate_spec(spec: DistributionSpec, theta_set: ThetaSet) -> None:
    for k, th in enumerate(spec.support_points()):
        bad = theta_set.violations(th)
        if bad:
            raise InvalidSpec(f"support point {k} violates the feasible set: {', '.join(bad)}")


def sample_theta(spec: DistributionSpec, rng_seed, count: int) -> list[ThetaParams]:
    """I.i.d. draws from the (floor-mixed) distribution.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    if count < 0:
        raise InvalidSpec("count must be nonnegative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if isinstance(spec, CategoricalAtoms):
        p = spec.probabilities()
        idx = rng.choice(spec.K, size=count, p=p / p.sum())
        return [spec.atoms[k] for k in idx]
    if isinstance(spec, TruncatedGaussian1D):
        mu, sd = spec.zeta
        lo, hi = special.ndtr(-mu / sd), special.ndtr((1.0 - mu) / sd)
        uniform = rng.random(count) < spec.delta
        u = rng.random(count)
        lam = np.where(uniform, u, mu + sd * special.ndtri(lo + u * (hi - lo)))
        return [spec.theta_at(float(np.clip(l, 0.0, 1.0))) for l in lam]
    raise InvalidSpec(f"unknown family {type(spec).__name__}")


def density(spec: DistributionSpec, theta: ThetaParams, tol: float = 1e-9) -> float:
    if isinstance(spec, CategoricalAtoms):
        return float(spec.probabilities()[spec.atom_index(theta, tol)])
    if isinstance(spec, TruncatedGaussian1D):
        lam, dist = spec.coordinate(theta)
        if dist > tol:
            raise OutOfSupport("theta is off the parameter segment")
        return float(spec.pdf(lam))
    raise InvalidSpec(f"unknown family {type(spec).__name__}")


def quadrature_nodes(spec: DistributionSpec) -> list[tuple[ThetaParams, float]]:
    if isinstance(spec, CategoricalAtoms):
        return list(zip(spec.atoms, spec.probabilities().tolist()))
    if isinstance(spec, TruncatedGaussian1D):
        lam = np.linspace(0.0, 1.0, spec.grid)
        w = spec.pdf(lam) * (lam[1] - lam[0])
        w[[0, -1]] *= 0.5
        w = w / w.sum()
        return [(spec.theta_at(float(l)), float(wk)) for l, wk in zip(lam, w)]
    raise InvalidSpec(f"unknown family {type(spec).__name__}")


def decay_integral(Astar, tail: float = 1e-12, min_points: int = 4097) -> float:
    """``int_0^inf ||exp(Astar t)|| dt`` truncated once the norm drops below ``tail``.

    Composite Simpson rule on a uniform grid fine enough to resolve the
    fastest closed-loop mode.
    """
    Astar = np.atleast_2d(np.asarray(Astar, dtype=float))
    if np.max(np.linalg.eigvals(Astar).real) >= 0:
        raise RiccatiFailure("closed loop does not decay")
    T = 1.0
    while np.linalg.norm(lc.expm(Astar, T), 2) >= tail:
        T *= 2.0
    rate = max(float(np.max(np.abs(np.linalg.eigvals(Astar)))), 1e-12)
    points = max(min_points, int(2 ** np.ceil(np.log2(200 * rate * T))) + 1)
    h = T / (points - 1)
    step = lc.expm(Astar, h)
    E = np.empty((points,) + Astar.shape)
    E[0] = np.eye(Astar.shape[0])
    for k in range(1, points):
        E[k] = E[k - 1] @ step
    norms = np.linalg.norm(E, 2, axis=(1, 2))
    return float(integrate.simpson(norms, dx=h))


_TERM_CACHE: dict = {}


def _node_term(theta: ThetaParams, R: np.ndarray) -> float:
    """``|Q| |B|^2 (int |e^{A* t}| dt)^2`` for one parameter value (memoized)."""
    key = (theta.vec.tobytes(), theta.n, theta.m, R.tobytes())
    if key not in _TERM_CACHE:
        try:
            Pi = lc.care_solve(theta.A, theta.B, theta.Q, R)
        except Exception as exc:
            raise RiccatiFailure(str(exc)) from exc
        Astar = lc.closed_loop(theta.A, theta.B, R, Pi)
        I = decay_integral(Astar)
        if len(_TERM_CACHE) > 100_000:
            _TERM_CACHE.clear()
        _TERM_CACHE[key] = float(np.linalg.norm(theta.Q, 2) * np.linalg.norm(theta.B, 2) ** 2 * I**2)
    return _TERM_CACHE[key]


def contraction_constant(spec: DistributionSpec, R, gamma: float) -> float:
    """Weighted integral ``|R^-1| |gamma| E[ |Q| |B|^2 (int |e^{A* t}| dt)^2 ]``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if gamma == 0:
        return 0.0
    Rinv_norm = np.linalg.norm(np.linalg.inv(R), 2)
    total = sum(w * _node_term(theta, R) for theta, w in quadrature_nodes(spec) if w > 0)
    return float(Rinv_norm * abs(gamma) * total)


def contraction_report(spec: DistributionSpec, R, gamma: float, grid: int = 5) -> dict:
    """Contraction constant at the true parameter and across the parameter domain.

    Categorical families are checked at every simplex vertex (the constant is
    linear in the weights, so the vertices bound it); the Gaussian family on
    a ``grid`` x ``grid`` lattice of its domain.
    """
    out = {"zeta0": contraction_constant(spec, R, gamma)}
    if isinstance(spec, CategoricalAtoms):
        vals = [contraction_constant(spec.with_zeta(np.eye(spec.K)[k]), R, gamma) for k in range(spec.K)]
    elif isinstance(spec, TruncatedGaussian1D):
        vals = [
            contraction_constant(spec.with_zeta((mu, sd)), R, gamma)
            for mu in np.linspace(spec.zeta_lo[0], spec.zeta_hi[0], grid)
            for sd in np.linspace(spec.zeta_lo[1], spec.zeta_hi[1], grid)
        ]
    else:
        vals = []
    out["domain_max"] = float(max(vals)) if vals else out["zeta0"]
    return out


# --------------------------------------------------------------------------
# projection


def _clip_Q(Q: np.ndarray, floor: float) -> np.ndarray:
    Qs = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Qs)
    return (V * np.maximum(w, floor)) @ V.T


def _margin_score(theta: ThetaParams, S: ThetaSet) -> float:
    """Smallest signed slack among the rank conditions (positive when all hold)."""
    slack = [
        lc.controllability_margin(theta.A, theta.B) - S.controllability_margin,
        lc.observability_margin(theta.Q, theta.A) - S.observability_margin,
    ]
    if S.invertible_B_margin is not None and theta.n == theta.m:
        slack.append(np.linalg.svd(theta.B, compute_uv=False)[-1] - S.invertible_B_margin)
    return float(min(slack))


def project_theta(
    theta_raw: ThetaParams,
    theta_set: ThetaSet,
    known_Q: Optional[np.ndarray] = None,
    scan: int = 24,
    bisect: int = 40,
) -> ThetaParams:
    """Map a raw estimate to a nearby point of the feasible set.

    Feasible input is returned unchanged. Otherwise the box is clamped, ``Q``
    is eigenvalue-clipped (or replaced by ``known_Q``), and if rank margins
    still fail a family of line searches (toward each anchor, along each free
    axis and along the margin gradient) picks the closest feasible point.
    Ties break lexicographically on the vectorized parameters.
    """
    S = theta_set
    n, m = theta_raw.n, theta_raw.m
    raw = theta_raw.vec
    free = np.ones(raw.size, dtype=bool)
    if known_Q is not None:
        known_Q = np.atleast_2d(np.asarray(known_Q, dtype=float))
        free[n * n + n * m:] = False
        if np.array_equal(theta_raw.Q, known_Q) and S.contains(theta_raw):
            return theta_raw
        base = ThetaParams(theta_raw.A, theta_raw.B, known_Q).vec
    else:
        if S.contains(theta_raw):
            return theta_raw
        base = raw.copy()

    if not np.all(np.isfinite(base)):
        base = np.where(np.isfinite(base), base, 0.5 * (S.box_lo + S.box_hi))

    # alternate box clamp and eigenvalue floor; aim slightly above the floor so
    # the final clamp does not push the spectrum back under it
    p = base.copy()
    iq = n * n + n * m
    for _ in range(3 if known_Q is not None else 200):
        p[free] = np.clip(p[free], S.box_lo[free], S.box_hi[free])
        if known_Q is None:
            Qb = p[iq:].reshape(n, n)
            if np.allclose(Qb, Qb.T, atol=1e-12) and np.min(np.linalg.eigvalsh(Qb)) >= S.q_floor:
                break
            p[iq:] = _clip_Q(Qb, S.q_floor * (1 + 1e-6) + 1e-12).ravel()
    p[free] = np.clip(p[free], S.box_lo[free], S.box_hi[free])

    def mk(v):
        return ThetaParams.from_vec(v, n, m)

    def feasible(v):
        return S.contains(mk(v))

    if feasible(p):
        return mk(p)

    directions = []
    for a in S.anchors:
        target = a.vec.copy()
        if known_Q is not None:
            target[~free] = p[~free]
        directions.append((target - p, 1.0))
    width = S.box_hi - S.box_lo
    for k in np.flatnonzero(free):
        for sgn in (1.0, -1.0):
            d = np.zeros_like(p)
            d[k] = sgn
            directions.append((d, max(width[k], 1e-12)))
    grad = np.zeros_like(p)
    f0 = _margin_score(mk(p), S)
    for k in np.flatnonzero(free):
        h = 1e-6 * max(1.0, abs(p[k]))
        q = p.copy()
        q[k] += h
        grad[k] = (_margin_score(mk(q), S) - f0) / h
    if np.linalg.norm(grad) > 0:
        g = grad / np.linalg.norm(grad)
        directions.append((g, float(np.max(width[free])) if np.any(free) else 1.0))

    def search(dirs, best=None):
        for d, tmax in dirs:
            if np.linalg.norm(d) == 0:
                continue
            ts = tmax * np.geomspace(1e-9, 1.0, scan)
            hit = None
            prev = 0.0
            for t in ts:
                if feasible(p + t * d):
                    hit = t
                    break
                prev = t
            if hit is None:
                continue
            lo, hi = prev, hit
            for _ in range(bisect):
                mid = 0.5 * (lo + hi)
                if feasible(p + mid * d):
                    hi = mid
                else:
                    lo = mid
            cand = p + hi * d
            key = (float(np.linalg.norm(cand - base)), tuple(cand.tolist()))
            if best is None or key < best[0]:
                best = (key, cand)
        return best

    best = search(directions)
    if best is None:
        # degenerate points (e.g. B = 0) need several coordinates to move at once;
        # fall back to a fixed set of pseudo-random directions in the (A, B) block,
        # Q having been repaired already
        g = np.random.default_rng(0)
        ab = free.copy()
        ab[iq:] = False
        span = float(np.max(width[ab])) if np.any(ab) else 1.0
        rand = []
        for _ in range(64 if np.any(ab) else 0):
            d = np.where(ab, g.standard_normal(p.size), 0.0)
            rand.append((d / np.linalg.norm(d), span))
        best = search(rand)
    if best is None:
        raise ProjectionFailed("no feasible point found along any search direction")
    return mk(best[1])
