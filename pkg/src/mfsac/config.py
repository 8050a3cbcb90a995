"""
Scenario files: JSON parsing with field-path diagnostics, validation and
the resolved round-trip form written next to run artifacts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, InvalidSpec, MfsacError
from .mf_solver import CouplingSpec
from .population import (
    CategoricalAtoms,
    NoiseSpec,
    ThetaParams,
    ThetaSet,
    TruncatedGaussian1D,
    contraction_report,
    validate_spec,
)
from .simulation import Scenario, SimConfig

SCENARIO_DIR = Path(__file__).parent / "scenarios"


def _get(d: dict, key: str, path: str, default: Any = ...):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}: missing required field".lstrip("."))
        return default
    return d[key]


def _matrix(value, path: str, shape=None) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: not a numeric array") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1 and shape is not None and len(shape) == 2:
        M = M.reshape(shape) if M.size == shape[0] * shape[1] else M
    if shape is not None and M.shape != tuple(shape):
        raise ConfigError(f"{path}: expected shape {tuple(shape)}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{path}: non-finite entries")
    return M


def _theta(d, path, n, m) -> ThetaParams:
    return ThetaParams(
        _matrix(_get(d, "A", path), f"{path}.A", (n, n)),
        _matrix(_get(d, "B", path), f"{path}.B", (n, m)),
        _matrix(_get(d, "Q", path), f"{path}.Q", (n, n)),
    )


def _theta_dict(th: ThetaParams) -> dict:
    return th.to_dict()


def parse_scenario(data: dict, source: str = "<scenario>", check: bool = True) -> Scenario:
    """Build a :class:`Scenario` from its dictionary form."""
    try:
        dims = _get(data, "dims", "")
        n, m, r = (int(_get(dims, k, "dims")) for k in ("n", "m", "r"))
        R = _matrix(_get(data, "R", ""), "R", (m, m))
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ConfigError("R: must be symmetric positive definite")
        nz = _get(data, "noise", "")
        noise = NoiseSpec(_matrix(_get(nz, "D", "noise"), "noise.D", (n, r)),
                          _matrix(_get(nz, "Sigma", "noise"), "noise.Sigma", (r, r)))
        cp = _get(data, "coupling", "")
        coupling = CouplingSpec(
            _matrix(_get(cp, "Gamma", "coupling"), "coupling.Gamma", (n, n)),
            _matrix(_get(cp, "c", "coupling", [0.0] * n), "coupling.c").ravel(),
            _matrix(_get(cp, "eta", "coupling", [0.0] * n), "coupling.eta").ravel(),
        )

        ts = _get(data, "theta_set", "")
        kw = {}
        for key in ("controllability_margin", "observability_margin", "q_floor", "contraction_budget",
                    "invertible_B_margin"):
            if key in ts:
                kw[key] = None if ts[key] is None else float(ts[key])
        if "box_lo" in ts:
            theta_set = ThetaSet(_matrix(ts["box_lo"], "theta_set.box_lo").ravel(),
                                 _matrix(_get(ts, "box_hi", "theta_set"), "theta_set.box_hi").ravel(), n, m, **kw)
        else:
            blocks = {}
            for key in ("A", "B", "Q"):
                pair = _get(ts, key, "theta_set")
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ConfigError(f"theta_set.{key}: expected [lo, hi]")
                blocks[key] = (_matrix(pair[0], f"theta_set.{key}[0]"), _matrix(pair[1], f"theta_set.{key}[1]"))
            theta_set = ThetaSet.from_bounds(n, m, blocks["A"], blocks["B"], blocks["Q"], **kw)

        dist = _get(data, "distribution", "")
        family = _get(dist, "family", "distribution")
        if family == "categorical":
            atoms = [_theta(a, f"distribution.atoms[{k}]", n, m)
                     for k, a in enumerate(_get(dist, "atoms", "distribution"))]
            spec = CategoricalAtoms(tuple(atoms), _matrix(_get(dist, "zeta", "distribution"), "distribution.zeta").ravel(),
                                    float(dist.get("delta", 1e-4)))
            anchors = atoms
        elif family == "gaussian1d":
            spec = TruncatedGaussian1D(
                _theta(_get(dist, "theta_lo", "distribution"), "distribution.theta_lo", n, m),
                _theta(_get(dist, "theta_hi", "distribution"), "distribution.theta_hi", n, m),
                _matrix(_get(dist, "zeta", "distribution"), "distribution.zeta").ravel(),
                float(dist.get("delta", 1e-4)),
                int(dist.get("grid", 101)),
                tuple(float(v) for v in dist.get("zeta_lo", (0.0, 0.02))),
                tuple(float(v) for v in dist.get("zeta_hi", (1.0, 0.5))),
            )
            anchors = [spec.theta_at(l) for l in np.linspace(0, 1, 5)]
        else:
            raise ConfigError(f"distribution.family: unknown family {family!r}")
        theta_set = theta_set.with_anchors(anchors)

        sim = dict(_get(data, "sim", ""))
        known = {f.name for f in fields(SimConfig)} - {"n", "m", "r"}
        extra = set(sim) - known
        if extra:
            raise ConfigError(f"sim.{sorted(extra)[0]}: unknown field")
        cfg = SimConfig(n=n, m=m, r=r, **sim)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (InvalidSpec, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None

    scen = Scenario(spec, theta_set, noise, coupling, R, cfg, name=str(data.get("name", "scenario")))
    if check:
        validate_scenario(scen, source)
    return scen


def validate_scenario(scen: Scenario, source: str = "<scenario>") -> dict:
    """Support points lie in the feasible set and the contraction condition holds."""
    try:
        validate_spec(scen.spec, scen.theta_set)
    except InvalidSpec as exc:
        raise ConfigError(f"{source}: distribution: {exc}") from None
    try:
        rep = contraction_report(scen.spec, scen.R, scen.coupling.gamma)
    except MfsacError as exc:
        raise ConfigError(f"{source}: contraction check failed: {exc}") from None
    if rep["zeta0"] >= scen.theta_set.contraction_budget or rep["domain_max"] >= 1.0:
        raise ConfigError(
            f"{source}: coupling: contraction constant {rep['zeta0']:.4g} at the true parameter "
            f"(domain max {rep['domain_max']:.4g}) violates budget {scen.theta_set.contraction_budget}"
        )
    return rep


def load_scenario(path, check: bool = True, **overrides) -> Scenario:
    """Read a JSON scenario file. ``overrides`` replace fields of the ``sim`` block."""
    path = Path(path)
    if not path.exists() and (SCENARIO_DIR / path.name).exists():
        path = SCENARIO_DIR / path.name
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    sim = data.setdefault("sim", {})
    for k, v in overrides.items():
        if v is not None:
            sim[k] = v
    return parse_scenario(data, str(path), check=check)


def scenario_to_dict(scen: Scenario) -> dict:
    """Resolved, fully explicit dictionary form (re-parses to an identical scenario)."""
    cfg = asdict(scen.config)
    for k in ("n", "m", "r"):
        cfg.pop(k)
    ts = scen.theta_set
    spec = scen.spec
    if isinstance(spec, CategoricalAtoms):
        dist = {"family": "categorical", "atoms": [_theta_dict(a) for a in spec.atoms],
                "zeta": spec.zeta.tolist(), "delta": spec.delta}
    else:
        dist = {"family": "gaussian1d", "theta_lo": _theta_dict(spec.theta_lo), "theta_hi": _theta_dict(spec.theta_hi),
                "zeta": spec.zeta.tolist(), "delta": spec.delta, "grid": spec.grid,
                "zeta_lo": list(spec.zeta_lo), "zeta_hi": list(spec.zeta_hi)}
    return {
        "name": scen.name,
        "dims": {"n": scen.config.n, "m": scen.config.m, "r": scen.config.r},
        "R": np.atleast_2d(scen.R).tolist(),
        "noise": {"D": scen.noise.D.tolist(), "Sigma": scen.noise.Sigma.tolist()},
        "coupling": {"Gamma": scen.coupling.Gamma.tolist(), "c": scen.coupling.c.tolist(),
                     "eta": scen.coupling.eta.tolist()},
        "theta_set": {
            "box_lo": ts.box_lo.tolist(), "box_hi": ts.box_hi.tolist(),
            "controllability_margin": ts.controllability_margin,
            "observability_margin": ts.observability_margin,
            "q_floor": ts.q_floor, "contraction_budget": ts.contraction_budget,
            "invertible_B_margin": ts.invertible_B_margin,
        },
        "distribution": dist,
        "sim": cfg,
    }


def with_sim(scen: Scenario, **changes) -> Scenario:
    """Copy of ``scen`` with some simulation settings replaced."""
    return replace(scen, config=replace(scen.config, **changes))
