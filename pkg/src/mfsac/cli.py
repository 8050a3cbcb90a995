"""
Command-line entry point.

    mfsac simulate  --scenario base.json --out runs/base
    mfsac solve-mf  --scenario scalar_two_atom.json --out mass_signal.csv
    mfsac evaluate  runs/a runs/b --equal-cost --out reports
    mfsac sweep     --scenario scalar_two_atom.json --param N --values 10 40 160 --out runs/sweep
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads() -> None:
    # must run before numpy is first imported to take effect
    cap = os.environ.get("MFSAC_THREADS")
    if cap:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, cap)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        out["mode"] = args.mode
    return out


def cmd_simulate(args) -> int:
    from .config import load_scenario
    from .simulation import run_scenario

    scen = load_scenario(args.scenario, **_overrides(args))
    out = Path(args.out)
    art = run_scenario(scen, out)
    print(f"wrote {out} ({scen.config.N} agents, T={scen.config.T:g}, {art.wall_time:.1f}s)")
    return 0


def cmd_solve_mf(args) -> int:
    from . import mf_solver as mf
    from .config import load_scenario

    # the solver runs its own contraction check and reports ContractionViolated
    scen = load_scenario(args.scenario, check=False)
    sig = mf.solve_mf_system(scen.spec, scen.coupling, scen.R, horizon=args.horizon, tol=args.tol, h=args.h)
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "mass_signal.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    sig.to_csv(out)
    d = sig.info
    ratio = max(d.ratios) if d.ratios else 0.0
    print(f"wrote {out}: {d.iterations} iterations, final gap {d.gaps[-1]:.3g}, max ratio {ratio:.3g}")
    return 0


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def cmd_evaluate(args) -> int:
    from . import evaluation as ev
    from .errors import MissingRun

    if not (args.nash or args.equal_cost or args.consistency):
        raise SystemExit("choose at least one of --nash, --equal-cost, --consistency")
    runs = [ev.load_run(p) for p in args.runs]
    out = Path(args.out) if args.out else Path(args.runs[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    summary = []

    if args.nash:
        rows, eps = [], []
        for run in runs:
            rep = ev.nash_gap_stored(run, n_probe=args.probes)
            rows += rep.rows()
            eps.append((rep.N, rep.epsilon_observed))
            summary.append(f"nash {run.path}: N={rep.N} epsilon_observed={rep.epsilon_observed:.6g}")
        _write_rows(out / "nash_gap.csv", ["N", "agent_id", "J_played", "J_best_response", "gap"], rows)
        _write_rows(out / "nash_epsilon.csv", ["N", "epsilon_observed"], sorted(eps))

    if args.equal_cost:
        groups: dict = {}
        for run in runs:
            cfg = run.config
            key = (cfg.N, cfg.T, cfg.seed)
            groups.setdefault(key, {})[cfg.mode] = run
        table = {}
        for key, pair in sorted(groups.items()):
            if "adaptive" not in pair or "oracle" not in pair:
                raise MissingRun(f"no matching adaptive/oracle pair for N={key[0]}, T={key[1]:g}, seed={key[2]}")
            table[f"N={key[0]} T={key[1]:g} seed={key[2]}"] = pair
        rows = ev.equal_cost_report(table)
        _write_rows(out / "equal_cost.csv", ["label", "median_abs_gap", "median_rel_gap", "agents"],
                    [[r.label, r.median_abs_gap, r.median_rel_gap, r.n_agents] for r in rows])
        summary += [f"equal-cost {r.label}: median relative gap {r.median_rel_gap:.4g}" for r in rows]

    if args.consistency:
        import numpy as np

        rows = []
        for run in runs:
            est = np.loadtxt(run.path / "estimate_summary.csv", delimiter=",", skiprows=1, ndmin=2)
            costs = np.loadtxt(run.path / "costs.csv", delimiter=",", skiprows=1, ndmin=2)
            ratio = costs[:, 5] / costs[:, 4]
            E = est.shape[0] - 1
            picks = [0, E // 4, E // 2, E]
            rows.append([str(run.path)] + [est[k, 1] for k in picks] + [est[-1, 3], ratio.min(), ratio.max()])
            summary.append(f"consistency {run.path}: median error " + " -> ".join(f"{est[k, 1]:.4g}" for k in picks)
                           + f"; avg|x|^2 ratio in [{ratio.min():.3f}, {ratio.max():.3f}]")
        _write_rows(out / "consistency.csv", ["run", "err_t0", "err_T4", "err_T2", "err_T", "zeta_err_T",
                                              "x2_ratio_min", "x2_ratio_max"], rows)

    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return 0


def cmd_sweep(args) -> int:
    from dataclasses import fields

    from . import rng as rngmod
    from .config import load_scenario
    from .simulation import SimConfig, run_scenario

    kinds = {f.name: f.type for f in fields(SimConfig)}
    if args.param not in kinds:
        raise SystemExit(f"unknown sweep parameter {args.param!r}")
    base = load_scenario(args.scenario, **_overrides(args))
    seed0 = base.config.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for k, raw in enumerate(args.values):
        val = _parse_value(raw)
        seed = seed0 if args.same_seed else rngmod.derive_seed(seed0, k)
        scen = load_scenario(args.scenario, **{**_overrides(args), args.param: val, "seed": seed})
        d = out / f"{args.param}={raw}"
        run_scenario(scen, d)
        index.append({"param": args.param, "value": val, "seed": seed, "dir": d.name})
        (out / "index.json").write_text(json.dumps(index, indent=2))
        print(f"wrote {d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfsac", description="Adaptive mean-field LQG population simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario and write its artifacts")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("adaptive", "oracle", "deviation"))
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a sim field (JSON value)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve-mf", help="solve the mean-field system offline")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--horizon", type=float)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--h", type=float, default=1e-2)
    s.set_defaults(func=cmd_solve_mf)

    s = sub.add_parser("evaluate", help="cost, Nash-gap and consistency reports from run directories")
    s.add_argument("runs", nargs="+")
    s.add_argument("--nash", action="store_true")
    s.add_argument("--equal-cost", action="store_true")
    s.add_argument("--consistency", action="store_true")
    s.add_argument("--probes", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="one run per value of a sim parameter")
    s.add_argument("--scenario", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("adaptive", "oracle", "deviation"))
    s.add_argument("--same-seed", action="store_true", help="use the base seed for every value")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, MfsacError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mfsac: config error: {exc}", file=sys.stderr)
        return 2
    except MfsacError as exc:
        print(f"mfsac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mfsac: io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
