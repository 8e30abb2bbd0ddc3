"""Command-line front end: load a scenario, run one experiment, write CSV and JSON results."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import rng
from .errors import MFBridgeError
from .game import load_scenario
from .ng import PolicyProfile, SolverOptions, ng_trajectory, solve_ng_equilibrium
from .presets import BUILTIN, builtin_game
from .prohorov import run_lemma_suite
from .regret import REGRET_COLUMNS, PREDICTORS, exact_regret, mc_regret, stationary_regret
from .sim import default_workers, resemblance_probability
from .stationary import StationaryOptions, solve_stationary_equilibrium

CSV_SCHEMAS = {
    "residual_table.csv": ("t", "s", "residual"),
    "convergence.csv": ("n", "t", "epsilon", "fraction", "ci_lo", "ci_hi", "replications", "seed"),
    "regret.csv": REGRET_COLUMNS,
    "stationary_regret.csv": REGRET_COLUMNS,
}

DEFAULTS = dict(scenario=None, out=".", n=None, eps=[0.1], reps=200, seed=0, workers=None, predictor="lazy",
                equilibrium=None, mode="auto", search="greedy-backward", budget=64, cases=1000,
                truncation_eps=0.05)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


class PlanError(MFBridgeError):
    """Invalid experiment plan."""


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _labels(space):
    return [lab.item() if hasattr(lab, "item") else lab for lab in space.labels]


def resolve_scenario(spec: str):
    if spec is None:
        raise PlanError("--scenario is required")
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN:
            raise PlanError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN)}")
        return builtin_game(name)
    return load_scenario(spec)


def build_plan(args) -> dict:
    """Merge defaults, an optional JSON plan file and explicit flags (flags win)."""
    plan = dict(DEFAULTS)
    if args.plan:
        try:
            with open(args.plan, encoding="utf-8") as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise PlanError(f"cannot read plan file {args.plan}: {exc}") from None
        unknown = set(extra) - set(DEFAULTS)
        if unknown:
            raise PlanError(f"unknown plan keys: {', '.join(sorted(unknown))}")
        plan.update(extra)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            plan[key] = val
    if plan["workers"] is None:
        plan["workers"] = default_workers()
    if plan["n"] is not None:
        plan["n"] = [int(v) for v in np.atleast_1d(plan["n"])]
        if any(v < 2 for v in plan["n"]):
            raise PlanError("every n in the grid must be at least 2")
    plan["eps"] = [float(v) for v in np.atleast_1d(plan["eps"])]
    if any(not 0 < e < 1 for e in plan["eps"]):
        raise PlanError("every epsilon must lie in (0, 1)")
    if int(plan["reps"]) < 1:
        raise PlanError("--reps must be positive")
    if int(plan["workers"]) < 1:
        raise PlanError("--workers must be positive")
    if plan["predictor"] not in PREDICTORS:
        raise PlanError(f"unknown predictor {plan['predictor']!r}")
    if plan["equilibrium"] is not None and not Path(plan["equilibrium"]).is_file():
        raise PlanError(f"equilibrium file {plan['equilibrium']} does not exist")
    return plan


def _out_dir(plan) -> Path:
    out = Path(plan["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _profile(game, plan):
    """Profile from --equilibrium when given, otherwise solved afresh."""
    if plan["equilibrium"] is None:
        return solve_ng_equilibrium(game).profile
    with open(plan["equilibrium"], encoding="utf-8") as fh:
        data = json.load(fh)
    arr = np.asarray(data.get("profile"), dtype=float)
    if arr.shape != (game.horizon, game.S.size, game.X.size):
        raise PlanError(f"equilibrium profile has shape {arr.shape}, expected "
                        f"{(game.horizon, game.S.size, game.X.size)}")
    return PolicyProfile.from_array(game, arr)


def _transient(game):
    if game.stationary:
        raise PlanError("this command needs a transient scenario; use 'stationary' instead")


def cmd_solve_ng(plan) -> int:
    game = resolve_scenario(plan["scenario"])
    _transient(game)
    sol = solve_ng_equilibrium(game, options=SolverOptions())
    out = _out_dir(plan)
    write_json(out / "equilibrium.json", {
        "scenario": game.name,
        "states": _labels(game.S),
        "actions": _labels(game.X),
        "status": sol.status,
        "residual": float(sol.residual),
        "iterations": int(sol.iterations),
        "profile": sol.profile.array.tolist(),
        "trajectory": {
            "sigma": sol.trajectory.sigma_array.tolist(),
            "tau": [t.weights.tolist() for t in sol.trajectory.taus],
        },
    })
    rows = [[t, s, _fmt(sol.table[t - 1, i])] for t in range(1, game.horizon + 1)
            for i, s in enumerate(_labels(game.S))]
    write_csv(out / "residual_table.csv", CSV_SCHEMAS["residual_table.csv"], rows)
    print(f"status={sol.status} residual={sol.residual:.3e} iterations={sol.iterations}")
    return EXIT_OK


def cmd_converge(plan) -> int:
    game = resolve_scenario(plan["scenario"])
    _transient(game)
    ns = plan["n"] or [10, 50, 200, 1000]
    profile = _profile(game, plan)
    traj = ng_trajectory(game, game.initial_sigma, profile)
    rows = []
    for n in ns:
        for eps in plan["eps"]:
            seed = rng.derive_seed(int(plan["seed"]), n)
            res = resemblance_probability(game, profile, traj, n, eps, int(plan["reps"]), seed,
                                          workers=int(plan["workers"]))
            for r in res:
                rows.append([n, r.period, _fmt(eps), _fmt(r.fraction), _fmt(r.ci_lo), _fmt(r.ci_hi),
                             r.replications, plan["seed"]])
    write_csv(_out_dir(plan) / "convergence.csv", CSV_SCHEMAS["convergence.csv"], rows)
    print(f"wrote {len(rows)} rows")
    return EXIT_OK


def _summary_entry(report):
    best = report.max_regret()
    return {"regret": best.regret, "stderr": best.stderr, "t": best.t,
            "s1": best.s1.item() if hasattr(best.s1, "item") else best.s1, "mode": best.mode,
            "search": best.search, "truncation_bound": best.truncation_bound}


def cmd_regret(plan) -> int:
    game = resolve_scenario(plan["scenario"])
    _transient(game)
    ns = plan["n"] or [2, 3, 4, 10]
    profile = _profile(game, plan)
    rows, summary, lower = [], {}, False
    for n in ns:
        mode = plan["mode"]
        if mode == "auto":
            mode = "exact" if n <= 4 else "mc"
        if mode == "exact":
            report = exact_regret(game, n, profile, plan["predictor"])
        elif mode == "mc":
            report = mc_regret(game, n, profile, plan["predictor"], int(plan["reps"]), int(plan["seed"]),
                               int(plan["workers"]), search=plan["search"], budget=int(plan["budget"]))
        else:
            raise PlanError(f"unknown mode {mode!r}")
        lower = lower or report.lower_bound_only
        rows.extend(r.as_csv() for r in report.rows)
        summary[str(n)] = _summary_entry(report)
    out = _out_dir(plan)
    write_csv(out / "regret.csv", REGRET_COLUMNS, rows)
    write_json(out / "summary.json", {"predictor": plan["predictor"], "lower_bound_only": lower,
                                      "max_regret": summary})
    for n, entry in summary.items():
        print(f"n={n} max_regret={entry['regret']:.6g}")
    return EXIT_OK


def cmd_stationary(plan) -> int:
    game = resolve_scenario(plan["scenario"])
    if not game.stationary:
        raise PlanError("the stationary command needs a scenario with an infinite horizon")
    eq = solve_stationary_equilibrium(game, StationaryOptions())
    out = _out_dir(plan)
    write_json(out / "stationary.json", {
        "scenario": game.name,
        "states": _labels(game.S),
        "actions": _labels(game.X),
        "status": eq.status,
        "chi": eq.chi.rows.tolist(),
        "sigma": eq.sigma.weights.tolist(),
        "residual": float(eq.residual),
        "invariance_gap": float(eq.invariance_gap),
        "residual_table": eq.table.tolist(),
    })
    rows = []
    for n in plan["n"] or [10]:
        report = stationary_regret(game, n, eq.chi, eq.sigma, int(plan["reps"]), int(plan["seed"]),
                                   int(plan["workers"]), epsilon=float(plan["truncation_eps"]))
        rows.extend(r.as_csv() for r in report.rows)
    write_csv(out / "stationary_regret.csv", REGRET_COLUMNS, rows)
    print(f"status={eq.status} residual={eq.residual:.3e} invariance_gap={eq.invariance_gap:.3e}")
    return EXIT_OK


def cmd_verify_lemmas(plan, checks=None) -> int:
    cases = int(plan["cases"])
    if cases < 1:
        raise PlanError("--cases must be positive")
    results = run_lemma_suite(int(plan["seed"]), cases, checks)
    failed = 0
    for name, (ok, bad) in results.items():
        print(f"{name}: {ok} passed, {bad} failed")
        failed += bad
    return EXIT_VIOLATION if failed else EXIT_OK


COMMANDS = {
    "solve-ng": cmd_solve_ng,
    "converge": cmd_converge,
    "regret": cmd_regret,
    "stationary": cmd_stationary,
    "verify-lemmas": cmd_verify_lemmas,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfbridge", description="Nonatomic-game equilibria and their n-player counterparts.")
    p.add_argument("--schema", action="store_true", help="print the CSV schemas and exit")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="scenario JSON path or builtin:NAME")
        s.add_argument("--out", help="output directory (default: current)")
        s.add_argument("--plan", help="JSON file with any of the options below")
        s.add_argument("--n", type=int, nargs="+", help="player counts")
        s.add_argument("--eps", type=float, nargs="+", help="resemblance radii")
        s.add_argument("--reps", type=int, help="Monte Carlo replications")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int, help="worker processes (default: MFBRIDGE_WORKERS or 1)")
        s.add_argument("--predictor", choices=PREDICTORS)
        s.add_argument("--equilibrium", help="equilibrium.json from solve-ng")
        s.add_argument("--mode", choices=("auto", "exact", "mc"))
        s.add_argument("--search", choices=("greedy-backward", "dirac-profiles"))
        s.add_argument("--budget", type=int, help="largest deviation set enumerated exhaustively")
        s.add_argument("--cases", type=int, help="random cases per lemma")
        s.add_argument("--truncation-eps", dest="truncation_eps", type=float,
                       help="target accuracy fixing the stationary truncation horizon")
    return p


def main(argv=None, checks=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.schema:
        for name, cols in CSV_SCHEMAS.items():
            print(f"{name}: {','.join(cols)}")
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    try:
        plan = build_plan(args)
        if args.command == "verify-lemmas":
            return cmd_verify_lemmas(plan, checks)
        return COMMANDS[args.command](plan)
    except (MFBridgeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
