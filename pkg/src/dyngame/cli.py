"""Command-line interface: solve, curve, simulate, estimate, mc, highorder."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .equilibrium import solve_equilibrium
from .estimation import WeightSchedule, k_stage_estimate
from .game import GameSpec
from .harness import (
    McConfig,
    McReport,  # noqa: F401  (public re-export for library users)
    curve_csv,
    resolve_threads,
    run_monte_carlo,
    variance_curve,
)
from .highorder import highorder_table
from .sampling import Dataset, draw_dataset


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _spec_from_config(cfg: dict) -> GameSpec:
    return GameSpec.from_dict(cfg)


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_solve(args) -> int:
    spec = _spec_from_config(_load_config(args.config))
    sol = solve_equilibrium(spec)
    payload = json.dumps({
        "p_star": sol.p_star.tolist(),
        "m_star": sol.m_star.tolist(),
        "residual": sol.residual,
        "iterations": sol.iterations,
    }, indent=2) + "\n"
    _emit(payload, args.out)
    return 0


def _cmd_curve(args) -> int:
    spec = _spec_from_config(_load_config(args.config))
    rows = variance_curve(spec, args.k_max)
    _emit(curve_csv(rows), args.out)
    return 0


def _cmd_simulate(args) -> int:
    spec = _spec_from_config(_load_config(args.config))
    sol = solve_equilibrium(spec)
    ds = draw_dataset(sol.p_star, sol.m_star, args.n, args.seed)
    _emit(ds.to_csv(), args.out)
    return 0


def _cmd_estimate(args) -> int:
    spec = _spec_from_config(_load_config(args.config))
    ds = Dataset.from_csv(args.data)
    schedule = WeightSchedule(mode=args.weight_mode)
    trace = k_stage_estimate(ds, args.K, args.criterion, schedule, spec)
    payload = json.dumps({
        "alpha_by_stage": [a.tolist() for a in trace.alpha_by_stage],
        "ccp_by_stage": [p.tolist() for p in trace.ccp_by_stage],
        "criterion_by_stage": trace.criterion_by_stage,
        "diagnostics": trace.diagnostics,
        "failed": trace.failed,
    }, indent=2) + "\n"
    _emit(payload, args.out)
    return 0 if not trace.failed else 1


def _cmd_mc(args) -> int:
    raw = _load_config(args.config)
    cfg = McConfig(
        spec=_spec_from_config(raw),
        n=int(raw.get("n", 500)),
        S=int(raw.get("S", 1000)),
        k_list=tuple(raw.get("k_list", [1, 5, 10])),
        estimators=tuple(raw.get("estimators", ["kpml", "kmd-opt"])),
        base_seed=int(args.seed if args.seed is not None
                      else raw.get("base_seed", 20230815)),
    )
    report = run_monte_carlo(cfg, threads=resolve_threads(args.threads))
    _emit(report.to_csv(), args.out)
    return 0


def _cmd_highorder(args) -> int:
    raw = _load_config(args.config)
    spec = _spec_from_config(raw)
    k_list = [int(k) for k in args.k_list.split(",")] if args.k_list \
        else list(raw.get("k_list", [1, 2, 3, 4, 5, 10]))
    S = args.S if args.S is not None else int(raw.get("S", 1000))
    n = args.n if args.n is not None else int(raw.get("n", 500))
    seed = args.seed if args.seed is not None else int(raw.get("base_seed", 20230815))
    rows = highorder_table(spec, S=S, n=n, K_list=k_list, seed=seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K", "bias_rn", "var_rn", "mse_rn", "bias_ec", "var_ec", "mse_ec"])
    for r in rows:
        w.writerow([r["K"]] + [format(r[c], ".12g") for c in
                               ("bias_rn", "var_rn", "mse_rn",
                                "bias_ec", "var_ec", "mse_ec")])
    _emit(buf.getvalue(), args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyngame")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None):
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("solve", help="solve the equilibrium fixed point")
    common(sp)
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("curve", help="asymptotic variance vs number of stages")
    common(sp)
    sp.add_argument("--k-max", type=int, default=20)
    sp.set_defaults(func=_cmd_curve)

    sp = sub.add_parser("simulate", help="draw a dataset from the equilibrium")
    common(sp, seed_default=20230815)
    sp.add_argument("-n", type=int, default=500)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("estimate", help="run the K-stage estimator on a dataset")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset CSV path")
    sp.add_argument("--criterion", choices=["pml", "md"], default="pml")
    sp.add_argument("-K", type=int, default=1)
    sp.add_argument("--weight-mode", default="pml-equivalent",
                    choices=["pml-equivalent", "optimal-each-stage",
                             "optimal-last-only"])
    sp.set_defaults(func=_cmd_estimate)

    sp = sub.add_parser("mc", help="Monte Carlo replication study")
    common(sp)
    sp.set_defaults(func=_cmd_mc)

    sp = sub.add_parser("highorder", help="Monte Carlo table of high-order terms")
    common(sp)
    sp.add_argument("-n", type=int, default=None)
    sp.add_argument("--S", type=int, default=None)
    sp.add_argument("--k-list", default=None, help="comma-separated K values")
    sp.set_defaults(func=_cmd_highorder)
    return p


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError,
            np.linalg.LinAlgError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
