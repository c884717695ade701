"""Command-line front end: ``plcmac <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baseline import LABEL as DA_LABEL
from .baseline import solve_da
from .config import (
    ConfigError,
    TimingParams,
    builtin_config,
    check_cond_numeric,
    check_window_rule,
    load_config,
)
from .dynamics import integrate_ode, iterate_transient
from .equilibrium import CondViolationError, scan_fixed_points, solve_equilibrium
from .simulator import run_simulation, summarize_runs

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2


class UsageError(ConfigError):
    pass


def parse_int_list(text: str) -> list[int]:
    """``"5"``, ``"2,5,10"``, ``"1..10"`` or a mix such as ``"1..3,8"``."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise UsageError(f"empty range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"not an integer list: {text!r}") from None
    if not out:
        raise UsageError(f"empty list: {text!r}")
    return out


def _resolve_config(args):
    if args.config:
        path = Path(args.config)
        if path.exists():
            return load_config(path)
        # bare preset names are accepted too
        return builtin_config(args.config), TimingParams()
    return builtin_config(args.preset or "ca1"), TimingParams()


def _n_values(args) -> list[int]:
    ns = parse_int_list(args.n)
    if min(ns) < 1:
        raise UsageError("N must be at least 1")
    return ns


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Outputs:
    """Tracks written files so an interrupted run leaves nothing half-written."""

    def __init__(self, out_dir: Path, as_json: bool):
        self.dir = out_dir
        self.as_json = as_json
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def table(self, name: str, header: list[str], rows: list[list]) -> None:
        with open(self.path(name + ".csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        if self.as_json:
            records = [
                {h: (float(v) if isinstance(v, (float, np.floating)) else v) for h, v in zip(header, row)}
                for row in rows
            ]
            with open(self.path(name + ".json"), "w", encoding="utf-8") as fh:
                json.dump(records, fh, indent=2, sort_keys=True)
                fh.write("\n")

    def remove_all(self) -> None:
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def cmd_solve(args, out: Outputs) -> int:
    config, timing = _resolve_config(args)
    rows = []
    for n in _n_values(args):
        sol = solve_equilibrium(config, n, timing, tol=args.tol)
        row = sol.as_row()
        rows.append(list(row.values()))
        header = list(row)
    out.table("equilibrium", header, rows)
    for r in rows:
        print(f"N={r[0]} pe={r[1]:.6f} S={r[2]:.6f} gamma={r[3]:.6f}")
    return EXIT_OK


def cmd_scan(args, out: Outputs) -> int:
    config, timing = _resolve_config(args)
    rows = []
    for n in _n_values(args):
        roots = scan_fixed_points(config, n, grid=args.grid)
        print(f"N={n}: {len(roots)} root(s) " + " ".join(f"{r.pe:.6f}" for r in roots))
        for k, r in enumerate(roots):
            rows.append([n, k, r.pe, r.residual])
    out.table("fixed_points", ["N", "root", "pe", "residual"], rows)
    return EXIT_OK


def _parse_state(text: str, m: int, total: int) -> np.ndarray:
    if text is None:
        n0 = np.zeros(m)
        n0[0] = total
        return n0
    vals = np.array([float(v) for v in text.split(",")])
    if vals.size != m:
        raise UsageError(f"initial state needs {m} entries, got {vals.size}")
    return vals


def cmd_transient(args, out: Outputs) -> int:
    config, _ = _resolve_config(args)
    ns = _n_values(args)
    if len(ns) != 1:
        raise UsageError("transient takes a single N")
    n0 = _parse_state(args.init, config.m, ns[0])
    res = iterate_transient(config, n0, max_steps=args.max_steps, eps=args.tol)
    res.write_csv(out.path("transient.csv"))
    status = "converged" if res.converged else "did not converge"
    print(f"{status} after {res.n_steps} steps, residual {res.final_residual:.3g}")
    print("final n = " + " ".join(f"{v:.6f}" for v in res.final))
    return EXIT_OK


def cmd_ode(args, out: Outputs) -> int:
    config, _ = _resolve_config(args)
    y0 = _parse_state(args.init, config.m, 1)
    traj = integrate_ode(config, y0, args.t_end, args.dt)
    header = ["time"] + [f"y_{i}" for i in range(config.m)] + ["rho"]
    rows = [[t, *y, r] for t, y, r in zip(traj.times, traj.y, traj.rho)]
    out.table("ode", header, rows)
    print("final y = " + " ".join(f"{v:.6f}" for v in traj.final.y) + f" rho={traj.final.rho:.6f}")
    return EXIT_OK


def _sim_job(config, n, timing, slots, seed, pe_window):
    return run_simulation(config, n, timing, total_slots=slots, seed=seed, pe_window=pe_window)


def _simulate_all(args, config, timing, ns):
    seeds = parse_int_list(args.seeds)
    items = [(config, n, timing, args.slots, s, args.pe_window) for n in ns for s in seeds]
    return _map(_sim_job, items, args.jobs)


def cmd_simulate(args, out: Outputs) -> int:
    config, timing = _resolve_config(args)
    reports = _simulate_all(args, config, timing, _n_values(args))
    rows = []
    for r in reports:
        sub = out.dir / f"N{r.n_stations}" / f"seed{r.seed}"
        for name in ("summary.csv", "pe_trace.csv", "success_ids.csv"):
            out.path(str(Path(f"N{r.n_stations}") / f"seed{r.seed}" / name))
        r.write_csv(sub)
        rows.append(
            [r.n_stations, r.seed, r.total_slots, r.throughput, r.gamma_est,
             r.idle_slots, r.success_slots, r.collision_slots]
        )
    header = ["N", "seed", "slots", "throughput", "gamma", "idle_slots", "success_slots", "collision_slots"]
    out.table("simulation", header, rows)
    for r in reports:
        print(f"N={r.n_stations} seed={r.seed} S={r.throughput:.6f} gamma={r.gamma_est:.6f}")
    return EXIT_OK


def cmd_compare(args, out: Outputs) -> int:
    config, timing = _resolve_config(args)
    ns = _n_values(args)
    reports = _simulate_all(args, config, timing, ns)
    rows = []
    for n in ns:
        summ = summarize_runs([r for r in reports if r.n_stations == n])
        drift = solve_equilibrium(config, n, timing, tol=args.tol)
        da = solve_da(config, n, timing)
        rows.append(
            [n, summ.throughput, summ.throughput_stderr, drift.throughput, da.throughput, summ.gamma, drift.gamma]
        )
        print(
            f"N={n} S_sim={summ.throughput:.5f}+-{summ.throughput_stderr:.5f} "
            f"S_drift={drift.throughput:.5f} S_da={da.throughput:.5f} ({DA_LABEL})"
        )
    header = ["N", "S_sim", "S_sim_stderr", "S_drift", "S_da", "gamma_sim", "gamma_drift"]
    out.table("compare", header, rows)
    return EXIT_OK


def cmd_check(args, out: Outputs) -> int:
    config, _ = _resolve_config(args)
    t3 = check_window_rule(config)
    num = check_cond_numeric(config)
    rows = []
    for a, b in zip(t3, num):
        print(f"{a.stage}->{a.stage + 1}: window_rule={a.verdict.value} ({a.detail}) cond={b.verdict.value} ({b.detail})")
        rows.append([f"{a.stage}->{a.stage + 1}", a.verdict.value, a.detail, b.verdict.value, b.detail])
    out.table("check", ["transition", "window_rule", "window_rule_detail", "cond", "cond_detail"], rows)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "scan": cmd_scan,
    "transient": cmd_transient,
    "ode": cmd_ode,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--preset", help="ca1 (default), ca2ca3 or counterexample")
    src.add_argument("--config", help="YAML/JSON config file or preset name")
    common.add_argument("--n", default="10", help="N, list 2,5,10 or range 1..10")
    common.add_argument("--out", default=None, help="output directory (default $PLCMAC_DEFAULT_OUT or .)")
    common.add_argument("--json", action="store_true", help="also write JSON mirrors")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--slots", type=int, default=1_000_000)
    sim.add_argument("--seeds", default="1", help="seed list or range, e.g. 1..10")
    sim.add_argument("--pe-window", type=int, default=500)

    parser = argparse.ArgumentParser(prog="plcmac", description="1901 CSMA/CA drift model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="unique equilibrium per N")
    p = sub.add_parser("scan", parents=[common], help="all fixed points per N")
    p.add_argument("--grid", type=int, default=10_000)
    p = sub.add_parser("transient", parents=[common], help="iterate the drift map")
    p.add_argument("--init", help="initial counts, comma separated (default all at stage 0)")
    p.add_argument("--max-steps", type=int, default=100_000)
    p = sub.add_parser("ode", parents=[common], help="integrate the mean-field ODE")
    p.add_argument("--init", help="initial fractions (default all at stage 0)")
    p.add_argument("--t-end", type=float, default=200.0)
    p.add_argument("--dt", type=float, default=0.5)
    sub.add_parser("simulate", parents=[common, sim], help="slot-level simulation")
    sub.add_parser("compare", parents=[common, sim], help="simulation vs drift vs D.A.")
    sub.add_parser("check", parents=[common], help="window/deferral condition checks")
    return parser


_DEFAULT_TOL = {"transient": 1e-8}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.tol is None:
        args.tol = _DEFAULT_TOL.get(args.command, 1e-12)
    out_dir = Path(args.out or os.environ.get("PLCMAC_DEFAULT_OUT") or ".")
    out = Outputs(out_dir, args.json)
    try:
        return COMMANDS[args.command](args, out)
    except CondViolationError as exc:
        print(f"error: {exc}; run `plcmac scan` (scan_fixed_points) instead", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        out.remove_all()
        print("interrupted; partial outputs removed", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001
        out.remove_all()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
