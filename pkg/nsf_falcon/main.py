import argparse
import os
import sys
from datetime import datetime
from typing import Callable

import numpy as np
import pytz

from nsf_falcon.boundary import admissibility_check
from nsf_falcon.budgets import additivity_verdicts, audit, windowed_audits
from nsf_falcon.errors import RunAborted
from nsf_falcon.exporter import export_timeseries, write_budget_csv, write_json, write_states
from nsf_falcon.mms import MMS_KINDS, convergence_study, manufactured_case, weak_strong_study
from nsf_falcon.scenario_dao import load_boundary, load_eos_document, load_scenario
from nsf_falcon.solver import run
from nsf_falcon.thermo import check_eos
from nsf_falcon.verdicts import Verdict, print_verdicts


NSF_SEED: int = int(os.environ.get("NSF_SEED", "0"))

NSF_TIMEZONE: str = os.environ.get("NSF_TIMEZONE") or "Asia/Tokyo"

# 収束次数の下限（一次風上）
MIN_ORDER: float = 0.8


def _banner() -> None:
    tz = pytz.timezone(NSF_TIMEZONE)
    exec_time: str = datetime.now(tz).strftime("%Y-%m-%d %H:%M:%S %Z")
    print(f"Execution time: {exec_time}")


def _exit_code(verdicts: list[Verdict]) -> int:
    return 0 if print_verdicts(verdicts) else 1


def cmd_check_eos(args: argparse.Namespace) -> int:
    eos, transport = load_eos_document(args.file)
    print(f"EOS: shape={eos.shape} a={eos.a:g} p_inf={eos.p_inf:g} third_law={eos.third_law}")
    return _exit_code(check_eos(eos, transport, seed=NSF_SEED, samples=args.samples))


def cmd_audit_boundary(args: argparse.Namespace) -> int:
    eos, spec = load_boundary(args.scenario)
    verdict = admissibility_check(eos, spec)
    for face in spec.faces:
        margin = verdict.face_margins.get(face.pos)
        detail = "" if margin is None else f" margin={margin:.6g}"
        print(f"face x={face.pos:g} n={face.normal:+g} u_b·n={face.u_b_dot_n:+.6g} -> {face.label.value}{detail}")
    return _exit_code(verdict.verdicts)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, seed=NSF_SEED)
    print(f"Running {scenario.name}: {scenario.mesh.n_cells} cells, t_end={scenario.config.t_end:g}")
    try:
        trajectory = run(scenario)
    except RunAborted as e:
        print(e)
        os.makedirs(args.out, exist_ok=True)
        if e.trajectory is not None:
            # 打ち切り前までの出力は残す
            write_states(e.trajectory, args.out)
        write_json(e.state_dump, os.path.join(args.out, "abort_state.json"))
        return 2
    reports = windowed_audits(trajectory, scenario.boundary)
    paths = export_timeseries(trajectory, reports, args.out)
    print(f"Wrote {len(paths)} files to {args.out} ({trajectory.steps[-1]} steps, {trajectory.floor_hits} floor hits)")
    return _exit_code([v for r in reports for v in r.verdicts])


def cmd_audit(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, seed=NSF_SEED)
    trajectory = run(scenario)
    report = audit(trajectory, scenario.boundary)
    windows = windowed_audits(trajectory, scenario.boundary)
    report.verdicts.extend(additivity_verdicts(trajectory, scenario.boundary, windows))
    data = report.to_dict()
    data.update(scenario=scenario.name, n_cells=scenario.mesh.n_cells, floor_hits=trajectory.floor_hits)
    write_json(data, args.out)
    if args.csv:
        write_budget_csv(windows, args.csv)
    print(f"mass residual {report.mass_residual:.6e}, energy residual {report.energy_residual:.6e}, entropy production {report.entropy_production:.6e}")
    return _exit_code(report.verdicts)


def cmd_converge(args: argparse.Namespace) -> int:
    case = manufactured_case(args.kind)
    report = convergence_study(case, args.resolutions, t_end=args.t_end, cfl=args.cfl)
    for name, seq in report.errors.items():
        print(f"{name}: " + " ".join(f"{e:.3e}" for e in seq) + f" order={report.orders[name]:.3f}")
    if report.energy_exact:
        print(f"energy residual exact to floor (max {max(report.energy_residuals):.3e})")
    else:
        print(f"energy residual order={report.energy_order:.3f}")
    verdicts = [
        Verdict(f"order {name} >= {MIN_ORDER}", bool(np.isnan(order) or order >= MIN_ORDER), f"{order:.3f}")
        for name, order in report.orders.items()
    ]
    verdicts.append(
        Verdict(
            f"energy residual order >= {MIN_ORDER}",
            bool(report.energy_exact or report.energy_order >= MIN_ORDER),
            "exact to floor" if report.energy_exact else f"{report.energy_order:.3f}",
        )
    )
    verdicts.append(Verdict("monotone error sequences", report.monotone, ", ".join(report.flagged)))
    if args.out:
        write_json(
            {
                "kind": report.kind,
                "resolutions": report.resolutions,
                "errors": report.errors,
                "orders": report.orders,
                "energy_residuals": report.energy_residuals,
                "energy_exact": report.energy_exact,
            },
            args.out,
        )
    return _exit_code(verdicts)


def cmd_weak_strong(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, seed=NSF_SEED)
    results = weak_strong_study(scenario, args.resolutions, factor=args.factor)
    verdicts = []
    finals = []
    for r in results:
        final = r.trace.integrals[-1]
        finals.append(final)
        print(f"n={r.n_cells}: E(t_end)={final:.6e} eta={r.fit.eta:.3e} rate={r.fit.rate:.3e}")
        verdicts.append(Verdict(f"relative energy n={r.n_cells} >= 0", min(r.trace.integrals) >= 0.0))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            r.trace.to_csv(os.path.join(args.out, f"relent_{r.n_cells}.csv"))
    if len(finals) > 1:
        verdicts.append(Verdict("relative energy decreases under refinement", all(b < a for a, b in zip(finals, finals[1:]))))
    return _exit_code(verdicts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsf-falcon", description="Compressible Navier-Stokes-Fourier toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-eos", help="check an eos.json document")
    p.add_argument("file")
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=cmd_check_eos)

    p = sub.add_parser("audit-boundary", help="classify faces and print admissibility margins")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_audit_boundary)

    p = sub.add_parser("run", help="run a scenario and export the time series")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="run a scenario and audit its budgets")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("converge", help="manufactured-solution convergence study")
    p.add_argument("kind", choices=MMS_KINDS)
    p.add_argument("--resolutions", type=int, nargs="+", default=[32, 64, 128])
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--cfl", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("weak-strong", help="relative energy against refined reference runs")
    p.add_argument("scenario")
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--resolutions", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_weak_strong)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Entry point of nsf-falcon. Returns 0 only when every verdict passes.
    """
    args = build_parser().parse_args(argv)
    _banner()
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except RuntimeError as e:
        # NsfError と入出力の失敗
        print(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
