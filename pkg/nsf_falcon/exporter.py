import csv
import json
import os
from typing import Any, Iterable

from nsf_falcon.budgets import BudgetReport
from nsf_falcon.solver import LEDGER_TERMS, Trajectory


BUDGET_COLUMNS: tuple[str, ...] = ("t0", "t1", "mass_res", "energy_res", "entropy_prod")
STATE_COLUMNS: tuple[str, ...] = ("x", "rho", "u", "theta")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_rows(path: str, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise RuntimeError(f"Error writing {path}: {e}") from e
    return path


def write_states(trajectory: Trajectory, out_dir: str) -> list[str]:
    """One state_<t>.csv per output time."""
    x = trajectory.mesh.centers
    paths = []
    for state in trajectory.states:
        path = os.path.join(out_dir, f"state_{state.t:.6f}.csv")
        rows = ([_fmt(v) for v in row] for row in zip(x, state.rho, state.u, state.theta))
        paths.append(_write_rows(path, STATE_COLUMNS, rows))
    return paths


def write_fluxes(trajectory: Trajectory, path: str) -> str:
    """Cumulative boundary and volume integrals at every output time."""
    header = ("t", "steps") + LEDGER_TERMS
    rows = (
        [_fmt(t), str(steps)] + [_fmt(ledger[k]) for k in LEDGER_TERMS]
        for t, steps, ledger in zip(trajectory.times, trajectory.steps, trajectory.ledgers)
    )
    return _write_rows(path, header, rows)


def write_budget_csv(reports: list[BudgetReport], path: str) -> str:
    rows = (
        [_fmt(r.window[0]), _fmt(r.window[1]), _fmt(r.mass_residual), _fmt(r.energy_residual), _fmt(r.entropy_production)]
        for r in reports
    )
    return _write_rows(path, BUDGET_COLUMNS, rows)


def write_json(data: Any, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, allow_nan=True)
            f.write("\n")
    except OSError as e:
        raise RuntimeError(f"Error writing {path}: {e}") from e
    return path


def export_timeseries(trajectory: Trajectory, budgets: list[BudgetReport], path: str) -> list[str]:
    """
    Write states, cumulative fluxes and (when given) windowed budgets into the directory path.

    Returns:
        list[str]: written files, in write order
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise RuntimeError(f"Error creating output directory {path}: {e}") from e
    paths = write_states(trajectory, path)
    paths.append(write_fluxes(trajectory, os.path.join(path, "fluxes.csv")))
    if budgets:
        paths.append(write_budget_csv(budgets, os.path.join(path, "budgets.csv")))
    return paths
