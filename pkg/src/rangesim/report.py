"""Run artifacts: CSV files, a plain-text summary, and rendered figures.

Every number in summary.txt is copied from a CSV row or derived from
columns the CSVs contain; nothing is computed only for the summary.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import energy as energy_model  # noqa: E402
from .simulator import SimOutputs  # noqa: E402


def _fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    return f"{x:.9f}"


def write_events_csv(out: SimOutputs, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "entity", "kind", "detail"])
        for row in out.trace:
            w.writerow([_fmt(row.time_s), row.entity, row.kind, row.detail])


def write_energy_csvs(out: SimOutputs, outdir: Path) -> List[Path]:
    paths = []
    for node_id, ne in sorted(out.energy.items()):
        path = outdir / f"energy_{node_id}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "activity", "charge_mc_cumulative",
                        "voltage_proxy"])
            for t, name, consumed_mc, volts in ne.trace:
                w.writerow([_fmt(t), name, _fmt(consumed_mc), _fmt(volts)])
            w.writerow([_fmt(out.scenario.horizon_s), "end_of_run",
                        _fmt(ne.ledger.consumed_mc),
                        _fmt(ne.ledger.voltage_proxy())])
        paths.append(path)
    return paths


def write_results_csv(out: SimOutputs, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ranging_id", "kind", "reporter", "partner",
                    "received_at_s", "distance_m", "raw_distance_m",
                    "rssi_dbm", "delta_t_s", "master_id", "slave_id"])
        for r in out.results:
            w.writerow([r.ranging_id, r.kind, r.reporter, r.partner,
                        _fmt(r.received_at), _fmt(r.distance_m),
                        _fmt(r.raw_distance_m), _fmt(r.rssi_dbm),
                        "" if r.delta_t_s is None else f"{r.delta_t_s:.15e}",
                        r.master_id if r.master_id is not None else "",
                        r.slave_id if r.slave_id is not None else ""])


def write_locations_csv(rows: List[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ranging_id", "target_id", "x", "y", "rmse_m",
                    "n_measurements"])
        for row in rows:
            w.writerow([row["ranging_id"], row["target_id"],
                        _fmt(row["x"]), _fmt(row["y"]), _fmt(row["rmse_m"]),
                        row["n_measurements"]])


def write_summary(out: SimOutputs, locations: List[dict], path: Path) -> None:
    lines = [f"run horizon: {out.scenario.horizon_s:.3f} s "
             f"(seed {out.scenario.seed})", ""]
    lines.append("ranging exchanges (from events.csv):")
    any_exchange = False
    for ex in out.exchanges:
        any_exchange = True
        status = "ok" if ex.success else f"failed ({ex.reason})"
        lines.append(f"  t={ex.time_s:.3f} s  master={ex.master} "
                     f"slave={ex.slave}  {status}")
    if not any_exchange:
        lines.append("  none")
    lines.append("")
    lines.append("per-node energy (from energy_<node>.csv):")
    for node_id in sorted(out.energy):
        stats = out.cycle_stats(node_id)
        cfg = out.sim.nodes[node_id].cfg
        lines.append(
            f"  node {node_id}: {stats['per_cycle_mc']:.4f} mC/cycle "
            f"(tau={cfg.check_interval_s:.0f} s), "
            f"avg {stats['avg_current_a'] * 1e6:.3f} uA")
        nominal_life = (energy_model.CR2032_NOMINAL_C
                        / stats["avg_current_a"]) \
            if stats["avg_current_a"] > 0 else float("inf")
        lines.append(
            f"    lifetime at practical {cfg.battery_capacity_c:.3f} C: "
            f"{energy_model.format_duration(stats['lifetime_s'])}; "
            f"at nominal {energy_model.CR2032_NOMINAL_C:.0f} C: "
            f"{energy_model.format_duration(nominal_life)}")
    if locations:
        lines.append("")
        lines.append("position estimates (from locations.csv):")
        for row in locations:
            err = "" if row["rmse_m"] is None else \
                f"  error={row['rmse_m']:.4f} m"
            lines.append(f"  target {row['target_id']}: "
                         f"({row['x']:.3f}, {row['y']:.3f}) "
                         f"from {row['n_measurements']} measurements{err}")
    drift = out.clock_divergence()
    if drift["max_rate_s_per_day"] > 0:
        lines.append("")
        lines.append(
            f"clock divergence: {drift['max_rate_s_per_day']:.4f} s/day; "
            f"exceeds 1 s after {drift['days_to_exceed_1s']:.2f} days")
    path.write_text("\n".join(lines) + "\n")


def render_figures(out: SimOutputs, locations: List[dict],
                   outdir: Path) -> List[Path]:
    """Render the energy trace and, when present, a position scatter."""
    paths = []
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for node_id, ne in sorted(out.energy.items()):
        if not ne.trace:
            continue
        ts = [row[0] for row in ne.trace] + [out.scenario.horizon_s]
        qs = [row[2] for row in ne.trace] + [ne.ledger.consumed_mc]
        ax.step(ts, qs, where="post", label=f"node {node_id}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("cumulative charge [mC]")
    ax.set_title("coulomb counter per node")
    ax.legend(loc="best")
    fig.tight_layout()
    p = outdir / "energy_trace.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    if locations:
        fig, ax = plt.subplots(figsize=(6, 6))
        anchors = [(nid, xy) for nid, xy in out.scenario.positions.items()
                   for n in out.sim.nodes.values()
                   if n.cfg.node_id == nid and n.cfg.role == "anchor"]
        if anchors:
            ax.scatter([xy[0] for _, xy in anchors],
                       [xy[1] for _, xy in anchors],
                       marker="^", s=80, label="anchors")
        truth_x, truth_y, est_x, est_y = [], [], [], []
        for row in locations:
            pos = out.scenario.positions.get(row["target_id"])
            if pos is not None:
                truth_x.append(pos[0])
                truth_y.append(pos[1])
            est_x.append(row["x"])
            est_y.append(row["y"])
        if truth_x:
            ax.scatter(truth_x, truth_y, marker="o", facecolors="none",
                       edgecolors="tab:green", s=120, label="truth")
        ax.scatter(est_x, est_y, marker="x", s=60, label="estimates")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title("position estimates")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best")
        fig.tight_layout()
        p = outdir / "locations.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def write_run_artifacts(out: SimOutputs, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    locations = out.locations()
    write_events_csv(out, outdir / "events.csv")
    energy_paths = write_energy_csvs(out, outdir)
    write_results_csv(out, outdir / "results.csv")
    write_locations_csv(locations, outdir / "locations.csv")
    write_summary(out, locations, outdir / "summary.txt")
    figures = render_figures(out, locations, outdir)
    return {"locations": locations, "energy_paths": energy_paths,
            "figures": figures}


# -- text reports for the calculator subcommands ----------------------------

def lifetime_report(tau_s: float, capacity_c: float,
                    include_ranging: bool = False) -> str:
    plan = (energy_model.ranging_plan(tau_s) if include_ranging
            else energy_model.idle_check_plan(tau_s))
    per_cycle_mc = energy_model.cycle_charge_mc(plan)
    cycles = energy_model.battery_cycles(capacity_c, plan)
    seconds = energy_model.lifetime_s(plan, capacity_c)
    lines = [
        f"cycle period tau: {tau_s:.3f} s",
        f"activities: " + ", ".join(a.name for a in plan.activities),
        f"per-cycle charge Q_T: {per_cycle_mc:.6f} mC",
        f"battery capacity: {capacity_c:.3f} C",
        f"full cycles: {cycles}",
        f"lifetime: {seconds:.1f} s = {seconds / 86400.0:.2f} days = "
        f"{seconds / energy_model.SECONDS_PER_MONTH:.2f} months = "
        f"{seconds / energy_model.SECONDS_PER_YEAR:.2f} years",
    ]
    return "\n".join(lines) + "\n"


def compare_report(doc: dict) -> str:
    tau_s = float(doc.get("tau_s", 600.0))
    framework_cap = float(doc.get("framework_capacity_c", 75.402))
    idle_cap = float(doc.get("idle_capacity_c", 105.835))
    always_on_a = float(doc.get("always_on_current_a", 0.022))
    cad = doc.get("cad") or {}
    scan_period = float(cad.get("scan_period_s", 0.1))
    scan_current = float(cad.get("scan_current_a", 0.012))
    scan_duration = float(cad.get("scan_duration_s", 0.015))
    derating = float(cad.get("capacity_derating", 0.6))

    plan = energy_model.ranging_plan(tau_s)
    framework_s = energy_model.lifetime_s(plan, framework_cap)
    always_on_s = idle_cap / always_on_a
    cad_avg_a = (energy_model.SLEEP_CURRENT_A
                 + scan_current * scan_duration / scan_period)
    cad_s = framework_cap * derating / cad_avg_a

    fmt = energy_model.format_duration
    lines = [
        f"framework (tau={tau_s:.0f} s ranging cycle, "
        f"{framework_cap:.3f} C): {framework_s / 86400.0:.1f} days",
        f"always-on receiver ({always_on_a * 1e3:.1f} mA, "
        f"{idle_cap:.3f} C): {fmt(always_on_s)}",
        f"CAD-assisted polling ({scan_duration * 1e3:.0f} ms scan every "
        f"{scan_period * 1e3:.0f} ms, avg {cad_avg_a * 1e3:.4f} mA, "
        f"capacity derated x{derating:.2f}): {fmt(cad_s)}",
        f"framework / CAD-assisted ratio: {framework_s / cad_s:.1f}x",
        f"framework / always-on ratio: {framework_s / always_on_s:.1f}x",
    ]
    return "\n".join(lines) + "\n"
