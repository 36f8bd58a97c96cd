"""Result serialization and figure-data emission for mission runs.

A run directory holds one ``run_manifest.json`` plus one subdirectory per
scheme x seed combination containing ``metrics.json``, ``trajectory.csv``,
``convergence.csv``, and per-leg ``rounds/*.csv``.  Everything except the
manifest timestamp is a pure function of (scenario, scheme, seed, version):
floats are printed with nine significant digits and JSON keys are sorted, so
repeated runs produce byte-identical files.

The ``emit_plotdata`` entry point turns a completed run directory into tidy
long-format CSVs, one per figure analog (convergence, 3D trajectory, speed
profile, outage vs serving budget, min-rate vs transmit power), and renders a
PNG next to each CSV.  The two sweep figures re-execute the orchestrator on
perturbed scenarios; the rest are file transforms of the stored run.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .orchestrator import RoundResult, collect_metrics, ground_truth, run_scheme
from .scenario import ScenarioConfig, dbm_to_watts, load_scenario

MANIFEST_NAME = "run_manifest.json"
RUN_FILES = ("metrics.json", "trajectory.csv", "convergence.csv")
POWER_SWEEP_DBM = (10.0, 15.0, 20.0, 25.0, 30.0)


class ReportInputError(FileNotFoundError):
    """A run directory is missing files the reporting step needs."""

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__("missing expected input(s): " + ", ".join(self.missing))


def fmt9(value: float) -> str:
    """Nine-significant-digit decimal used in every CSV cell."""
    return f"{float(value):.9g}"


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH makes even the manifest reproducible when callers ask
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Reproducibility header recorded verbatim in every output directory."""

    scenario: str
    schemes: list[str]
    seeds: list[int]
    out_dir: str
    version: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "schemes": list(self.schemes),
            "seeds": [int(s) for s in self.seeds],
            "out_dir": self.out_dir,
            "version": self.version,
            "timestamp": self.timestamp,
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(scenario=data["scenario"], schemes=list(data["schemes"]),
                   seeds=[int(s) for s in data["seeds"]], out_dir=data["out_dir"],
                   version=data["version"], timestamp=data["timestamp"])


def scheme_seed_dir(root: Path, scheme: str, seed: int) -> Path:
    return Path(root) / f"{scheme}-seed{int(seed):04d}"


def write_run_outputs(out_dir: Path, cfg: ScenarioConfig, scheme: str, seed: int,
                      results: list[RoundResult]) -> None:
    """Serialize one scheme x seed mission into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = collect_metrics(results, ground_truth(cfg, seed), cfg)
    payload = {"scheme": scheme, "seed": int(seed), **report.to_dict()}
    (out_dir / "metrics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(out_dir / "trajectory.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["round", "slot", "x_m", "y_m", "h_m", "speed_mps"])
        for res in results:
            speeds = res.flight.speeds(cfg)
            for k, pose in enumerate(res.flight.poses):
                w.writerow([res.cluster, res.start_slot + k, fmt9(pose[0]),
                            fmt9(pose[1]), fmt9(pose[2]), fmt9(speeds[k])])

    with open(out_dir / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["round", "iteration", "objective_bps"])
        for res in results:
            for i, gamma in enumerate(res.gamma_history, start=1):
                w.writerow([res.cluster, i, fmt9(gamma)])

    rounds_dir = out_dir / "rounds"
    rounds_dir.mkdir(exist_ok=True)
    for res in results:
        with open(rounds_dir / f"round_{res.cluster:02d}.csv", "w",
                  newline="", encoding="utf-8") as fh:
            w = _writer(fh)
            w.writerow(["user", "dropped", "associated_slots", "avg_rate_bps",
                        "accumulated_bits", "qos_ok", "start_slot", "serve_slots"])
            dropped = set(np.asarray(res.dropped).tolist())
            j = np.asarray(res.assoc.j)
            for i, user in enumerate(res.members):
                bits = res.per_user_rates[i] * res.serve_slots * cfg.slot_duration
                w.writerow([int(user), int(user in dropped), int(j[i].sum()),
                            fmt9(res.per_user_rates[i]), fmt9(bits),
                            int(bits >= cfg.qos_bits),
                            res.start_slot, res.serve_slots])


def execute_run(scenario_path, schemes: list[str], seeds: list[int],
                out_root) -> RunManifest:
    """Run every scheme x seed combination and write the result tree."""
    cfg = load_scenario(scenario_path)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        scenario=str(Path(scenario_path).resolve()),
        schemes=list(schemes),
        seeds=[int(s) for s in seeds],
        out_dir=str(out_root.resolve()),
        version=__version__,
        timestamp=_timestamp(),
    )
    manifest.write(out_root / MANIFEST_NAME)
    for scheme in schemes:
        for seed in seeds:
            results = run_scheme(cfg, scheme, rng=seed)
            run_dir = scheme_seed_dir(out_root, scheme, seed)
            write_run_outputs(run_dir, cfg, scheme, seed, results)
            manifest.write(run_dir / MANIFEST_NAME)
    return manifest


def load_run(run_dir) -> RunManifest:
    """Read a run directory's manifest, naming whatever is missing."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ReportInputError([str(manifest_path)])
    manifest = RunManifest.read(manifest_path)
    missing = []
    for scheme in manifest.schemes:
        for seed in manifest.seeds:
            base = scheme_seed_dir(run_dir, scheme, seed)
            for name in RUN_FILES:
                if not (base / name).is_file():
                    missing.append(str(base / name))
    if missing:
        raise ReportInputError(missing)
    return manifest


# ---- figure-analog emission -------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _gather(run_dir: Path, manifest: RunManifest, filename: str,
            columns: list[str]) -> list[list]:
    rows = []
    for scheme in manifest.schemes:
        for seed in manifest.seeds:
            src = scheme_seed_dir(run_dir, scheme, seed) / filename
            for rec in _read_csv(src):
                rows.append([scheme, seed] + [rec[c] for c in columns])
    return rows


def _write_tidy(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit_convergence(run_dir, manifest, plots_dir) -> list[Path]:
    rows = _gather(run_dir, manifest, "convergence.csv",
                   ["round", "iteration", "objective_bps"])
    out = plots_dir / "convergence.csv"
    _write_tidy(out, ["scheme", "seed", "round", "iteration", "objective_bps"], rows)

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    scheme, seed = manifest.schemes[0], manifest.seeds[0]
    series: dict[str, list] = {}
    for r in rows:
        if r[0] == scheme and int(r[1]) == seed:
            series.setdefault(r[2], []).append((int(r[3]), float(r[4]) / 1e6))
    for rnd, pts in sorted(series.items(), key=lambda kv: int(kv[0])):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"cluster {rnd}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("min average rate [Mb/s]")
    ax.set_title(f"{scheme}, seed {seed}")
    ax.legend()
    fig.tight_layout()
    png = plots_dir / "convergence.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return [out, png]


def _emit_trajectory(run_dir, manifest, plots_dir) -> list[Path]:
    rows = _gather(run_dir, manifest, "trajectory.csv",
                   ["round", "slot", "x_m", "y_m", "h_m"])
    out = plots_dir / "trajectory3d.csv"
    _write_tidy(out, ["scheme", "seed", "round", "slot", "x_m", "y_m", "h_m"], rows)

    plt = _pyplot()
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    scheme, seed = manifest.schemes[0], manifest.seeds[0]
    series: dict[str, list] = {}
    for r in rows:
        if r[0] == scheme and int(r[1]) == seed:
            series.setdefault(r[2], []).append(
                (int(r[3]), float(r[4]), float(r[5]), float(r[6])))
    for rnd, pts in sorted(series.items(), key=lambda kv: int(kv[0])):
        pts.sort()
        ax.plot([p[1] for p in pts], [p[2] for p in pts], [p[3] for p in pts],
                label=f"leg {rnd}")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("H [m]")
    ax.set_title(f"{scheme}, seed {seed}")
    ax.legend()
    png = plots_dir / "trajectory3d.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return [out, png]


def _emit_speed(run_dir, manifest, plots_dir, cfg: ScenarioConfig) -> list[Path]:
    rows = _gather(run_dir, manifest, "trajectory.csv",
                   ["round", "slot", "speed_mps"])
    out = plots_dir / "speed.csv"
    _write_tidy(out, ["scheme", "seed", "round", "slot", "speed_mps"], rows)

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    scheme, seed = manifest.schemes[0], manifest.seeds[0]
    pts = [(int(r[3]), float(r[4])) for r in rows
           if r[0] == scheme and int(r[1]) == seed]
    pts.sort()
    ax.step([p[0] for p in pts], [p[1] for p in pts], where="post")
    vmax = np.hypot(cfg.s_xy_max, cfg.s_h_max) / cfg.slot_duration
    ax.axhline(vmax, linestyle="--", color="gray", label="kinematic cap")
    ax.set_xlabel("slot")
    ax.set_ylabel("speed [m/s]")
    ax.set_title(f"{scheme}, seed {seed}")
    ax.legend()
    fig.tight_layout()
    png = plots_dir / "speed.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return [out, png]


def _mean_by(rows: list[list], key_cols: tuple[int, int],
             val_col: int) -> dict[tuple, float]:
    acc: dict[tuple, list] = {}
    for r in rows:
        acc.setdefault((r[key_cols[0]], float(r[key_cols[1]])), []).append(
            float(r[val_col]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def _emit_outage_sweep(manifest, plots_dir, cfg: ScenarioConfig,
                       budgets: list[int]) -> list[Path]:
    rows = []
    truths = {seed: ground_truth(cfg, seed) for seed in manifest.seeds}
    for scheme in manifest.schemes:
        for budget in budgets:
            for seed in manifest.seeds:
                results = run_scheme(cfg, scheme, rng=seed, serve_cap=budget)
                rep = collect_metrics(results, truths[seed], cfg)
                rows.append([scheme, budget, seed, fmt9(rep.outage_probability)])
    out = plots_dir / "outage_vs_slots.csv"
    _write_tidy(out, ["scheme", "serve_cap_slots", "seed", "outage_probability"],
                rows)

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    means = _mean_by(rows, (0, 1), 3)
    for scheme in manifest.schemes:
        xs = sorted(b for s, b in means if s == scheme)
        ax.plot(xs, [means[(scheme, b)] for b in xs], marker="o", label=scheme)
    ax.set_xlabel("serving-slot budget per leg")
    ax.set_ylabel("outage probability")
    ax.legend()
    fig.tight_layout()
    png = plots_dir / "outage_vs_slots.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return [out, png]


def _emit_power_sweep(manifest, plots_dir, cfg: ScenarioConfig,
                      power_dbm: list[float]) -> list[Path]:
    rows = []
    truths = {seed: ground_truth(cfg, seed) for seed in manifest.seeds}
    for scheme in manifest.schemes:
        for level in power_dbm:
            watts = dbm_to_watts(level)
            cfg_p = dataclasses.replace(cfg, p_total_max=watts, p_user_max=watts)
            for seed in manifest.seeds:
                results = run_scheme(cfg_p, scheme, rng=seed)
                rep = collect_metrics(results, truths[seed], cfg_p)
                rows.append([scheme, fmt9(level), seed, fmt9(rep.global_min_rate)])
    out = plots_dir / "minrate_vs_power.csv"
    _write_tidy(out, ["scheme", "power_dbm", "seed", "min_rate_bps"], rows)

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    means = _mean_by(rows, (0, 1), 3)
    for scheme in manifest.schemes:
        xs = sorted(p for s, p in means if s == scheme)
        ax.plot(xs, [means[(scheme, p)] / 1e6 for p in xs], marker="o",
                label=scheme)
    ax.set_xlabel("transmit power budget [dBm]")
    ax.set_ylabel("mean min rate [Mb/s]")
    ax.legend()
    fig.tight_layout()
    png = plots_dir / "minrate_vs_power.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return [out, png]


def default_budgets(cfg: ScenarioConfig) -> list[int]:
    """Serving-slot grid for the outage figure: tau up to a comfortable leg."""
    tau = cfg.tau_slots if cfg.tau_slots is not None else 1
    c_max = cfg.c_max_users if cfg.c_max_users is not None else 1
    return list(range(tau, tau * (c_max + 3) + 1))


def emit_plotdata(run_dir, out_dir=None, power_dbm=POWER_SWEEP_DBM,
                  budgets: list[int] | None = None, sweeps: bool = True) -> list[Path]:
    """Emit every figure-analog CSV (and a PNG next to each) for a run."""
    run_dir = Path(run_dir)
    manifest = load_run(run_dir)
    scenario = Path(manifest.scenario)
    if not scenario.is_file():
        raise ReportInputError([str(scenario)])
    cfg = load_scenario(scenario)
    plots_dir = Path(out_dir) if out_dir is not None else run_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)

    written = []
    written += _emit_convergence(run_dir, manifest, plots_dir)
    written += _emit_trajectory(run_dir, manifest, plots_dir)
    written += _emit_speed(run_dir, manifest, plots_dir, cfg)
    if sweeps:
        if budgets is None:
            budgets = default_budgets(cfg)
        written += _emit_outage_sweep(manifest, plots_dir, cfg, budgets)
        written += _emit_power_sweep(manifest, plots_dir, cfg, list(power_dbm))
    return written


__all__ = [
    "MANIFEST_NAME",
    "POWER_SWEEP_DBM",
    "ReportInputError",
    "RunManifest",
    "default_budgets",
    "emit_plotdata",
    "execute_run",
    "fmt9",
    "load_run",
    "scheme_seed_dir",
    "write_run_outputs",
]
