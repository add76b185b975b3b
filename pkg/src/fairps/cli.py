"""Command-line entry point: ``fairps run | sweep | counterexamples | validate``.

Every command writes into ``--out``: trajectory CSV and JSON files per run,
a summary where relevant, and ``manifest.json``.  Only the manifest carries
timestamps and wall times, so repeated invocations produce identical data
files.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dynamics import (
    Trajectory,
    fair_rerm,
    fair_rrm,
    repeated_dro,
    trajectory_to_csv,
)
from .errors import FairPSError, NoCertificate, ParseError, ValidationError
from .losses import FairMechanism, objective_value
from .metrics import certificate, flag_rows, summarize_runs
from .scenarios import build_population, build_problem, load_scenario, parse_override, problem_epsilon

BASELINES = ("glv", "dro_chi2")
SWEEP_MECHANISMS = ("glp", "slp", "rw")
SERIES_METRICS = ("perf_loss", "loss_disparity", "participation_disparity")

# counterexample settings
GLV_PROBE_SCENARIO = "glv_example3"
GLV_PROBE_RANGE = (0.5, 1.5)
GLV_PROBE_POINTS = 101
GLV_PROBE_H = 1e-3
GLV_RUN_SCENARIO = "glv_gaussian_mean"
DRO_SCENARIO = "dro_example4"
DRO_AMPLITUDE = 0.2
DRO_TOL = 1e-9


# ---------------------------------------------------------------- cells

@dataclass(frozen=True)
class Cell:
    """One isolated run: a config, a mechanism and a seed."""

    config: str
    overrides: tuple
    kind: str
    rho: float
    radius: float
    seed: int
    full: bool
    tau: float
    max_rounds: int
    out_dir: str


def _fmt_num(x: float) -> str:
    return f"{x:g}"


def cell_stem(name: str, kind: str, rho: float, radius: float, seed: int) -> str:
    knob = f"r{_fmt_num(radius)}" if kind == "dro_chi2" else f"rho{_fmt_num(rho)}"
    return f"{name}_{kind}_{knob}_seed{seed}"


def _certificate_summary(cfg, problem, mech, traj) -> dict:
    if mech.kind in BASELINES:
        return {"status": "none", "reason": f"no certificate exists for {mech.kind}"}
    eps, source = problem_epsilon(cfg, problem)
    if eps is None:
        return {"status": "unknown", "reason": "epsilon not configured and not estimable"}
    try:
        cert = certificate(cfg.loss, mech, mech.rho, eps, source, traj.config["schema"])
    except NoCertificate as exc:
        return {"status": "unknown", "reason": str(exc)}
    within = cfg.loss.loss_sup is None or traj.max_loss_seen <= cfg.loss.loss_sup
    out = cert.to_dict()
    out["threshold"] = cert.threshold
    out["max_loss_seen"] = traj.max_loss_seen
    out["loss_sup_respected"] = bool(within)
    out["status"] = "certified" if (cert.holds and within) else "uncertified"
    return out


def run_cell(cell: Cell) -> dict:
    """Execute a cell and write its CSV and JSON; errors are returned, not raised."""
    start = time.perf_counter()
    stem = None
    try:
        cfg = load_scenario(cell.config, cell.overrides)
        stem = cell_stem(cfg.name, cell.kind, cell.rho, cell.radius, cell.seed)
        problem = build_problem(cfg, cell.seed, cell.full)
        mech = FairMechanism(cell.kind, cell.rho, cell.radius)
        if cell.kind == "dro_chi2":
            traj = repeated_dro(problem, cell.radius, cell.tau, cell.max_rounds)
        elif cfg.sample_size is not None:
            n = int(cfg.sample_size)
            traj = fair_rerm(problem, mech, lambda t: n, cell.seed, cell.tau, cell.max_rounds)
        else:
            traj = fair_rrm(problem, mech, tau=cell.tau, max_rounds=cell.max_rounds)
        cert = _certificate_summary(cfg, problem, mech, traj)
    except Exception as exc:  # reported per cell
        return {
            "stem": stem, "kind": cell.kind, "rho": cell.rho, "radius": cell.radius, "seed": cell.seed,
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "wall_time_s": time.perf_counter() - start,
        }
    echo = dict(traj.config)
    echo["set"] = {o.split("=", 1)[0].strip(): parse_override(o)[1] for o in cell.overrides}
    echo["config_hash"] = cfg.config_hash()
    echo["sample_size"] = cfg.sample_size
    echo["full"] = cell.full
    traj.config = echo
    out = Path(cell.out_dir)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(trajectory_to_csv(traj))
    body = traj.to_dict()
    body["certificate"] = cert
    body["scenario_config"] = cfg.raw
    json_path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return {
        "stem": stem, "kind": cell.kind, "rho": cell.rho, "radius": cell.radius, "seed": cell.seed,
        "verdict": str(traj.verdict), "certificate": cert, "outputs": [str(csv_path), str(json_path)],
        "wall_time_s": time.perf_counter() - start, "trajectory": traj,
    }


def _execute(cells, parallel: int) -> list:
    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


# ---------------------------------------------------------------- helpers

def _error_report(exc: BaseException) -> dict:
    report = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ValidationError):
        report["problems"] = list(exc.problems)
    return report


def _fail(exc: BaseException, code: int = 2) -> int:
    print(json.dumps(_error_report(exc), indent=2), file=sys.stderr)
    return code


def _parse_list(text: str | None, cast):
    if text is None:
        return None
    try:
        return [cast(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ParseError(f"could not parse list {text!r}: {exc}") from None


def _settings(args, cfg):
    seeds = _parse_list(args.seeds, int) or cfg.seeds
    tau = args.tau if args.tau is not None else cfg.tau
    max_rounds = args.max_rounds if args.max_rounds is not None else cfg.max_rounds
    return seeds, tau, max_rounds


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, argv, cfg_hash, seeds, results, extra_outputs, started, wall) -> Path:
    runs = []
    for r in results:
        entry = {k: v for k, v in r.items() if k != "trajectory"}
        runs.append(entry)
    outputs = [p for r in results for p in r.get("outputs", [])] + [str(p) for p in extra_outputs]
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": cfg_hash,
        "seeds": seeds,
        "started_at": started,
        "wall_time_s": wall,
        "outputs": outputs,
        "runs": runs,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _cert_line(cert: dict) -> str:
    status = cert.get("status")
    if status in ("certified", "uncertified"):
        return (f"{status} (lhs={cert['lhs']:.4g} vs {cert['threshold']:.4g}, "
                f"epsilon={cert['epsilon']:.4g} {cert['epsilon_source']})")
    return f"{status}: {cert.get('reason', '')}"


# ---------------------------------------------------------------- run

def cmd_run(args, argv) -> int:
    started, t0 = _now(), time.perf_counter()
    try:
        cfg = load_scenario(args.config, args.set)
        seeds, tau, max_rounds = _settings(args, cfg)
    except (FairPSError, FileNotFoundError) as exc:
        return _fail(exc)
    out = _out_dir(args, f"runs/{cfg.name}")
    cells = [
        Cell(args.config, tuple(args.set), m.kind, m.rho, m.radius, s, args.full, tau, max_rounds, str(out))
        for m in cfg.mechanisms() for s in seeds
    ]
    results = _execute(cells, args.parallel)
    code = 0
    for r in results:
        label = r["stem"] or f"{r['kind']} seed {r['seed']}"
        if "error" in r:
            code = 1
            print(f"{label}: ERROR {r['error']['type']}: {r['error']['message']}")
            print(json.dumps(r["error"]), file=sys.stderr)
            continue
        print(f"{label}: {r['verdict']}  certificate {_cert_line(r['certificate'])}")
        if r["kind"] not in BASELINES and not r["verdict"].startswith("Converged"):
            code = 1
    manifest = _write_manifest(out, "run", argv, cfg.config_hash(), seeds, results, [], started,
                               time.perf_counter() - t0)
    print(f"manifest: {manifest}")
    return code


# ---------------------------------------------------------------- sweep

def _series_rows(mech: str, rho: float, trajs) -> list:
    """Mean and standard error across seeds per round; shorter runs carry their last point forward."""
    if not trajs:
        return []
    horizon = max(len(t.points) for t in trajs)
    k = len(trajs[0].points[0].fractions)
    rows = []
    for t in range(horizon):
        pts = [tr.points[min(t, len(tr.points) - 1)] for tr in trajs]
        row = [mech, _fmt_num(rho), str(t), str(len(pts))]
        cols = [[getattr(p, m) for p in pts] for m in SERIES_METRICS]
        cols += [[p.fractions[i] for p in pts] for i in range(k)]
        for vals in cols:
            v = np.asarray(vals, dtype=float)
            se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
            row += [repr(float(v.mean())), repr(se)]
        rows.append(row)
    return rows


def cmd_sweep(args, argv) -> int:
    started, t0 = _now(), time.perf_counter()
    try:
        cfg = load_scenario(args.config, args.set)
        seeds, tau, max_rounds = _settings(args, cfg)
        rhos = _parse_list(args.rho, float) or list(cfg.rho)
        mechs = _parse_list(args.mechanisms, str) or list(SWEEP_MECHANISMS)
    except (FairPSError, FileNotFoundError) as exc:
        return _fail(exc)
    if cfg.mechanism == "dro_chi2" or "dro_chi2" in mechs:
        print("sweep does not apply to the chi-square DRO baseline; use `fairps counterexamples`",
              file=sys.stderr)
        return 2
    if any(r < 0 for r in rhos):
        return _fail(ParseError("rho values must be nonnegative"))
    rhos = sorted(rhos)
    out = _out_dir(args, f"sweeps/{cfg.name}")
    cells = [
        Cell(args.config, tuple(args.set), m, r, 0.0, s, args.full, tau, max_rounds, str(out))
        for m in mechs for r in rhos for s in seeds
    ]
    results = _execute(cells, args.parallel)
    by_cell = {}
    for c, r in zip(cells, results):
        by_cell.setdefault((c.kind, c.rho), []).append(r)

    summary_header = ["mechanism", "rho", "loss_disparity_ps", "participation_disparity_ps", "verdict",
                      "assumption1_fraction", "flagged", "minority_fraction"]
    summary = [",".join(summary_header)]
    series_header = ["mechanism", "rho", "t", "n_seeds"]
    k = cfg.population.fractions and len(cfg.population.fractions) or None
    series = []
    n_failed = 0
    for m in mechs:
        rows = []
        for rho in rhos:
            cell_results = by_cell[(m, rho)]
            trajs = [r["trajectory"] for r in cell_results if "trajectory" in r]
            errors = [r["error"]["type"] for r in cell_results if "error" in r]
            n_failed += len(errors)
            rows.append(summarize_runs(rho, trajs, errors))
            series += _series_rows(m, rho, trajs)
            if trajs and k is None:
                k = len(trajs[0].points[0].fractions)
        for row in flag_rows(rows):
            summary.append(",".join([
                m, _fmt_num(row.rho), repr(row.loss_disparity_ps), repr(row.participation_disparity_ps),
                row.verdict, repr(row.assumption1_fraction), str(row.flagged).lower(), repr(row.minority_fraction),
            ]))
            print(f"{m:>4} rho={_fmt_num(row.rho):<5} loss_disparity={row.loss_disparity_ps:.6g} "
                  f"participation_disparity={row.participation_disparity_ps:.6g} {row.verdict}"
                  + ("  FLAGGED" if row.flagged else ""))
    for name in list(SERIES_METRICS) + [f"p_{i}" for i in range(k or 0)]:
        series_header += [f"{name}_mean", f"{name}_se"]
    summary_path = out / "summary.csv"
    summary_path.write_text("\n".join(summary) + "\n")
    series_path = out / "series.csv"
    series_path.write_text("\n".join([",".join(series_header)] + [",".join(r) for r in series]) + "\n")
    manifest = _write_manifest(out, "sweep", argv, cfg.config_hash(), seeds, results,
                               [summary_path, series_path], started, time.perf_counter() - t0)
    print(f"summary: {summary_path}\nmanifest: {manifest}")
    return 1 if n_failed else 0


# ---------------------------------------------------------------- counterexamples

def glv_second_differences(problem, rho: float, grid, h: float = GLV_PROBE_H) -> np.ndarray:
    """Central second differences of the GLV objective at each grid point."""
    mech = FairMechanism("glv", rho)

    def f(t):
        return objective_value(mech, problem.model([t]), problem.population, problem.loss)

    return np.array([(f(t + h) - 2.0 * f(t) + f(t - h)) / h ** 2 for t in grid])


def counterexample_glv_probe(seed: int = 0) -> dict:
    cfg = load_scenario(GLV_PROBE_SCENARIO)
    problem = build_problem(cfg, seed)
    rho = cfg.rho[0]
    grid = np.linspace(*GLV_PROBE_RANGE, GLV_PROBE_POINTS)
    d2 = glv_second_differences(problem, rho, grid)
    i = int(np.argmin(d2))
    at_one = float(glv_second_differences(problem, rho, [1.0])[0])
    ok = d2[i] < 0 and abs(grid[i] - 1.0) <= 0.05
    return {
        "check": "glv_nonconvexity_probe",
        "expected": "min second difference on [0.5, 1.5] < 0 with witness near theta = 1",
        "observed": f"min {d2[i]:.6g} at theta = {grid[i]:.4g}; value at 1 is {at_one:.6g}",
        "status": "PASS" if ok else "FAIL",
    }


def counterexample_glv_run(seed: int = 0, max_rounds: int = 200, tau: float = 1e-6) -> dict:
    cfg = load_scenario(GLV_RUN_SCENARIO)
    problem = build_problem(cfg, seed)
    rho = cfg.rho[0]
    glv = fair_rrm(problem, FairMechanism("glv", rho), tau=tau, max_rounds=max_rounds)
    glp = fair_rrm(problem, FairMechanism("glp", rho), tau=tau, max_rounds=max_rounds)
    ok = not glv.verdict.converged
    return {
        "check": "glv_gaussian_mean_run",
        "expected": f"GLV rho={_fmt_num(rho)} not Converged within {max_rounds} rounds",
        "observed": f"GLV {glv.verdict}; GLP at the same rho {glp.verdict}",
        "status": "PASS" if ok else "FAIL",
        "trajectory": glv,
    }


def counterexample_dro(max_rounds: int = 100) -> dict:
    cfg = load_scenario(DRO_SCENARIO)
    problem = build_problem(cfg, cfg.seeds[0])
    traj = repeated_dro(problem, cfg.radius, cfg.tau, max_rounds)
    th = traj.thetas[1:, 0]
    signs = np.where(np.arange(1, len(th) + 1) % 2 == 1, 1.0, -1.0)
    dev = np.abs(np.abs(th) - DRO_AMPLITUDE)
    alternating = bool(np.all(np.sign(th) == signs * np.sign(th[0])))
    err = float(dev.max())
    ok = traj.verdict.kind == "Oscillating" and traj.verdict.value == 2 and alternating and err <= DRO_TOL
    return {
        "check": "dro_oscillation",
        "expected": f"Oscillating(2) with |theta| = {DRO_AMPLITUDE} +- {DRO_TOL:g}, alternating sign",
        "observed": f"{traj.verdict}; max ||theta| - {DRO_AMPLITUDE}| = {err:.3g}; alternating={alternating}",
        "status": "PASS" if ok else "FAIL",
        "trajectory": traj,
    }


def cmd_counterexamples(args, argv) -> int:
    started, t0 = _now(), time.perf_counter()
    out = _out_dir(args, "counterexamples")
    rows, outputs = [], []
    for fn in (counterexample_glv_probe, counterexample_glv_run, counterexample_dro):
        c0 = time.perf_counter()
        try:
            row = fn()
        except Exception as exc:
            row = {"check": fn.__name__, "expected": "", "observed": f"{type(exc).__name__}: {exc}",
                   "status": "FAIL"}
        row["wall_time_s"] = time.perf_counter() - c0
        traj = row.pop("trajectory", None)
        if isinstance(traj, Trajectory):
            path = out / f"{row['check']}.csv"
            path.write_text(trajectory_to_csv(traj))
            outputs.append(path)
        rows.append(row)
        print(f"{row['status']} {row['check']}: {row['observed']}")
    report = out / "counterexamples.csv"
    lines = ["check,status,expected,observed"]
    for r in rows:
        lines.append(",".join([r["check"], r["status"], json.dumps(r["expected"]), json.dumps(r["observed"])]))
    report.write_text("\n".join(lines) + "\n")
    outputs.append(report)
    results = [{"check": r["check"], "status": r["status"], "wall_time_s": r["wall_time_s"]} for r in rows]
    manifest = _write_manifest(out, "counterexamples", argv, None, [0], results, outputs, started,
                               time.perf_counter() - t0)
    print(f"report: {report}\nmanifest: {manifest}")
    return 0 if all(r["status"] == "PASS" for r in rows) else 1


# ---------------------------------------------------------------- validate

def cmd_validate(args, argv) -> int:
    try:
        cfg = load_scenario(args.config, args.set)
        pop = build_population(cfg, cfg.seeds[0], args.full)
    except (FairPSError, FileNotFoundError) as exc:
        return _fail(exc)
    mechs = ", ".join(f"{m.kind}(rho={_fmt_num(m.rho)})" for m in cfg.mechanisms())
    print(f"ok: {cfg.name} [{cfg.config_hash()}] {pop.n_groups} groups, dimension {pop.dimension}, "
          f"loss {cfg.loss.family}, transition {cfg.transition.kind}, mechanisms {mechs}, "
          f"seeds {cfg.seeds}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairps", description="Fairness-aware repeated deployment simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="scenario file or bundled scenario name")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a config value (repeatable); mechanism, rho and radius are shortcuts")
            p.add_argument("--seeds", help="comma-separated seeds, replacing the config's list")
            p.add_argument("--max-rounds", type=int)
            p.add_argument("--tau", type=float)
            p.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")
            p.add_argument("--full", action="store_true", help="use the full sample size instead of the CI size")
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("run", help="run every (mechanism, seed) in a scenario"))
    sweep = sub.add_parser("sweep", help="rho sweep over GLP, SLP and RW with a monotonicity summary")
    common(sweep)
    sweep.add_argument("--rho", help="comma-separated rho values (default: the config's list)")
    sweep.add_argument("--mechanisms", help="comma-separated mechanisms (default: glp,slp,rw)")
    common(sub.add_parser("counterexamples", help="reproduce the GLV and DRO failure modes"), config=False)
    validate = sub.add_parser("validate", help="check a config without running it")
    validate.add_argument("config")
    validate.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    validate.add_argument("--full", action="store_true")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "counterexamples": cmd_counterexamples, "validate": cmd_validate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args, ["fairps"] + argv)


if __name__ == "__main__":
    sys.exit(main())
