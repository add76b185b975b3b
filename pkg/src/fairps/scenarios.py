"""Scenario configs: loading, validation, population synthesis and tabular ingestion.

Configs are TOML files.  A scenario name such as ``scenarios/gaussian_mean``
is resolved against the working directory, then ``$FAIRPS_SCENARIO_DIR``,
then the scenarios bundled with the package.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import Problem
from .errors import (
    BadColumn,
    NonNumericFeature,
    ParseError,
    SingleGroup,
    ValidationError,
)
from .losses import LOSS_FAMILIES, MECHANISMS, FairMechanism, LossSpec, Model
from .population import GroupDistribution, PopulationState, make_population, wasserstein1
from .transitions import DeploymentSchema, apply_transition, estimate_sensitivity, transition_from_dict

BUNDLED_DIR = Path(__file__).resolve().parent / "scenarios"
SCENARIO_ENV = "FAIRPS_SCENARIO_DIR"

SOURCES = (
    "synthetic_gaussian_mean",
    "synthetic_gaussian_classify",
    "two_point_example1",
    "strategic_example2",
    "dro_example4",
    "glv_example3",
    "tabular_csv",
    "multigroup_gaussian",
)

OVERRIDE_ALIASES = {
    "mechanism": "mechanism.kind",
    "rho": "mechanism.rho",
    "radius": "mechanism.radius",
}


@dataclass(frozen=True)
class PopulationConfig:
    source: str
    n_samples: int = 10000
    ci_samples: int | None = None
    fractions: tuple = ()
    means: tuple = ()
    noise_sd: float = 0.05
    floor: float = 0.0
    points: tuple = ()
    labels: tuple = ()
    intercept: bool = False
    csv_path: str | None = None
    feature_cols: tuple = ()
    label_col: str | None = None
    group_col: str | None = None
    group_order: tuple = ()
    normalize: bool = False


@dataclass
class ScenarioConfig:
    name: str
    population: PopulationConfig
    loss: LossSpec
    transition: object
    schema: DeploymentSchema
    mechanism: str
    rho: list
    radius: float = 0.0
    tau: float = 1e-6
    max_rounds: int = 200
    seeds: list = field(default_factory=lambda: [0])
    theta0: tuple | None = None
    epsilon: float | str | None = None
    sample_size: int | None = None
    box: tuple = (-10.0, 10.0)
    solver_tol: float = 1e-10
    solver_max_iters: int = 10000
    path: str | None = None
    raw: dict = field(default_factory=dict)

    def mechanisms(self):
        if self.mechanism == "plain":
            return [FairMechanism("plain")]
        return [FairMechanism(self.mechanism, float(r), self.radius) for r in self.rho]

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- loading

def resolve_scenario_path(path) -> Path:
    p = Path(path)
    candidates = [p, p.with_name(p.name + ".toml")]
    env = os.environ.get(SCENARIO_ENV)
    for base in ([Path(env)] if env else []) + [BUNDLED_DIR]:
        candidates += [base / p.name, base / (p.name + ".toml")]
    for c in candidates:
        if c.is_file():
            return c
    raise ParseError(f"scenario {str(path)!r} not found (looked in cwd, ${SCENARIO_ENV} and the bundled scenarios)")


def parse_override(text: str):
    """``key=value`` with the value read as a TOML literal, or as a bare string if that fails."""
    if "=" not in text:
        raise ParseError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    key = OVERRIDE_ALIASES.get(key.strip(), key.strip())
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key, parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        key, value = parse_override(item) if isinstance(item, str) else item
        key = OVERRIDE_ALIASES.get(key, key)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ParseError(f"override {key!r} descends into a non-table value")
        node[parts[-1]] = value
    return raw


def load_scenario(path, overrides=()) -> ScenarioConfig:
    """Read, override and validate a scenario file; defaults are filled in."""
    resolved = resolve_scenario_path(path)
    try:
        raw = tomllib.loads(resolved.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{resolved}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{resolved}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    return config_from_dict(raw, base_dir=resolved.parent, path=str(resolved))


def _as_tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def config_from_dict(raw: dict, base_dir=None, path=None) -> ScenarioConfig:
    problems = []
    for section in ("population", "loss", "transition", "mechanism"):
        if section not in raw or not isinstance(raw[section], dict):
            problems.append(f"missing section [{section}]")
    if problems:
        raise ValidationError(problems)

    popd = dict(raw["population"])
    allowed = {f.name for f in fields(PopulationConfig)}
    for key in popd:
        if key not in allowed:
            problems.append(f"population.{key}: unknown field")
    if popd.get("source") not in SOURCES:
        problems.append(f"population.source: expected one of {SOURCES}, got {popd.get('source')!r}")
    for key in ("fractions", "means", "points", "labels", "feature_cols", "group_order"):
        if key in popd:
            popd[key] = _as_tuple(popd[key])
    if popd.get("csv_path") and base_dir is not None and not Path(popd["csv_path"]).is_absolute():
        cand = Path(base_dir) / popd["csv_path"]
        if cand.exists() or not Path(popd["csv_path"]).exists():
            popd["csv_path"] = str(cand)
    if popd.get("source") == "tabular_csv":
        if not popd.get("csv_path") or not Path(popd["csv_path"]).is_file():
            problems.append(f"population.csv_path: file {popd.get('csv_path')!r} does not exist")
        for key in ("feature_cols", "label_col", "group_col"):
            if not popd.get(key):
                problems.append(f"population.{key}: required for tabular_csv")
    fr = popd.get("fractions", ())
    if fr and abs(sum(fr) - 1.0) > 1e-9:
        problems.append(f"population.fractions: sum to {sum(fr)}")

    lossd = dict(raw["loss"])
    if lossd.get("family") not in LOSS_FAMILIES:
        problems.append(f"loss.family: expected one of {LOSS_FAMILIES}, got {lossd.get('family')!r}")

    mechd = dict(raw["mechanism"])
    kind = mechd.get("kind", "plain")
    if kind not in MECHANISMS:
        problems.append(f"mechanism.kind: expected one of {MECHANISMS}, got {kind!r}")
    rho = [float(r) for r in _as_tuple(mechd.get("rho", 0.0))]
    if any(r < 0 for r in rho):
        problems.append("mechanism.rho: values must be nonnegative")
    radius = float(mechd.get("radius", 0.0))
    if radius < 0:
        problems.append("mechanism.radius: must be nonnegative")

    seeds = list(_as_tuple(raw.get("seeds", [0])))
    if not seeds:
        problems.append("seeds: must be nonempty")
    tau = float(raw.get("tau", 1e-6))
    if tau <= 0:
        problems.append("tau: must be positive")
    max_rounds = int(raw.get("max_rounds", 200))
    if max_rounds < 1:
        problems.append("max_rounds: must be at least 1")

    opt = dict(raw.get("optimizer", {}))
    box = tuple(float(b) for b in opt.get("box", (-10.0, 10.0)))
    if len(box) != 2 or box[0] > box[1]:
        problems.append("optimizer.box: expected [lo, hi] with lo <= hi")

    epsilon = raw.get("epsilon")
    if isinstance(epsilon, str) and epsilon != "estimate":
        problems.append("epsilon: a number or \"estimate\"")

    loss = transition = schema = pcfg = None
    try:
        if lossd.get("family") in LOSS_FAMILIES:
            loss = LossSpec(**lossd)
    except (TypeError, ValueError) as exc:
        problems.append(f"loss: {exc}")
    try:
        transition = transition_from_dict(raw["transition"])
    except (TypeError, ValueError, KeyError) as exc:
        problems.append(f"transition: {exc}")
    try:
        schema = DeploymentSchema(**raw.get("schema", {}))
    except (TypeError, ValueError) as exc:
        problems.append(f"schema: {exc}")
    if not any(p.startswith("population.") for p in problems):
        try:
            pcfg = PopulationConfig(**popd)
        except TypeError as exc:
            problems.append(f"population: {exc}")
    if problems:
        raise ValidationError(problems)

    theta0 = raw.get("theta0")
    return ScenarioConfig(
        name=raw.get("name", Path(path).stem if path else "scenario"),
        population=pcfg,
        loss=loss,
        transition=transition,
        schema=schema,
        mechanism=kind,
        rho=rho,
        radius=radius,
        tau=tau,
        max_rounds=max_rounds,
        seeds=[int(s) for s in seeds],
        theta0=None if theta0 is None else _as_tuple(theta0),
        epsilon=epsilon,
        sample_size=raw.get("sample_size"),
        box=box,
        solver_tol=float(opt.get("tol", 1e-10)),
        solver_max_iters=int(opt.get("max_iters", 10000)),
        path=path,
        raw=raw,
    )


def bundled_scenarios() -> list:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.toml"))


# ---------------------------------------------------------------- populations

def _sizes(total, fractions):
    return [max(1, int(round(total * f))) for f in fractions]


def _with_intercept(X, on):
    return np.hstack([X, np.ones((X.shape[0], 1))]) if on else X


def build_population(cfg: ScenarioConfig, seed=0, full: bool = False) -> PopulationState:
    """Materialize the scenario's starting population; a pure function of ``(cfg, seed, full)``."""
    pc = cfg.population
    n = pc.n_samples if (full or pc.ci_samples is None) else pc.ci_samples
    rng = np.random.default_rng(seed)
    src = pc.source
    if src in ("synthetic_gaussian_mean", "multigroup_gaussian"):
        groups = []
        for s, (mean, size) in enumerate(zip(pc.means, _sizes(n, pc.fractions))):
            y = mean + pc.noise_sd * rng.standard_normal(size)
            groups.append(GroupDistribution(s, y[:, None], y, None))
        return make_population(groups, pc.fractions, floor=pc.floor)
    if src == "synthetic_gaussian_classify":
        groups = []
        for s, size in enumerate(_sizes(n, pc.fractions)):
            X = rng.uniform(0.0, 1.0, size=(size, 2))
            if s == 0:
                y = (X[:, 0] - 0.5 * X[:, 1] >= 0.5).astype(float)
            else:
                y = (0.5 * X[:, 0] + 0.5 * X[:, 1] >= 0.5).astype(float)
            groups.append(GroupDistribution(s, _with_intercept(X, pc.intercept), y, None))
        return make_population(groups, pc.fractions, floor=pc.floor)
    if src in ("two_point_example1", "dro_example4", "glv_example3"):
        labels = pc.labels or pc.points
        groups = [
            GroupDistribution.point_mass(s, [float(x)], float(y)) for s, (x, y) in enumerate(zip(pc.points, labels))
        ]
        return make_population(groups, pc.fractions, floor=pc.floor)
    if src == "strategic_example2":
        x = (np.arange(n) + 0.5) / n
        y = (x >= 0.5).astype(float)
        groups = [GroupDistribution(s, x[:, None], y, None) for s in range(len(pc.fractions))]
        return make_population(groups, pc.fractions, floor=pc.floor)
    if src == "tabular_csv":
        stats = {}
        pop = ingest_tabular(pc.csv_path, pc.feature_cols, pc.label_col, pc.group_col, pc.normalize,
                             intercept=pc.intercept, group_order=pc.group_order, stats=stats)
        if pc.fractions:
            pop = make_population(pop.groups, pc.fractions, floor=pc.floor)
        elif pc.floor:
            pop = make_population(pop.groups, pop.fractions, floor=pc.floor)
        return pop
    raise ValidationError([f"population.source: unknown {src!r}"])


def ingest_tabular(path, feature_cols, label_col, group_col, normalize: bool = False, *,
                   intercept: bool = False, group_order=(), stats: dict | None = None) -> PopulationState:
    """One group per distinct value of ``group_col`` with uniform weights and count-based fractions.

    With ``normalize`` every feature column is z-scored using statistics of
    the whole file; they are written into ``stats`` when a dict is passed.
    Groups follow ``group_order`` if given, else order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    cols = {}
    for name in list(feature_cols) + [label_col, group_col]:
        if name not in header:
            raise BadColumn(f"column {name!r} not in {path.name}")
        cols[name] = header.index(name)
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")

    def numeric(name):
        j = cols[name]
        out = np.empty(len(rows))
        for i, row in enumerate(rows):
            try:
                out[i] = float(row[j])
            except ValueError:
                raise NonNumericFeature(f"{path}:{i + 2}: column {name!r} holds {row[j]!r}") from None
        return out

    X = np.column_stack([numeric(c) for c in feature_cols]) if feature_cols else np.empty((len(rows), 0))
    y = numeric(label_col)
    g = [row[cols[group_col]].strip() for row in rows]
    if normalize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
        if stats is not None:
            stats.update({"mean": mu.tolist(), "sd": sd.tolist(), "columns": list(feature_cols)})
    X = _with_intercept(X, intercept)
    order = [str(v) for v in group_order] if group_order else list(dict.fromkeys(g))
    if len(set(g)) < 2:
        raise SingleGroup(f"{path.name}: group column {group_col!r} has a single value")
    missing = set(g) - set(order)
    if missing:
        raise BadColumn(f"group values {sorted(missing)} missing from group_order")
    garr = np.array(g)
    groups, counts = [], []
    for s, value in enumerate(order):
        idx = np.flatnonzero(garr == value)
        groups.append(GroupDistribution(s, X[idx], y[idx], None))
        counts.append(len(idx))
    if stats is not None:
        stats["groups"] = order
    return make_population(groups, np.array(counts) / len(rows))


# ---------------------------------------------------------------- problems

def estimate_epsilon(problem: Problem, n_probe: int = 11) -> float:
    """Probe the transition over a parameter grid and over fraction perturbations of the start population.

    This is a lower bound on the true sensitivity.  Only meaningful when the
    distance is exact, i.e. one-dimensional data.
    """
    pop = problem.population
    T, loss = problem.transition, problem.loss
    lo, hi = problem.box
    grid = np.linspace(lo, hi, n_probe)
    fam = problem.family
    dim = problem.n_params
    probes = []
    for a, b in zip(grid[:-1], grid[1:]):
        probes.append((Model(np.full(dim, a), fam), Model(np.full(dim, b), fam), pop))
    if pop.n_groups >= 2:
        base = pop.fractions
        for shift in (-0.05, 0.05):
            p2 = base.copy()
            p2[0] = np.clip(p2[0] + shift, pop.floor, 1.0)
            p2[1:] = (1.0 - p2[0]) * base[1:] / base[1:].sum()
            other = make_population(pop.groups, p2, floor=0.0)
            if wasserstein1(pop, other) == 0:
                continue
            for th in grid[:: max(1, n_probe // 5)]:
                probes.append((Model(np.full(dim, th), fam), pop, other))
    return estimate_sensitivity(T, loss, probes)


def build_problem(cfg: ScenarioConfig, seed=0, full: bool = False) -> Problem:
    pop = build_population(cfg, seed, full)
    problem = Problem(
        population=pop,
        loss=cfg.loss,
        transition=cfg.transition,
        schema=cfg.schema,
        box=cfg.box,
        solver_tol=cfg.solver_tol,
        solver_max_iters=cfg.solver_max_iters,
        theta0=cfg.theta0,
        epsilon=cfg.epsilon if isinstance(cfg.epsilon, (int, float)) else None,
        name=cfg.name,
        seed=seed,
    )
    return problem


def problem_epsilon(cfg: ScenarioConfig, problem: Problem):
    """``(epsilon, source)`` for the certificate: configured, estimated, or ``(None, 'unknown')``."""
    if isinstance(cfg.epsilon, (int, float)):
        return float(cfg.epsilon), "assumed"
    if cfg.epsilon == "estimate" and problem.population.dimension == 1:
        return estimate_epsilon(problem), "estimated"
    return None, "unknown"
