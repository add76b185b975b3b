"""Repeated-deployment engines and convergence classification.

One engine drives every variant: exact repeated (fair) risk minimization,
its sampled counterpart, and repeated chi-square DRO.  Round ``t`` deploys
the current model, ``D^(t) = Tr(theta^(t-1); D^(t-1))``, and then refits on
the learner's view of the new population to get ``theta^(t)``.  Each recorded
pair ``(theta^(t), D^(t))`` therefore holds a model fitted to its own data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DidNotConverge,
    NonDifferentiableFamily,
    NotAFixedPoint,
    NotConverged,
    RoundError,
    TooShort,
)
from .losses import (
    FairMechanism,
    LossSpec,
    Model,
    chi2_worst_weights,
    group_losses,
    max_sample_loss,
    objective_and_gradient,
    objective_value,
    rw_weights,
)
from .metrics import spread
from .optimizer import Objective, best_threshold_1d, minimize_smooth_convex
from .population import PopulationState, _flatten, sample_empirical, wasserstein1, wasserstein1_matched
from .transitions import DeploymentSchema, TransitionSpec, apply_schema, apply_transition, compute_delay_r

OSCILLATION_TOL = 1e-9
MAX_PERIOD = 8
DIVERGENCE_WINDOW = 10


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a run needs apart from the mechanism: data, loss, dynamics and solver settings."""

    population: PopulationState
    loss: LossSpec
    transition: TransitionSpec
    schema: DeploymentSchema = field(default_factory=DeploymentSchema)
    box: tuple = (-10.0, 10.0)
    solver_tol: float = 1e-10
    solver_max_iters: int = 10000
    theta0: Optional[tuple] = None
    epsilon: Optional[float] = None
    name: str = ""
    seed: Optional[int] = None

    @property
    def family(self) -> str:
        return self.loss.model_family

    @property
    def n_params(self) -> int:
        return 1 if self.family in ("mean", "threshold") else self.population.dimension

    def model(self, theta) -> Model:
        return Model(theta, self.family)


# ---------------------------------------------------------------- records

@dataclass(frozen=True)
class Verdict:
    kind: str
    value: Optional[int] = None

    def __str__(self):
        return self.kind if self.value is None else f"{self.kind}({self.value})"

    @property
    def converged(self) -> bool:
        return self.kind == "Converged"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        if "(" in text:
            kind, rest = text.split("(", 1)
            return cls(kind, int(rest.rstrip(")")))
        return cls(text)


@dataclass(frozen=True, eq=False)
class TrajectoryPoint:
    t: int
    theta: np.ndarray
    fractions: np.ndarray
    group_losses: np.ndarray
    perf_loss: float
    loss_disparity: float
    participation_disparity: float
    step_norm: float
    w1_step: float
    n_t: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "theta": self.theta.tolist(),
            "fractions": self.fractions.tolist(),
            "group_losses": self.group_losses.tolist(),
            "perf_loss": self.perf_loss,
            "loss_disparity": self.loss_disparity,
            "participation_disparity": self.participation_disparity,
            "step_norm": self.step_norm,
            "w1_step": self.w1_step,
            "n_t": self.n_t,
        }


@dataclass(eq=False)
class Trajectory:
    points: list
    verdict: Verdict
    config: dict = field(default_factory=dict)
    final_population: Optional[PopulationState] = None
    max_loss_seen: float = 0.0
    w1_exact: bool = True
    delay_steps: Optional[int] = None

    @property
    def thetas(self) -> np.ndarray:
        return np.vstack([p.theta for p in self.points])

    @property
    def final(self) -> TrajectoryPoint:
        return self.points[-1]

    def to_dict(self) -> dict:
        return {
            "verdict": str(self.verdict),
            "config": self.config,
            "max_loss_seen": self.max_loss_seen,
            "w1_exact": self.w1_exact,
            "delay_steps": self.delay_steps,
            "points": [p.to_dict() for p in self.points],
        }


# ---------------------------------------------------------------- verdicts

def detect_convergence(traj, tau: float) -> Verdict:
    """Classify a trajectory.

    Converged at the first round with ``step_norm <= tau``; otherwise the
    smallest period ``p <= 8`` for which the last ``2p`` iterates repeat the
    ones ``p`` rounds earlier within 1e-9; otherwise Diverged if the step
    norm grew over each of the last 10 rounds; otherwise MaxIterReached.
    """
    points = traj.points if hasattr(traj, "points") else traj
    if len(points) < 2:
        raise TooShort("need at least two points to classify a trajectory")
    for p in points[1:]:
        if p.step_norm <= tau:
            return Verdict("Converged", p.t)
    th = np.vstack([p.theta for p in points[1:]])
    n = len(th)
    for period in range(2, MAX_PERIOD + 1):
        if n < 3 * period:
            break
        lag = np.linalg.norm(th[n - 2 * period:] - th[n - 3 * period:n - period], axis=1)
        if np.all(lag <= OSCILLATION_TOL):
            return Verdict("Oscillating", period)
    steps = np.array([p.step_norm for p in points[1:]])
    if len(steps) > DIVERGENCE_WINDOW and np.all(np.diff(steps[-DIVERGENCE_WINDOW - 1:]) > 0):
        return Verdict("Diverged")
    return Verdict("MaxIterReached")


# ---------------------------------------------------------------- solving

def _plain_like(mech: FairMechanism) -> bool:
    # at rho = 0 the penalties vanish and GLP/SLP are the plain risk
    return mech.kind == "plain" or (mech.kind in ("glp", "slp") and mech.rho == 0)


def _check_threshold_mechanism(mech: FairMechanism):
    if not (_plain_like(mech) or mech.kind in ("rw", "dro_chi2")):
        raise NonDifferentiableFamily(f"the 0-1 loss cannot be combined with {mech.kind}")


def solve(problem: Problem, mech: FairMechanism, pop: PopulationState, q=None, start=None) -> np.ndarray:
    """Minimizer of the mechanism's objective on ``pop`` (RW and DRO use weights ``q``)."""
    if problem.family == "threshold":
        _check_threshold_mechanism(mech)
        w = pop.fractions if _plain_like(mech) else q
        return np.array([best_threshold_1d(pop, w)])
    loss = problem.loss

    def fg(theta):
        return objective_and_gradient(mech, problem.model(theta), pop, loss, q)

    def value(theta):
        return objective_value(mech, problem.model(theta), pop, loss, q)

    obj = Objective(value, None, problem.n_params, problem.box[0], problem.box[1], value_and_grad=fg)
    x0 = np.zeros(problem.n_params) if start is None else start
    return minimize_smooth_convex(obj, x0, problem.solver_tol, problem.solver_max_iters).theta


def initial_theta(problem: Problem, mech: FairMechanism, pop: PopulationState) -> np.ndarray:
    """Configured ``theta0`` if any, otherwise the mechanism's minimizer on ``pop``.

    RW and DRO have no weights yet at round 0, so they start from the plain minimizer.
    """
    if problem.theta0 is not None:
        return np.asarray(problem.theta0, dtype=float).reshape(problem.n_params)
    first = mech if mech.kind not in ("rw", "dro_chi2") else FairMechanism("plain")
    return solve(problem, first, pop, q=pop.fractions)


def _weights(mech, view, prev_view, model, loss):
    """Group weights for RW and DRO at a refit on ``view``.

    RW scores each group by the deployed model's loss on the data it was
    fitted to (``prev_view``); DRO takes the worst case of the deployed
    model's losses on the new data.
    """
    if mech.kind == "rw":
        l = view.fractions * group_losses(model, loss, prev_view)
        return rw_weights(view.fractions, l, mech.rho)
    if mech.kind == "dro_chi2":
        return chi2_worst_weights(view.fractions, group_losses(model, loss, view), mech.radius)
    return None


def _w1(a, b):
    xa, _ = _flatten(a)
    if xa.shape[1] == 1:
        return wasserstein1(a, b), True
    r = wasserstein1_matched(a, b)
    return r.value, r.exact


def _record(t, problem, theta, pop, step, w1, n_t=None):
    model = problem.model(theta)
    L = group_losses(model, problem.loss, pop)
    return TrajectoryPoint(
        t, np.array(theta, dtype=float), np.array(pop.fractions), L, float(np.dot(pop.fractions, L)),
        spread(L), spread(pop.fractions), float(step), float(w1), n_t,
    )


def _run(problem: Problem, mech: FairMechanism, schema: DeploymentSchema | None, tau: float, max_rounds: int,
         schedule: Callable | None = None, seed=None, stop_on_converge: bool = True) -> Trajectory:
    if tau <= 0:
        raise ValueError("tau must be positive")
    schema = problem.schema if schema is None else schema
    if problem.family == "threshold":
        _check_threshold_mechanism(mech)
    loss = problem.loss
    pop = problem.population

    def view_of(pop, t):
        n = schedule(t) if schedule is not None else None
        if n is None:
            return pop, None
        return sample_empirical(pop, int(n), np.random.SeedSequence([int(seed or 0), t])), int(n)

    view, n0 = view_of(pop, 0)
    try:
        theta = initial_theta(problem, mech, view)
    except DidNotConverge as exc:
        raise RoundError(0, exc) from exc
    points = [_record(0, problem, theta, pop, 0.0, 0.0, n0)]
    max_loss = max_sample_loss(problem.model(theta), loss, pop)
    delay_steps = None
    w1_exact = True
    for t in range(1, max_rounds + 1):
        model = problem.model(theta)
        if schema.kind == "delayed" and delay_steps is None:
            first = apply_transition(problem.transition, model, pop, loss)
            delay_steps = compute_delay_r(schema.epsilon_assumed, _w1(pop, first)[0], schema.delta)
            new_pop = first
            for _ in range(delay_steps - 1):
                new_pop = apply_transition(problem.transition, model, new_pop, loss)
        else:
            new_pop = apply_schema(problem.transition, schema, model, pop, loss, delay_steps=delay_steps)
        new_view, n_t = view_of(new_pop, t)
        q = _weights(mech, new_view, view, model, loss)
        try:
            new_theta = solve(problem, mech, new_view, q, start=theta)
        except DidNotConverge as exc:
            raise RoundError(t, exc) from exc
        w1, exact = _w1(new_pop, pop)
        w1_exact = w1_exact and exact
        step = float(np.linalg.norm(new_theta - theta))
        points.append(_record(t, problem, new_theta, new_pop, step, w1, n_t))
        max_loss = max(max_loss, max_sample_loss(problem.model(new_theta), loss, new_pop))
        theta, pop, view = new_theta, new_pop, new_view
        if stop_on_converge and step <= tau:
            break
    verdict = detect_convergence(points, tau)
    config = {
        "scenario": problem.name,
        "mechanism": mech.kind,
        "rho": mech.rho,
        "radius": mech.radius,
        "schema": schema.kind,
        "k": schema.k,
        "seed": problem.seed if seed is None else seed,
        "tau": tau,
        "max_rounds": max_rounds,
    }
    return Trajectory(points, verdict, config, pop, max_loss, w1_exact, delay_steps)


# ---------------------------------------------------------------- engines

def fair_rrm(problem: Problem, mechanism: FairMechanism, schema: DeploymentSchema | None = None,
             tau: float = 1e-6, max_rounds: int = 200) -> Trajectory:
    """Repeated fair risk minimization on the exact population."""
    if mechanism.kind == "dro_chi2":
        raise ValueError("use repeated_dro for the chi-square DRO baseline")
    return _run(problem, mechanism, schema, tau, max_rounds)


def fair_rerm(problem: Problem, mechanism: FairMechanism, sample_schedule: Callable, seed: int,
              tau: float = 1e-6, max_rounds: int = 200, schema: DeploymentSchema | None = None) -> Trajectory:
    """Repeated fair empirical risk minimization.

    ``sample_schedule(t)`` gives the number of points drawn from ``D^(t)``
    before the next solve; returning ``None`` hands the learner the exact
    population, which reproduces :func:`fair_rrm` exactly.  Round ``t`` uses
    the generator seeded by ``SeedSequence([seed, t])``.  Reported metrics are
    always computed on the true population.
    """
    if mechanism.kind == "dro_chi2":
        raise ValueError("use repeated_dro for the chi-square DRO baseline")
    for t in range(3):
        n = sample_schedule(t)
        if n is not None and n < 1:
            raise ValueError("sample_schedule must return at least 1")
    return _run(problem, mechanism, schema, tau, max_rounds, schedule=sample_schedule, seed=seed)


def repeated_dro(problem: Problem, radius: float, tau: float = 1e-6, max_rounds: int = 100) -> Trajectory:
    """Repeated chi-square DRO over group weights.

    Runs the full ``max_rounds`` unless a step falls below ``tau``; an
    oscillation is reported by the verdict rather than cut short.
    """
    return _run(problem, FairMechanism("dro_chi2", 0.0, radius), None, tau, max_rounds)


def rerm_sample_size(t: int, p_fail: float, epsilon: float, tilde_beta: float, gamma: float,
                     delta: float, m: int, C: float = 1.0) -> int:
    """``n_t = ceil(C log(t / p) / (epsilon (1 + tilde_beta / gamma) delta)^m)``.

    Only the order is known for this schedule, so the leading constant ``C``
    is the caller's choice.
    """
    if not (0 < p_fail < 1 and 0 < delta < 1 and epsilon > 0 and t >= 1):
        raise ValueError("need t >= 1, p_fail and delta in (0, 1) and epsilon > 0")
    kappa = epsilon * (1.0 + tilde_beta / gamma)
    n = C * math.log(max(t / p_fail, math.e)) / (kappa * delta) ** m
    return max(1, math.ceil(n))


@dataclass(frozen=True, eq=False)
class FairPS:
    theta: np.ndarray
    population: PopulationState
    trajectory: Trajectory
    transition_residual: float
    argmin_residual: float


def fixed_point_residuals(problem: Problem, mech: FairMechanism, theta, pop) -> tuple:
    """``(W1(T(theta; D), D), |argmin L_fair(.; D) - theta|)`` at a candidate pair."""
    model = problem.model(theta)
    moved = apply_schema(problem.transition, DeploymentSchema(), model, pop, problem.loss)
    t_res = _w1(moved, pop)[0]
    q = _weights(mech, pop, pop, model, problem.loss)
    best = solve(problem, mech, pop, q, start=np.asarray(theta, dtype=float))
    return t_res, float(np.linalg.norm(best - theta))


def find_fair_ps(problem: Problem, mechanism: FairMechanism, tau: float = 1e-6, max_rounds: int = 200,
                 schema: DeploymentSchema | None = None) -> FairPS:
    """Run to convergence and confirm the result is a fixed point of both maps within ``10 tau``."""
    traj = fair_rrm(problem, mechanism, schema, tau, max_rounds)
    if not traj.verdict.converged:
        raise NotConverged(f"{problem.name or 'scenario'} ended with {traj.verdict}")
    theta = traj.final.theta
    pop = traj.final_population
    t_res, a_res = fixed_point_residuals(problem, mechanism, theta, pop)
    if t_res > 10 * tau or a_res > 10 * tau:
        raise NotAFixedPoint(f"residuals W1={t_res:.3e}, argmin={a_res:.3e} exceed {10 * tau:.1e}")
    return FairPS(theta, pop, traj, t_res, a_res)


# ---------------------------------------------------------------- serialization

CSV_VERSION_LINE = "# fairps-trajectory v1"


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if not isinstance(v, (int, np.integer)) else str(int(v))


def trajectory_csv_header(traj: Trajectory) -> list:
    first = traj.points[0]
    d, k = len(first.theta), len(first.fractions)
    return (
        ["t"] + [f"theta_{i}" for i in range(d)] + [f"p_{i}" for i in range(k)] + [f"L_{i}" for i in range(k)]
        + ["perf_loss", "loss_disparity", "participation_disparity", "step_norm", "w1_step", "n_t"]
    )


def trajectory_to_csv(traj: Trajectory) -> str:
    """CSV text with a version comment line; floats use ``repr`` so output is reproducible to the bit."""
    lines = [CSV_VERSION_LINE, ",".join(trajectory_csv_header(traj))]
    for p in traj.points:
        row = [str(p.t)] + [_fmt(v) for v in p.theta] + [_fmt(v) for v in p.fractions]
        row += [_fmt(v) for v in p.group_losses]
        row += [_fmt(p.perf_loss), _fmt(p.loss_disparity), _fmt(p.participation_disparity),
                _fmt(p.step_norm), _fmt(p.w1_step), _fmt(p.n_t)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def read_trajectory_csv(text: str) -> list:
    """Parse CSV text back into :class:`TrajectoryPoint` objects."""
    lines = text.splitlines()
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise ValueError("missing trajectory format line")
    header = lines[1].split(",")
    d = sum(h.startswith("theta_") for h in header)
    k = sum(h.startswith("p_") for h in header)
    points = []
    for line in lines[2:]:
        cells = line.split(",")
        vals = [float(c) if c else None for c in cells]
        i = 1
        theta = np.array(vals[i:i + d]); i += d
        fr = np.array(vals[i:i + k]); i += k
        L = np.array(vals[i:i + k]); i += k
        perf, ld, pd, step, w1, n_t = vals[i:i + 6]
        points.append(TrajectoryPoint(int(cells[0]), theta, fr, L, perf, ld, pd, step, w1,
                                      None if n_t is None else int(n_t)))
    return points
