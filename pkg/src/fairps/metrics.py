"""Disparities, contraction diagnostics and stability certificates."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .errors import NoCertificate, SingleGroup, TooShort
from .losses import group_losses, tilde_beta

MONOTONE_TOL = 1e-6


def spread(values) -> float:
    """``|v_a - v_b|`` for two entries, ``max - min`` in general, 0 for a single entry."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    if v.size == 2:
        return float(abs(v[0] - v[1]))
    return float(v.max() - v.min())


def loss_disparity(model, pop, loss) -> float:
    if pop.n_groups < 2:
        raise SingleGroup("loss disparity needs at least two groups")
    return spread(group_losses(model, loss, pop))


def participation_disparity(pop) -> float:
    if pop.n_groups < 2:
        raise SingleGroup("participation disparity needs at least two groups")
    return spread(pop.fractions)


def _distances(points):
    return [p.step_norm + p.w1_step for p in points[1:]]


def contraction_ratios(traj) -> list:
    """Successive ratios ``d_{t+1} / d_t`` of ``d_t = step_norm + w1_step``.

    Round 0 has no step and is ignored.  Rounds with ``d_t < 1e-12`` are
    skipped as denominators.
    """
    points = traj.points if hasattr(traj, "points") else traj
    if len(points) < 3:
        raise TooShort("contraction ratios need at least three points")
    d = _distances(points)
    return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] >= 1e-12]


def tail_ratios(traj, skip_fraction: float = 0.25, floor: float = 1e-9) -> list:
    """Contraction ratios past the first ``skip_fraction`` of the run.

    Denominators below ``floor`` are dropped as well: once both distances sit
    near the inner-solver tolerance their ratio measures rounding, not the map.
    """
    d = _distances(traj.points)
    start = int(np.ceil(skip_fraction * len(d)))
    return [d[i + 1] / d[i] for i in range(start, len(d) - 1) if d[i] >= max(floor, 1e-12)]


@dataclass(frozen=True)
class StabilityCertificate:
    gamma: float
    beta: float
    tilde_beta: float
    epsilon: float
    epsilon_source: str
    lhs: float
    holds: bool
    schema_condition: str

    @property
    def threshold(self) -> float:
        return 1.0 if self.schema_condition == "plain" else 1.0 - self.epsilon

    def to_dict(self) -> dict:
        return asdict(self)


def certificate(loss, mechanism, rho: float, epsilon: float, epsilon_source: str = "assumed",
                schema: str = "conventional") -> StabilityCertificate:
    """Check ``epsilon (1 + tilde_beta / gamma)`` against the schema's threshold.

    Conventional and delayed schemas need the value below 1; the k-delayed
    schema needs it below ``1 - epsilon``.
    """
    kind = mechanism.kind if hasattr(mechanism, "kind") else str(mechanism)
    if kind in ("glv", "dro_chi2"):
        raise NoCertificate(f"no certificate exists for the {kind} mechanism")
    if loss.gamma is None or loss.beta is None or loss.loss_sup is None:
        raise NoCertificate("gamma, beta and loss_sup must all be configured")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    tb = tilde_beta(kind, rho, loss.loss_sup, loss.beta)
    lhs = epsilon * (1.0 + tb / loss.gamma)
    cond = "k_delayed_strict" if schema == "k_delayed" else "plain"
    thr = 1.0 if cond == "plain" else 1.0 - epsilon
    return StabilityCertificate(loss.gamma, loss.beta, tb, float(epsilon), epsilon_source, lhs, lhs < thr, cond)


def assumption1_fraction(traj) -> float:
    """Share of rounds where the largest group also has the smallest loss."""
    pts = traj.points
    hits = [int(np.argmax(p.fractions)) == int(np.argmin(p.group_losses)) for p in pts]
    return float(np.mean(hits)) if hits else float("nan")


class MonotonicityRow(NamedTuple):
    rho: float
    loss_disparity_ps: float
    participation_disparity_ps: float
    verdict: str
    assumption1_fraction: float
    flagged: bool
    minority_fraction: float = float("nan")


def summarize_runs(rho: float, trajectories, errors=()) -> MonotonicityRow:
    """Seed-averaged terminal values for one rho; ``flagged`` is filled in by :func:`flag_rows`."""
    trajectories = list(trajectories)
    verdicts = [str(t.verdict) for t in trajectories] + [f"Error({e})" for e in errors]
    if not trajectories:
        nan = float("nan")
        return MonotonicityRow(float(rho), nan, nan, verdicts[0] if verdicts else "NoRuns", nan, False, nan)
    last = [t.points[-1] for t in trajectories]
    verdict = verdicts[0] if len(set(verdicts)) == 1 else "Mixed(" + ",".join(sorted(set(verdicts))) + ")"
    return MonotonicityRow(
        float(rho),
        float(np.mean([p.loss_disparity for p in last])),
        float(np.mean([p.participation_disparity for p in last])),
        verdict,
        float(np.mean([assumption1_fraction(t) for t in trajectories])),
        False,
        float(np.mean([np.min(p.fractions) for p in last])),
    )


def flag_rows(rows) -> list:
    """Mark rows whose loss disparity exceeds the last finite earlier value by more than 1e-6."""
    out, prev = [], None
    for row in rows:
        ld = row.loss_disparity_ps
        flagged = prev is not None and np.isfinite(ld) and ld > prev + MONOTONE_TOL
        out.append(row._replace(flagged=bool(flagged)))
        if np.isfinite(ld):
            prev = ld
    return out


def monotonicity_report(scenario, mechanism, rho_list, tau: float = 1e-6, seeds=None,
                        max_rounds: int = 200, trajectories: dict | None = None) -> list:
    """Terminal disparities per rho, averaged over seeds, with non-increase flags.

    ``scenario`` is either a built problem or a callable ``seed -> problem``.
    Flags are informational: the guarantee behind them assumes the majority
    group also has the lower loss, which ``assumption1_fraction`` tracks.
    Failures are recorded in the verdict column and the remaining rows
    still run.
    """
    from .dynamics import fair_rrm
    from .losses import FairMechanism

    rho_list = list(rho_list)
    if rho_list != sorted(rho_list):
        raise ValueError("rho_list must be sorted ascending")
    kind = mechanism.kind if hasattr(mechanism, "kind") else str(mechanism)
    seeds = [None] if seeds is None else list(seeds)
    rows = []
    for rho in rho_list:
        mech = FairMechanism(kind, 0.0 if kind == "plain" else rho)
        runs, errors = [], []
        for seed in seeds:
            problem = scenario(seed) if callable(scenario) else scenario
            try:
                traj = fair_rrm(problem, mech, tau=tau, max_rounds=max_rounds)
            except Exception as exc:  # recorded, the report continues
                errors.append(type(exc).__name__)
                continue
            if trajectories is not None:
                trajectories[(kind, rho, seed)] = traj
            runs.append(traj)
        rows.append(summarize_runs(rho, runs, errors))
    return flag_rows(rows)
