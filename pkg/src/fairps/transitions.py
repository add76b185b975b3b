"""Transition maps ``D' = T(theta; D)`` and repeated-deployment schemas."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DegenerateProbe, DimensionMismatch, GroupCountMismatch, InvalidEpsilon
from .losses import LossSpec, Model, group_losses
from .population import PopulationState, wasserstein1

# ---------------------------------------------------------------- kinds


@dataclass(frozen=True)
class LinearRetention:
    """Two groups; ``p_a' = clamp(p_a + rate (L_b - L_a))``."""

    rate: float = 0.1
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    kind: str = field(default="linear_retention", init=False)

    def __post_init__(self):
        if not 0.0 <= self.clamp_lo <= self.clamp_hi <= 1.0:
            raise ValueError("clamp bounds must satisfy 0 <= lo <= hi <= 1")


def _check_pmin(p_min):
    p_min = tuple(float(v) for v in p_min)
    if any(v < 0 for v in p_min) or sum(p_min) >= 1:
        raise ValueError(f"p_min {p_min} must be nonnegative with sum < 1")
    return p_min


@dataclass(frozen=True)
class RatioRetention:
    """Two-group retention driven by the loss ratio, with per-group floors.

    ``rate`` < 1 blends the new fractions with the old ones; it changes the
    speed of the dynamics but not their fixed points.
    """

    p_min: tuple = (0.0, 0.0)
    rate: float = 1.0
    kind: str = field(default="ratio_retention", init=False)

    def __post_init__(self):
        object.__setattr__(self, "p_min", _check_pmin(self.p_min))
        if not 0 < self.rate <= 1:
            raise ValueError("rate must lie in (0, 1]")


@dataclass(frozen=True)
class MultiGroupRatioRetention:
    """Retention for any number of groups using the rank-reversed loss of each group."""

    p_min: tuple = ()
    rate: float = 1.0
    kind: str = field(default="multigroup_ratio_retention", init=False)

    def __post_init__(self):
        object.__setattr__(self, "p_min", _check_pmin(self.p_min))
        if not 0 < self.rate <= 1:
            raise ValueError("rate must lie in (0, 1]")


@dataclass(frozen=True)
class StrategicShift:
    """Manipulable features move against the model: ``X' = X0 - epsilon * theta[mask]``.

    ``X0`` is the group's original features unless ``cumulative`` is set, in
    which case the shift compounds on the current features.
    """

    epsilon: float = 0.0
    mask: tuple | None = None
    cumulative: bool = False
    kind: str = field(default="strategic_shift", init=False)


@dataclass(frozen=True)
class BudgetImprovement:
    """One-dimensional improvement ``X' = X0 + eta_s * theta`` with a budget per group."""

    budgets: tuple = ()
    cumulative: bool = False
    kind: str = field(default="budget_improvement", init=False)

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))


@dataclass(frozen=True)
class AffineFraction:
    """Two groups; the fraction of ``group`` is set to ``clamp(intercept + slope * theta[0])``."""

    intercept: float = 0.5
    slope: float = 0.0
    group: int = 0
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    kind: str = field(default="affine_fraction", init=False)


@dataclass(frozen=True)
class Identity:
    kind: str = field(default="identity", init=False)


@dataclass(frozen=True)
class Composite:
    children: tuple = ()
    kind: str = field(default="composite", init=False)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("a composite transition needs at least one child")


TransitionSpec = Union[
    LinearRetention, RatioRetention, MultiGroupRatioRetention, StrategicShift,
    BudgetImprovement, AffineFraction, Identity, Composite,
]


# ---------------------------------------------------------------- application

def _need_groups(pop, k, what):
    if pop.n_groups != k:
        raise GroupCountMismatch(f"{what} needs {k} groups, population has {pop.n_groups}")


def _retention_ratio(p, L, p_min, partner):
    """``R(s) = (1 - sum p_min) * (p_s + L[partner_s] / sum L) / 2 + p_min_s``."""
    total = L.sum()
    share = L[partner] / total if total > 0 else np.full(len(p), 1.0 / len(p))
    return (1.0 - np.sum(p_min)) * 0.5 * (p + share) + np.asarray(p_min)


def _blend(p, R, rate):
    new = R / R.sum()
    if rate == 1.0:
        return new
    return (1.0 - rate) * p + rate * new


def rank_reversed_partner(L) -> np.ndarray:
    """Index whose loss has the mirrored rank; ties are ordered by group index."""
    L = np.asarray(L, dtype=float)
    n = len(L)
    order = np.lexsort((np.arange(n), L))
    pos = np.empty(n, dtype=int)
    pos[order] = np.arange(n)
    return order[n - 1 - pos]


def apply_transition(T: TransitionSpec, model: Model, pop: PopulationState, loss: LossSpec) -> PopulationState:
    kind = T.kind
    if kind == "identity":
        return pop
    if kind == "composite":
        for child in T.children:
            pop = apply_transition(child, model, pop, loss)
        return pop
    if kind == "linear_retention":
        _need_groups(pop, 2, "linear retention")
        L = group_losses(model, loss, pop)
        pa = min(max(pop.fractions[0] + T.rate * (L[1] - L[0]), T.clamp_lo), T.clamp_hi)
        return pop.with_fractions([pa, 1.0 - pa])
    if kind in ("ratio_retention", "multigroup_ratio_retention"):
        if kind == "ratio_retention":
            _need_groups(pop, 2, "ratio retention")
        if len(T.p_min) != pop.n_groups:
            raise GroupCountMismatch(f"{len(T.p_min)} floors for {pop.n_groups} groups")
        L = group_losses(model, loss, pop)
        partner = np.array([1, 0]) if kind == "ratio_retention" else rank_reversed_partner(L)
        R = _retention_ratio(pop.fractions, L, T.p_min, partner)
        return pop.with_fractions(_blend(pop.fractions, R, T.rate))
    if kind == "affine_fraction":
        _need_groups(pop, 2, "affine fraction rule")
        v = min(max(T.intercept + T.slope * float(model.theta[0]), T.clamp_lo), T.clamp_hi)
        p = np.empty(2)
        p[T.group] = v
        p[1 - T.group] = 1.0 - v
        return pop.with_fractions(p)
    if kind == "strategic_shift":
        theta = model.theta
        if len(theta) != pop.dimension:
            raise DimensionMismatch("strategic shift needs one parameter per feature")
        mask = np.ones(pop.dimension, dtype=bool) if T.mask is None else np.asarray(T.mask, dtype=bool)
        move = T.epsilon * np.where(mask, theta, 0.0)
        groups = [g.with_features((g.features if T.cumulative else g.origin) - move) for g in pop.groups]
        return pop.with_groups(groups)
    if kind == "budget_improvement":
        if len(T.budgets) != pop.n_groups:
            raise GroupCountMismatch(f"{len(T.budgets)} budgets for {pop.n_groups} groups")
        if pop.dimension != 1:
            raise DimensionMismatch("budget improvement is one-dimensional")
        th = float(model.theta[0])
        groups = [
            g.with_features((g.features if T.cumulative else g.origin) + eta * th)
            for g, eta in zip(pop.groups, T.budgets)
        ]
        return pop.with_groups(groups)
    raise ValueError(f"unknown transition kind {kind!r}")


def moves_support(T: TransitionSpec) -> bool:
    if T.kind == "composite":
        return any(moves_support(c) for c in T.children)
    return T.kind in ("strategic_shift", "budget_improvement")


# ---------------------------------------------------------------- schemas

SCHEMAS = ("conventional", "k_delayed", "delayed")


@dataclass(frozen=True)
class DeploymentSchema:
    kind: str = "conventional"
    k: int = 1
    delta: float | None = None
    epsilon_assumed: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEMAS:
            raise ValueError(f"unknown schema {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.kind == "delayed":
            if self.delta is None or self.delta <= 0:
                raise ValueError("the delayed schema needs delta > 0")
            if self.epsilon_assumed is None or not 0 < self.epsilon_assumed < 1:
                raise InvalidEpsilon("the delayed schema needs an assumed epsilon in (0, 1)")


def compute_delay_r(epsilon_assumed: float, w1_first_step: float, delta: float) -> int:
    """Number of transition applications the delayed schema performs, ``ceil(r) + 1``."""
    if not 0 < epsilon_assumed < 1:
        raise InvalidEpsilon(f"epsilon {epsilon_assumed} not in (0, 1)")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if w1_first_step <= delta:
        return 1
    r = math.log(w1_first_step / delta) / math.log(1.0 / epsilon_assumed)
    return math.ceil(r) + 1


def apply_schema(T, schema: DeploymentSchema, model, pop, loss, delay_steps: int | None = None):
    """Apply ``T`` as many times as the schema asks, always with the same model.

    For the delayed schema the step count comes from ``delay_steps`` when
    given; otherwise it is computed from the W1 size of this call's first step.
    """
    if schema.kind == "conventional":
        return apply_transition(T, model, pop, loss)
    if schema.kind == "k_delayed":
        steps = schema.k
    elif delay_steps is not None:
        steps = delay_steps
    else:
        first = apply_transition(T, model, pop, loss)
        steps = compute_delay_r(schema.epsilon_assumed, wasserstein1(pop, first), schema.delta)
        pop = first
        steps -= 1
    for _ in range(steps):
        pop = apply_transition(T, model, pop, loss)
    return pop


# ---------------------------------------------------------------- sensitivity

def estimate_sensitivity(T, loss: LossSpec, probes) -> float:
    """Largest observed W1 ratio over the probes, a lower bound on the true epsilon.

    A probe ``(model, model2, pop)`` measures sensitivity to the parameter;
    a probe ``(model, pop, pop2)`` measures sensitivity to the population.
    """
    best = 0.0
    for a, b, c in probes:
        if isinstance(b, Model):
            dist = float(np.linalg.norm(a.theta - b.theta))
            if dist == 0:
                raise DegenerateProbe("parameter probe with identical models")
            num = wasserstein1(apply_transition(T, a, c, loss), apply_transition(T, b, c, loss))
        else:
            dist = wasserstein1(b, c)
            if dist == 0:
                raise DegenerateProbe("population probe with identical populations")
            num = wasserstein1(apply_transition(T, a, b, loss), apply_transition(T, a, c, loss))
        best = max(best, num / dist)
    return best


def transition_from_dict(d: dict) -> TransitionSpec:
    """Build a transition from its config table."""
    d = dict(d)
    kind = d.pop("kind")
    if kind == "composite":
        return Composite(tuple(transition_from_dict(c) for c in d.pop("children", [])))
    table = {
        "linear_retention": LinearRetention,
        "ratio_retention": RatioRetention,
        "multigroup_ratio_retention": MultiGroupRatioRetention,
        "strategic_shift": StrategicShift,
        "budget_improvement": BudgetImprovement,
        "affine_fraction": AffineFraction,
        "identity": Identity,
    }
    if kind not in table:
        raise ValueError(f"unknown transition kind {kind!r}")
    for key in ("p_min", "budgets", "mask"):
        if key in d and d[key] is not None:
            d[key] = tuple(d[key])
    return table[kind](**d)


def transition_to_dict(T) -> dict:
    if T.kind == "composite":
        return {"kind": "composite", "children": [transition_to_dict(c) for c in T.children]}
    out = {"kind": T.kind}
    for name in T.__dataclass_fields__:
        if name == "kind":
            continue
        v = getattr(T, name)
        out[name] = list(v) if isinstance(v, tuple) else v
    return out
