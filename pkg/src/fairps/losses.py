"""Loss families, fair objectives and their gradients.

Every objective is assembled from the vector of group losses ``L_s`` and the
matrix of group gradients.  Routing all mechanisms through the same pieces is
what makes a zero-strength mechanism reproduce the plain objective bit for bit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import (
    IncompatibleModel,
    NegativeRadius,
    NoCertificate,
    NonDifferentiableFamily,
    TooManyGroups,
    WeightMismatch,
)
from .population import GroupDistribution, PopulationState, Sample

LOSS_FAMILIES = ("squared_error", "logistic_nll", "scalar_mean_squared", "zero_one")
MODEL_FAMILIES = ("linear", "logistic", "mean", "threshold")
MECHANISMS = ("plain", "glp", "slp", "rw", "glv", "dro_chi2")

_COMPATIBLE = {
    "squared_error": "linear",
    "logistic_nll": "logistic",
    "scalar_mean_squared": "mean",
    "zero_one": "threshold",
}


@dataclass(frozen=True, eq=False)
class Model:
    theta: np.ndarray
    family: str

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        th = np.array(np.atleast_1d(self.theta), dtype=float)
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)

    def with_theta(self, theta) -> "Model":
        return Model(theta, self.family)


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus the constants the stability certificate needs.

    ``l2`` adds ``l2/2 * |theta|^2`` to every per-sample loss; it is how the
    logistic family gets a strong-convexity constant.
    """

    family: str
    gamma: float | None = None
    beta: float | None = None
    loss_sup: float | None = None
    l2: float = 0.0

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        for name in ("gamma", "beta", "loss_sup"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.gamma is not None and self.beta is not None and self.gamma > self.beta:
            raise ValueError(f"gamma={self.gamma} exceeds beta={self.beta}")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")

    @property
    def differentiable(self) -> bool:
        return self.family != "zero_one"

    @property
    def model_family(self) -> str:
        return _COMPATIBLE[self.family]


@dataclass(frozen=True)
class FairMechanism:
    kind: str = "plain"
    rho: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {MECHANISMS}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.radius < 0:
            raise NegativeRadius(f"radius {self.radius} < 0")
        if self.kind == "plain" and self.rho != 0:
            raise ValueError("the plain mechanism takes rho = 0")


# ------------------------------------------------------------ per-sample core

def _check(spec: LossSpec, model: Model, dim: int):
    if _COMPATIBLE[spec.family] != model.family:
        raise IncompatibleModel(f"{spec.family} loss needs a {_COMPATIBLE[spec.family]} model, got {model.family}")
    want = 1 if model.family in ("mean", "threshold") else dim
    if model.theta.shape[0] != want:
        raise IncompatibleModel(f"{model.family} model needs {want} parameters, got {model.theta.shape[0]}")


def _design(model: Model, X: np.ndarray) -> np.ndarray:
    if model.family == "mean":
        return np.ones((X.shape[0], 1))
    return X


def sample_losses(spec: LossSpec, model: Model, X, y) -> np.ndarray:
    """Per-sample losses for a feature matrix and label vector."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(spec, model, X.shape[1])
    th = model.theta
    if spec.family == "zero_one":
        return ((X[:, 0] >= th[0]).astype(float) != y).astype(float)
    if spec.family == "scalar_mean_squared":
        out = (y - th[0]) ** 2
    elif spec.family == "squared_error":
        out = (y - X @ th) ** 2
    else:
        z = X @ th
        out = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    if spec.l2:
        out = out + 0.5 * spec.l2 * float(th @ th)
    return out


def sample_gradients(spec: LossSpec, model: Model, X, y) -> np.ndarray:
    """Per-sample gradients with respect to theta, shape (n, len(theta))."""
    if not spec.differentiable:
        raise NonDifferentiableFamily("the 0-1 loss has no gradient")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(spec, model, X.shape[1])
    th = model.theta
    A = _design(model, X)
    pred = A @ th
    if spec.family == "logistic_nll":
        dpred = expit(pred) - y
    else:
        dpred = 2.0 * (pred - y)
    G = dpred[:, None] * A
    if spec.l2:
        G = G + spec.l2 * th[None, :]
    return G


def point_loss(spec: LossSpec, model: Model, sample: Sample) -> float:
    return float(sample_losses(spec, model, sample.features[None, :], [sample.label])[0])


def point_loss_grad(spec: LossSpec, model: Model, sample: Sample) -> np.ndarray:
    return sample_gradients(spec, model, sample.features[None, :], [sample.label])[0]


# ------------------------------------------------------------ group level

def group_expected_loss(model: Model, loss: LossSpec, group: GroupDistribution) -> float:
    return float(np.dot(group.weights, sample_losses(loss, model, group.features, group.labels)))


def group_expected_grad(model: Model, loss: LossSpec, group: GroupDistribution) -> np.ndarray:
    return group.weights @ sample_gradients(loss, model, group.features, group.labels)


def group_losses(model: Model, loss: LossSpec, pop: PopulationState) -> np.ndarray:
    return np.array([group_expected_loss(model, loss, g) for g in pop.groups])


def group_gradients(model: Model, loss: LossSpec, pop: PopulationState) -> np.ndarray:
    return np.vstack([group_expected_grad(model, loss, g) for g in pop.groups])


def mixture_expected_loss(model: Model, loss: LossSpec, pop: PopulationState) -> float:
    """``sum_s p_s L_s``."""
    return float(np.dot(pop.fractions, group_losses(model, loss, pop)))


def mixture_gradient(model: Model, loss: LossSpec, pop: PopulationState) -> np.ndarray:
    return pop.fractions @ group_gradients(model, loss, pop)


def max_sample_loss(model: Model, loss: LossSpec, pop: PopulationState) -> float:
    return max(float(np.max(sample_losses(loss, model, g.features, g.labels))) for g in pop.groups)


# ------------------------------------------------------------ fair objectives

def glp_objective(model, pop, loss, rho) -> float:
    """Group-level penalty ``L + rho sum_s p_s L_s^2``."""
    L = group_losses(model, loss, pop)
    return float(np.dot(pop.fractions, L + rho * L ** 2))


def glp_gradient(model, pop, loss, rho) -> np.ndarray:
    L = group_losses(model, loss, pop)
    return (pop.fractions * (1.0 + 2.0 * rho * L)) @ group_gradients(model, loss, pop)


def _slp_group(model, loss, g, rho):
    ell = sample_losses(loss, model, g.features, g.labels)
    return float(np.dot(g.weights, ell + rho * ell ** 2))


def slp_objective(model, pop, loss, rho) -> float:
    """Sample-level penalty ``E[l + rho l^2]`` over the mixture."""
    vals = np.array([_slp_group(model, loss, g, rho) for g in pop.groups])
    return float(np.dot(pop.fractions, vals))


def slp_gradient(model, pop, loss, rho) -> np.ndarray:
    rows = []
    for g in pop.groups:
        ell = sample_losses(loss, model, g.features, g.labels)
        G = sample_gradients(loss, model, g.features, g.labels)
        rows.append((g.weights * (1.0 + 2.0 * rho * ell)) @ G)
    return pop.fractions @ np.vstack(rows)


def rw_weights(p, l, rho) -> np.ndarray:
    """Loss-guided re-weighting ``(p + rho l) / |p + rho l|_1``."""
    p = np.asarray(p, dtype=float)
    if rho == 0:
        return p.copy()
    v = p + rho * np.asarray(l, dtype=float)
    return v / np.sum(np.abs(v))


def _check_q(q, pop):
    q = np.asarray(q, dtype=float)
    if q.shape != (pop.n_groups,):
        raise WeightMismatch(f"{q.shape[0] if q.ndim else 1} weights for {pop.n_groups} groups")
    if abs(q.sum() - 1.0) > 1e-9 or np.any(q < 0):
        raise WeightMismatch(f"weights {q.tolist()} are not a distribution")
    return q


def rw_objective(model, pop, loss, q) -> float:
    q = _check_q(q, pop)
    return float(np.dot(q, group_losses(model, loss, pop)))


def rw_gradient(model, pop, loss, q) -> np.ndarray:
    q = _check_q(q, pop)
    return q @ group_gradients(model, loss, pop)


def glv_objective(model, pop, loss, rho) -> float:
    """Group-loss-variance penalty ``L + rho sum_s p_s (L_s - L)^2``; not convex in general."""
    p = pop.fractions
    L = group_losses(model, loss, pop)
    Lbar = float(np.dot(p, L))
    return Lbar + rho * float(np.dot(p, (L - Lbar) ** 2))


def glv_gradient(model, pop, loss, rho) -> np.ndarray:
    p = pop.fractions
    L = group_losses(model, loss, pop)
    Lbar = float(np.dot(p, L))
    # the centring term drops out because sum_s p_s (L_s - Lbar) = 0
    return (p * (1.0 + 2.0 * rho * (L - Lbar))) @ group_gradients(model, loss, pop)


def objective_and_gradient(mech: FairMechanism, model, pop, loss, q=None):
    """Value and gradient of the mechanism's objective at ``model``.

    RW and DRO need the weight vector ``q`` chosen by the dynamics engine.
    """
    k = mech.kind
    if k == "plain":
        return mixture_expected_loss(model, loss, pop), mixture_gradient(model, loss, pop)
    if k == "glp":
        return glp_objective(model, pop, loss, mech.rho), glp_gradient(model, pop, loss, mech.rho)
    if k == "slp":
        return slp_objective(model, pop, loss, mech.rho), slp_gradient(model, pop, loss, mech.rho)
    if k == "glv":
        return glv_objective(model, pop, loss, mech.rho), glv_gradient(model, pop, loss, mech.rho)
    if q is None:
        raise ValueError(f"mechanism {k} needs group weights q")
    return rw_objective(model, pop, loss, q), rw_gradient(model, pop, loss, q)


def objective_value(mech: FairMechanism, model, pop, loss, q=None) -> float:
    k = mech.kind
    if k == "plain":
        return mixture_expected_loss(model, loss, pop)
    if k == "glp":
        return glp_objective(model, pop, loss, mech.rho)
    if k == "slp":
        return slp_objective(model, pop, loss, mech.rho)
    if k == "glv":
        return glv_objective(model, pop, loss, mech.rho)
    if q is None:
        raise ValueError(f"mechanism {k} needs group weights q")
    return rw_objective(model, pop, loss, q)


# ------------------------------------------------------------ chi-square DRO

MAX_DRO_GROUPS = 8


def _chi2_candidate(p, L, r, active):
    """Maximizer of q.L on the chi-square ball with groups outside ``active`` pinned at 0."""
    A = np.asarray(active)
    out = np.setdiff1d(np.arange(len(p)), A)
    m = float(p[out].sum())
    PA = float(p[A].sum())
    budget = r - m - m * m / PA
    if budget < -1e-15:
        return None
    LA = L[A]
    Lbar = float(np.dot(p[A], LA)) / PA
    V = float(np.dot(p[A], (LA - Lbar) ** 2))
    # a single active group (or equal losses) leaves V at rounding level; treat it as 0
    flat = V <= 1e-24 * PA * max(1.0, float(np.max(LA ** 2)))
    a = 0.0 if flat else np.sqrt(max(budget, 0.0) / V)
    q = np.zeros_like(p)
    q[A] = p[A] + p[A] * (a * (LA - Lbar) + m / PA)
    if np.any(q < -1e-15):
        return None
    return np.maximum(q, 0.0)


def chi2_worst_weights(p, group_losses, radius) -> np.ndarray:
    """Group weights in the chi-square ball ``sum_s (q_s - p_s)^2 / p_s <= r`` maximizing ``q.L``.

    Two groups use the closed form ``p +/- sqrt(r p_a p_b)`` when it stays
    inside the simplex.  Otherwise every support pattern of the weights is
    tried (at most 255 for eight groups) and the best feasible one kept,
    which is how the nonnegativity clipping is resolved exactly.
    """
    p = np.asarray(p, dtype=float)
    L = np.asarray(group_losses, dtype=float)
    if radius < 0:
        raise NegativeRadius(f"radius {radius} < 0")
    k = p.shape[0]
    if k > MAX_DRO_GROUPS:
        raise TooManyGroups(f"{k} groups; at most {MAX_DRO_GROUPS} supported")
    if L.shape != p.shape:
        raise WeightMismatch("one loss per group required")
    if radius == 0 or np.all(L == L[0]):
        return p.copy()
    if k == 2:
        delta = np.sqrt(radius * p[0] * p[1])
        if delta <= min(p[0], p[1]):
            s = 1.0 if L[0] > L[1] else -1.0
            return np.array([p[0] + s * delta, p[1] - s * delta])
    best, best_val = p.copy(), float(np.dot(p, L))
    support = np.flatnonzero(p > 0)
    for size in range(len(support), 0, -1):
        for active in itertools.combinations(support, size):
            q = _chi2_candidate(p, L, radius, active)
            if q is not None and float(np.dot(q, L)) > best_val:
                best, best_val = q, float(np.dot(q, L))
    return best


def chi2_divergence(q, p) -> float:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(np.sum((q - p) ** 2 / p))


# ------------------------------------------------------------ certificates

def tilde_beta(kind: str, rho: float, loss_sup: float, beta: float) -> float:
    """Effective smoothness of the fair objective."""
    if min(rho, loss_sup, beta) < 0:
        raise ValueError("rho, loss_sup and beta must be nonnegative")
    if kind in ("glp", "slp"):
        return (2.0 * rho * loss_sup + 1.0) * beta
    if kind == "rw":
        return (rho * loss_sup + 1.0) * beta
    if kind == "plain":
        return float(beta)
    raise NoCertificate(f"no smoothness bound is available for the {kind} mechanism")
