"""Group-structured populations as weighted empirical distributions.

A population is a mixture ``sum_s p_s D_s`` where every group distribution
``D_s`` is a finite weighted point set.  Everything here is immutable once
built; transitions return new objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    DimensionUnsupported,
    EmptyGroup,
    FractionSumInvalid,
    GroupCountMismatch,
)

FRACTION_TOL = 1e-9
EXACT_OT_MAX_POINTS = 64


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float
    group: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.atleast_1d(self.features)))


@dataclass(frozen=True, eq=False)
class GroupDistribution:
    """Weighted point set for one group.

    ``origin`` holds the features the group started from; anchored strategic
    transitions shift relative to it rather than to the current features.
    """

    group: int
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        n = X.shape[0]
        if n == 0:
            raise EmptyGroup(f"group {self.group} has no points")
        if y.shape[0] != n:
            raise DimensionMismatch("labels and features disagree on point count")
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != n:
            raise DimensionMismatch("weights and features disagree on point count")
        if np.any(w <= 0):
            raise ValueError(f"group {self.group}: point weights must be positive")
        w = w / w.sum()
        origin = X if self.origin is None else np.asarray(self.origin, dtype=float).reshape(X.shape)
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "origin", _frozen(origin))
        object.__setattr__(self, "group", int(self.group))

    @classmethod
    def point_mass(cls, group, features, label=0.0):
        return cls(group, np.atleast_2d(np.asarray(features, dtype=float)), [label], [1.0])

    @classmethod
    def uniform(cls, group, features, labels):
        return cls(group, features, labels, None)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def points(self):
        return [
            (Sample(self.features[i], float(self.labels[i]), self.group), float(self.weights[i]))
            for i in range(self.size)
        ]

    def with_features(self, features) -> "GroupDistribution":
        return GroupDistribution(self.group, features, self.labels, self.weights, self.origin)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "weights": self.weights.tolist(),
            "origin": self.origin.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GroupDistribution":
        return cls(d["group"], d["features"], d["labels"], d["weights"], d.get("origin"))


@dataclass(frozen=True, eq=False)
class PopulationState:
    groups: tuple
    fractions: np.ndarray
    dimension: int
    floor: float = 0.0

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def group_ids(self):
        return [g.group for g in self.groups]

    def with_fractions(self, fractions) -> "PopulationState":
        return make_population(self.groups, fractions, floor=self.floor)

    def with_groups(self, groups) -> "PopulationState":
        """Replace the group distributions; the fractions are kept bit for bit."""
        checked = make_population(groups, self.fractions, floor=self.floor)
        return PopulationState(checked.groups, self.fractions, checked.dimension, self.floor)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "floor": self.floor,
            "fractions": self.fractions.tolist(),
            "groups": [g.to_dict() for g in self.groups],
        }

    @classmethod
    def from_dict(cls, d) -> "PopulationState":
        groups = [GroupDistribution.from_dict(g) for g in d["groups"]]
        pop = make_population(groups, d["fractions"], floor=d.get("floor", 0.0))
        if pop.dimension != d["dimension"]:
            raise DimensionMismatch("serialized dimension disagrees with group features")
        return pop


def make_population(groups: Sequence[GroupDistribution], fractions, floor: float = 0.0) -> PopulationState:
    """Validate and assemble a population; fractions are renormalized to sum to 1."""
    groups = tuple(groups)
    p = np.asarray(fractions, dtype=float).reshape(-1)
    if not groups:
        raise EmptyGroup("population needs at least one group")
    if p.shape[0] != len(groups):
        raise GroupCountMismatch(f"{p.shape[0]} fractions for {len(groups)} groups")
    dims = {g.dimension for g in groups}
    if len(dims) != 1:
        raise DimensionMismatch(f"groups disagree on dimension: {sorted(dims)}")
    ids = [g.group for g in groups]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate group identifiers {ids}")
    if abs(p.sum() - 1.0) > FRACTION_TOL:
        raise FractionSumInvalid(f"fractions sum to {p.sum()!r}")
    if np.any(p < floor - FRACTION_TOL) or np.any(p > 1 + FRACTION_TOL):
        raise FractionSumInvalid(f"fractions {p.tolist()} outside [{floor}, 1]")
    p = np.clip(p, 0.0, 1.0)
    p = p / p.sum()
    return PopulationState(groups, _frozen(p), dims.pop(), float(floor))


# ---------------------------------------------------------------- distances

def _flatten(obj):
    """Weighted support (points, weights) of a group, population or raw pair.

    One-dimensional populations use the single feature coordinate; otherwise
    each point is the concatenation (features, label).
    """
    if isinstance(obj, tuple) and len(obj) == 2 and not isinstance(obj[0], GroupDistribution):
        pts = np.asarray(obj[0], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(obj[1], dtype=float).reshape(-1)
        return pts, w / w.sum()
    if isinstance(obj, GroupDistribution):
        parts = [(obj, 1.0)]
    elif isinstance(obj, PopulationState):
        parts = list(zip(obj.groups, obj.fractions))
    else:
        raise TypeError(f"cannot take a distance over {type(obj).__name__}")
    pts, ws = [], []
    for g, frac in parts:
        if frac <= 0:
            continue
        if g.dimension == 1:
            pts.append(g.features)
        else:
            pts.append(np.hstack([g.features, g.labels[:, None]]))
        ws.append(frac * g.weights)
    pts = np.vstack(pts)
    w = np.concatenate(ws)
    keep = w > 0
    return pts[keep], w[keep] / w[keep].sum()


def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two one-dimensional discrete distributions.

    Integrates |F_a - F_b| over the merged sorted support.
    """
    xa, wa = _flatten(a)
    xb, wb = _flatten(b)
    if xa.shape[1] != 1 or xb.shape[1] != 1:
        raise DimensionUnsupported("wasserstein1_1d needs one-dimensional supports; use wasserstein1_matched")
    xa, xb = xa[:, 0], xb[:, 0]
    allx = np.concatenate([xa, xb])
    order = np.argsort(allx, kind="mergesort")
    allx = allx[order]
    mass = np.concatenate([wa, -wb])[order]
    cdf_diff = np.cumsum(mass)[:-1]
    return float(np.sum(np.abs(cdf_diff) * np.diff(allx)))


def transport_lp(xa, wa, xb, wb) -> float:
    """Exact optimal transport cost under the Euclidean metric via a dense LP."""
    xa = np.asarray(xa, dtype=float).reshape(len(wa), -1)
    xb = np.asarray(xb, dtype=float).reshape(len(wb), -1)
    n, m = len(wa), len(wb)
    cost = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=2).reshape(-1)
    rows = np.zeros((n, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    cols = np.zeros((m, n * m))
    for j in range(m):
        cols[j, j::m] = 1.0
    A = np.vstack([rows, cols])[:-1]
    b = np.concatenate([wa, wb])[:-1]
    res = linprog(cost, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _monotone_projection_coupling(xa, wa, xb, wb) -> float:
    """Cost of the monotone coupling along the pooled principal axis (an upper bound on W1)."""
    pooled = np.vstack([xa, xb])
    pw = np.concatenate([wa, wb]) / 2.0
    centred = pooled - pw @ pooled
    cov = (centred * pw[:, None]).T @ centred
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    ia = np.argsort(xa @ axis, kind="mergesort")
    ib = np.argsort(xb @ axis, kind="mergesort")
    ca = np.cumsum(wa[ia])
    cb = np.cumsum(wb[ib])
    ca[-1] = cb[-1] = 1.0
    cuts = np.unique(np.concatenate([[0.0], ca, cb]))
    mass = np.diff(cuts)
    mids = (cuts[:-1] + cuts[1:]) / 2.0
    pa = ia[np.searchsorted(ca, mids)]
    pb = ib[np.searchsorted(cb, mids)]
    return float(np.sum(mass * np.linalg.norm(xa[pa] - xb[pb], axis=1)))


class MatchedDistance(NamedTuple):
    value: float
    exact: bool


def wasserstein1_matched(a, b) -> MatchedDistance:
    """W1 between (possibly multi-dimensional) discrete distributions.

    Exact LP when both supports have at most 64 points; otherwise the cost of
    a monotone coupling along the principal axis, which bounds W1 from above
    and is flagged ``exact=False``.
    """
    xa, wa = _flatten(a)
    xb, wb = _flatten(b)
    if xa.shape[1] != xb.shape[1]:
        raise DimensionMismatch("supports live in different spaces")
    if len(wa) <= EXACT_OT_MAX_POINTS and len(wb) <= EXACT_OT_MAX_POINTS:
        return MatchedDistance(transport_lp(xa, wa, xb, wb), True)
    if xa.shape[1] == 1:
        return MatchedDistance(wasserstein1_1d((xa, wa), (xb, wb)), True)
    return MatchedDistance(_monotone_projection_coupling(xa, wa, xb, wb), False)


def wasserstein1(a, b) -> float:
    """Exact 1-D W1 when possible, otherwise the matched estimate."""
    xa, _ = _flatten(a)
    if xa.shape[1] == 1:
        return wasserstein1_1d(a, b)
    return wasserstein1_matched(a, b).value


# ---------------------------------------------------------------- sampling

def sample_empirical(pop: PopulationState, n: int, seed) -> PopulationState:
    """Draw ``n`` i.i.d. points from the mixture and return their empirical population.

    Groups that receive no draws keep their support with fraction 0 so that
    group indices stay aligned with the source population.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    which = rng.choice(pop.n_groups, size=n, p=pop.fractions)
    counts = np.bincount(which, minlength=pop.n_groups)
    groups = []
    for s, g in enumerate(pop.groups):
        if counts[s] == 0:
            groups.append(g)
            continue
        idx = rng.choice(g.size, size=counts[s], p=g.weights)
        groups.append(GroupDistribution(g.group, g.features[idx], g.labels[idx], None, g.origin[idx]))
    return make_population(groups, counts / n)
