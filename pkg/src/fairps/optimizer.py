"""Inner solvers for the per-round argmin.

``minimize_smooth_convex`` is projected gradient descent with a
Barzilai-Borwein trial step and Armijo halving.  ``best_threshold_1d`` solves
the 0-1 threshold problem exactly by scanning cut points, and
``grid_search_oracle`` is a brute-force reference used by the tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DidNotConverge, NotBinaryLabels, NotOneDimensional
from .population import PopulationState

DEFAULT_BOX = (-10.0, 10.0)
_EPS = np.finfo(float).eps
# objective differences below this many ulps of |f| are treated as evaluation noise
PLATEAU_BAND = 64


@dataclass(frozen=True)
class Objective:
    """A function over a box ``[lo, hi]^d``.

    ``value_and_grad`` may be given instead of separate callables to avoid
    evaluating shared pieces twice.
    """

    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dimension: int = 1
    lo: np.ndarray | float = DEFAULT_BOX[0]
    hi: np.ndarray | float = DEFAULT_BOX[1]
    value_and_grad: Optional[Callable] = None

    def __post_init__(self):
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (self.dimension,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (self.dimension,)).copy()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo <= hi)):
            raise ValueError("parameter box must be finite with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def differentiable(self) -> bool:
        return self.gradient is not None or self.value_and_grad is not None

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, self.lo, self.hi)

    def fg(self, theta):
        if self.value_and_grad is not None:
            f, g = self.value_and_grad(theta)
            return float(f), np.asarray(g, dtype=float)
        return float(self.value(theta)), np.asarray(self.gradient(theta), dtype=float)


class MinimizeResult(NamedTuple):
    theta: np.ndarray
    iterations: int
    grad_norm: float


def _grad_map_norm(obj, x, g):
    return float(np.linalg.norm(x - obj.project(x - g)))


def minimize_smooth_convex(obj: Objective, theta0, tol: float = 1e-10, max_iters: int = 10000,
                           trace: list | None = None) -> MinimizeResult:
    """Projected gradient descent until the projected-gradient norm is at most ``tol``.

    Each accepted step satisfies the Armijo condition, so the objective never
    rises; once value differences sink to rounding level (``PLATEAU_BAND``
    ulps of ``|f|``) a step is also accepted when it shrinks the projected
    gradient, so the sequence is monotone up to that noise band.  ``trace`` collects the
    accepted objective values when a list is supplied.
    """
    if not obj.differentiable:
        raise TypeError("minimize_smooth_convex needs a gradient")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = obj.project(np.asarray(theta0, dtype=float).reshape(obj.dimension))
    f, g = obj.fg(x)
    if trace is not None:
        trace.append(f)
    alpha = 1.0
    gm = _grad_map_norm(obj, x, g)
    for it in range(max_iters + 1):
        if gm <= tol:
            return MinimizeResult(x, it, gm)
        if it == max_iters:
            break
        a = alpha
        while True:
            xn = obj.project(x - a * g)
            d = xn - x
            fn, gn = obj.fg(xn)
            if fn <= f + 1e-4 * float(g @ d):
                break
            gmn = _grad_map_norm(obj, xn, gn)
            if fn - f <= PLATEAU_BAND * _EPS * max(abs(f), 1.0) and gmn < gm:
                break
            a *= 0.5
            if a < 1e-30:
                raise DidNotConverge(f"line search stalled with gradient norm {gm:.3e}", theta=x, grad_norm=gm)
        y = gn - g
        sy = float(d @ y)
        alpha = float(d @ d) / sy if sy > 0 else 2.0 * a
        alpha = min(max(alpha, 1e-12), 1e12)
        x, f, g = xn, fn, gn
        gm = _grad_map_norm(obj, x, g)
        if trace is not None:
            trace.append(f)
    raise DidNotConverge(f"no convergence in {max_iters} iterations (gradient norm {gm:.3e})",
                         theta=x, grad_norm=gm)


def best_threshold_1d(pop: PopulationState, weights=None) -> float:
    """Threshold maximizing weighted accuracy of ``1{x >= theta}``.

    Candidates are the midpoints between consecutive distinct support values
    plus one point below and one above the support.  Ties go to the smallest
    threshold.  ``weights`` replaces the group fractions when given.
    """
    if pop.dimension != 1:
        raise NotOneDimensional(f"threshold search needs d = 1, got {pop.dimension}")
    frac = pop.fractions if weights is None else np.asarray(weights, dtype=float)
    xs, ys, ws = [], [], []
    for g, p in zip(pop.groups, frac):
        if not np.all((g.labels == 0) | (g.labels == 1)):
            raise NotBinaryLabels(f"group {g.group} has labels outside {{0, 1}}")
        xs.append(g.features[:, 0])
        ys.append(g.labels)
        ws.append(p * g.weights)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    order = np.argsort(x, kind="mergesort")
    x, y, w = x[order], y[order], w[order]
    # acc(k): points before cut k are predicted 0, the rest 1
    neg_before = np.concatenate([[0.0], np.cumsum(w * (1 - y))])
    pos_after = np.concatenate([np.cumsum((w * y)[::-1])[::-1], [0.0]])
    acc = neg_before + pos_after
    cuts = np.concatenate([[0], np.flatnonzero(np.diff(x) > 0) + 1, [len(x)]])
    scores = acc[cuts]
    best = int(np.flatnonzero(scores >= scores.max() - 1e-12)[0])
    k = cuts[best]
    if k == 0:
        return float(x[0] - 1.0)
    if k == len(x):
        return float(x[-1] + 1.0)
    return float(0.5 * (x[k - 1] + x[k]))


def grid_search_oracle(obj: Objective, lo: float, hi: float, step: float) -> float:
    """Exhaustive 1-D minimizer over ``lo, lo + step, ..., <= hi``; ties go to the first point."""
    if obj.dimension != 1:
        raise ValueError("grid search is one-dimensional")
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n)
    vals = np.array([obj.value(np.array([t])) for t in grid])
    return float(grid[int(np.argmin(vals))])
