"""Distances between atomic measures and moment statistics.

The distance implemented is the bounded-Lipschitz dual

    sup { sum_k f_k (mu_k - nu_k) : |f_k| <= 1, |f_k - f_l| <= |x_k - x_l| }

over the combined support.  Its primal is a partial optimal-transport
problem: move mass at cost min(distance, 2) or pay 1 per unit destroyed and
1 per unit created.  We solve the primal exactly on an augmented bipartite
problem with an extra "abstain" node at cost 1 from everything:

* when both measures have a common atom-weight unit (empirical measures),
  the transportation polytope has integral vertices and the problem reduces
  to a rectangular assignment, solved exactly by scipy;
* otherwise a sparse LP (HiGHS) on the augmented transportation problem.

Both routes return the same optimum; the dual formulation is kept in the
test suite as an independent oracle.  The same machinery with unequal
masses (abstain soaking up the difference) gives the flux-space metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.spatial.distance import cdist

_WEIGHT_TOL = 1e-12
DISTANCE_CAP = 2.0


@dataclass
class WeightedMeasure:
    """Finite atomic measure: points (n, k) and nonnegative weights (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights must have equal length")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.weights))):
            raise ValueError("points and weights must be finite")

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return len(self.weights)

    def merge_atoms(self) -> "WeightedMeasure":
        """Sum weights of exactly-equal points (no epsilon snapping)."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse.ravel(), self.weights)
        keep = w > 0.0
        return WeightedMeasure(uniq[keep], w[keep])

    def subsample(self, n_atoms: int, seed: int) -> "WeightedMeasure":
        """i.i.d. subsample of the normalised measure, n_atoms uniform atoms."""
        rng = np.random.default_rng(seed)
        p = self.weights / self.total_mass
        idx = rng.choice(len(self.weights), size=n_atoms, p=p)
        return WeightedMeasure(self.points[idx], np.full(n_atoms, self.total_mass / n_atoms))


def moment(mu: WeightedMeasure, p: float, threshold: float | None = None) -> float:
    """sum_k w_k |x_k|^p, optionally restricted to |x_k| <= threshold."""
    r = np.linalg.norm(mu.points, axis=1)
    vals = r**p if p != 0 else np.ones_like(r)
    if threshold is not None:
        vals = vals * (r <= threshold)
    return float(np.dot(mu.weights, vals))


# ---------------------------------------------------------------------------
# the capped-cost partial transport solve


def _assignment_route(cost: np.ndarray, unit: float, n1: int, n2: int) -> float:
    """Exact solve when every atom carries the same weight `unit`.

    Pads each side with the other's count of abstain copies (cost 1 against
    real atoms, 0 against other abstain copies): a square assignment.
    """
    big = np.ones((n1 + n2, n1 + n2))
    big[:n1, :n2] = cost
    big[n1:, n2:] = 0.0
    rows, cols = linear_sum_assignment(big)
    return float(big[rows, cols].sum() * unit)


def _lp_route(cost: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> float:
    """Sparse LP on the augmented transportation problem (general weights)."""
    n1, n2 = cost.shape
    m1, m2 = float(w1.sum()), float(w2.sum())
    # variables: pi (n1 x n2), destroy (n1), create (n2)
    n_var = n1 * n2 + n1 + n2
    c = np.concatenate([cost.ravel(), np.ones(n1 + n2)])
    rows, cols, vals = [], [], []
    for i in range(n1):
        base = i * n2
        rows.extend([i] * n2)
        cols.extend(range(base, base + n2))
        vals.extend([1.0] * n2)
        rows.append(i)
        cols.append(n1 * n2 + i)
        vals.append(1.0)
    for j in range(n2):
        r = n1 + j
        rows.extend([r] * n1)
        cols.extend(range(j, n1 * n2, n2))
        vals.extend([1.0] * n1)
        rows.append(r)
        cols.append(n1 * n2 + n1 + j)
        vals.append(1.0)
    a_eq = coo_matrix((vals, (rows, cols)), shape=(n1 + n2, n_var))
    b_eq = np.concatenate([w1, w2])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _flat_distance(p1: np.ndarray, w1: np.ndarray, p2: np.ndarray, w2: np.ndarray) -> float:
    """Bounded-Lipschitz distance between two atomic measures."""
    if len(p1) == 0 and len(p2) == 0:
        return 0.0
    if len(p1) == 0:
        return float(w2.sum())
    if len(p2) == 0:
        return float(w1.sum())
    cost = np.minimum(cdist(p1, p2), DISTANCE_CAP)
    units = np.concatenate([w1, w2])
    unit = units[0]
    if np.all(np.abs(units - unit) <= _WEIGHT_TOL * max(unit, 1.0)) and unit > 0.0:
        return _assignment_route(cost, unit, len(p1), len(p2))
    return _lp_route(cost, w1, w2)


def bl_distance(mu: WeightedMeasure, nu: WeightedMeasure, support_cap: int = 4000,
                subsample_seed: int = 0) -> float:
    """Bounded-Lipschitz (flat) distance between probability measures.

    Exact LP optimum on the combined support; always <= 2.  Inputs whose
    combined support exceeds `support_cap` are i.i.d.-subsampled (seeded)
    to the cap before solving.
    """
    if abs(mu.total_mass - nu.total_mass) > 1e-9 * max(mu.total_mass, 1.0):
        raise ValueError(
            f"mass mismatch: {mu.total_mass} vs {nu.total_mass}; use flux_distance for unequal masses"
        )
    mu = mu.merge_atoms()
    nu = nu.merge_atoms()
    if len(mu) + len(nu) > support_cap:
        half = support_cap // 2
        if len(mu) > half:
            mu = mu.subsample(half, subsample_seed)
        if len(nu) > half:
            nu = nu.subsample(half, subsample_seed + 1)
    return _flat_distance(mu.points, mu.weights, nu.points, nu.weights)


def flux_distance(w1: WeightedMeasure, w2: WeightedMeasure, support_cap: int = 4000,
                  subsample_seed: int = 0) -> float:
    """Same dual metric on the flux space E in R^{3d+1}; masses may differ.

    The |g| <= 1 cap keeps the value finite: excess mass costs 1 per unit.
    """
    w1 = w1.merge_atoms() if len(w1) else w1
    w2 = w2.merge_atoms() if len(w2) else w2
    if len(w1) + len(w2) > support_cap:
        half = support_cap // 2
        if len(w1) > half:
            w1 = w1.subsample(half, subsample_seed)
        if len(w2) > half:
            w2 = w2.subsample(half, subsample_seed + 1)
    return _flat_distance(w1.points, w1.weights, w2.points, w2.weights)


# ---------------------------------------------------------------------------
# empirical large-deviation slope


def estimate_ldp_rate(counts) -> tuple[float, float]:
    """Weighted least-squares slope of log(hits/trials) against N.

    `counts` is a sequence of (N, hits, trials).  Weights are the inverse
    binomial variance of log p-hat, approximately the hit count.  Returns
    (slope, stderr); the empirical rate is -slope.
    """
    counts = [(float(n), float(h), float(m)) for (n, h, m) in counts]
    if all(h == 0.0 for _, h, _ in counts):
        raise ValueError("all hit counts are zero: no exceedances observed")
    usable = [(n, h, m) for (n, h, m) in counts if h > 0.0]
    if len(usable) < 3:
        raise ValueError(
            f"need at least 3 levels with nonzero hits, got {len(usable)} "
            f"(hit counts: {[(int(n), h) for n, h, _ in counts]})"
        )
    n_arr = np.array([n for n, _, _ in usable])
    y = np.log(np.array([h / m for _, h, m in usable]))
    w = np.array([h for _, h, _ in usable])
    nbar = np.sum(w * n_arr) / np.sum(w)
    ybar = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (n_arr - nbar) ** 2)
    slope = float(np.sum(w * (n_arr - nbar) * (y - ybar)) / sxx)
    stderr = float(1.0 / math.sqrt(sxx))
    return slope, stderr
