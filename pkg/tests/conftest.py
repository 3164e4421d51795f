import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist


def dual_lp_oracle(mu, nu) -> float:
    """Independent route to the bounded-Lipschitz distance: solve the dual
    potential LP sup f.(mu - nu) over |f| <= 1, |f_k - f_l| <= |x_k - x_l|
    directly on the combined support."""
    pts = np.vstack([mu.points, nu.points])
    sign = np.concatenate([mu.weights, -nu.weights])
    n = len(pts)
    d = cdist(pts, pts)
    rows, rhs = [], []
    for k in range(n):
        for l in range(k + 1, n):
            r = np.zeros(n)
            r[k], r[l] = 1.0, -1.0
            rows.append(r.copy())
            rhs.append(d[k, l])
            rows.append(-r)
            rhs.append(d[k, l])
    res = linprog(-sign, A_ub=np.array(rows) if rows else None,
                  b_ub=np.array(rhs) if rows else None,
                  bounds=[(-1.0, 1.0)] * n, method="highs")
    assert res.success
    return -res.fun


def vertex_enumeration_oracle(mu, nu) -> float:
    """True brute force for tiny supports: enumerate all vertices of the
    feasible polytope {|f| <= 1, Lipschitz} by choosing n tight constraints."""
    import itertools

    pts = np.vstack([mu.points, nu.points])
    sign = np.concatenate([mu.weights, -nu.weights])
    n = len(pts)
    d = cdist(pts, pts)
    constraints = []  # (normal, offset) rows of A f <= b
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        constraints.append((e.copy(), 1.0))
        constraints.append((-e, 1.0))
    for k in range(n):
        for l in range(k + 1, n):
            r = np.zeros(n)
            r[k], r[l] = 1.0, -1.0
            constraints.append((r.copy(), d[k, l]))
            constraints.append((-r, d[k, l]))
    best = 0.0
    a_mat = np.array([c[0] for c in constraints])
    b_vec = np.array([c[1] for c in constraints])
    for combo in itertools.combinations(range(len(constraints)), n):
        a = a_mat[list(combo)]
        b = b_vec[list(combo)]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        f = np.linalg.solve(a, b)
        if np.all(a_mat @ f <= b_vec + 1e-9):
            best = max(best, float(sign @ f))
    return best


def weighted_ks_statistic(x, y, wy):
    """Two-sample KS distance between the empirical law of x and the
    weighted empirical law of (y, wy); returns (D, effective sample size)."""
    x = np.sort(np.asarray(x, dtype=float))
    order = np.argsort(y)
    y = np.asarray(y, dtype=float)[order]
    wy = np.asarray(wy, dtype=float)[order]
    wy = wy / wy.sum()
    grid = np.unique(np.concatenate([x, y]))
    fx = np.searchsorted(x, grid, side="right") / len(x)
    fy = np.cumsum(wy)[np.minimum(np.searchsorted(y, grid, side="right") - 1, len(y) - 1)]
    fy = np.where(np.searchsorted(y, grid, side="right") == 0, 0.0, fy)
    n_eff = 1.0 / np.sum((wy) ** 2)
    return float(np.max(np.abs(fx - fy))), n_eff


def ks_threshold(n1, n2, alpha=0.01):
    c = np.sqrt(-np.log(alpha / 2.0) / 2.0)
    return c * np.sqrt((n1 + n2) / (n1 * n2))
