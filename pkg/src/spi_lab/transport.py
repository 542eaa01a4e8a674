"""Exact discrete optimal transport by the transportation simplex (MODI method)."""
from __future__ import annotations

from collections import deque

import numpy as np

MAX_SUPPORT = 64


def is_discrete_metric(metric: np.ndarray) -> bool:
    metric = np.asarray(metric)
    return bool(np.array_equal(metric, 1.0 - np.eye(metric.shape[0])))


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    a = a.copy()
    b = b.copy()
    basis = {}
    i = j = 0
    while True:
        x = min(a[i], b[j])
        basis[(i, j)] = x
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    return basis


def _potentials(basis, cost, m, n):
    adj = [[] for _ in range(m + n)]
    for (i, j) in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if node < m:
                j = nb - m
                if np.isnan(v[j]):
                    v[j] = cost[node, j] - u[node]
                    queue.append(nb)
            else:
                if np.isnan(u[nb]):
                    u[nb] = cost[nb, node - m] - v[node - m]
                    queue.append(nb)
    return u, v, adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(a, b, cost, max_iter: int = 100_000, bland_after: int = 50):
    """Minimum-cost coupling of supply a and demand b (both summing to 1).

    Returns (optimal cost, plan).  Entering cells follow Dantzig's rule and
    switch to Bland's rule once a run of degenerate pivots gets long, which
    rules out cycling.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = len(a), len(b)
    basis = _northwest_corner(a, b)
    tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    degenerate_run = 0
    for _ in range(max_iter):
        u, v, adj = _potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for (i, j) in basis:
            reduced[i, j] = 0.0
        if reduced.min() >= -tol:
            break
        if degenerate_run >= bland_after:
            flat = np.flatnonzero(reduced.ravel() < -tol)[0]
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(int(flat), n)
        # cycle: entering cell (+), then alternate along the tree path col ej -> row ei
        path = _tree_path(adj, m + ej, ei)
        cells = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cells.append((q, p - m) if p >= m else (p, q - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(basis[c] for c in minus)
        leaving = min(c for c in minus if basis[c] == theta)
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
        for c in minus:
            basis[c] -= theta
        for c in plus:
            basis[c] += theta
        del basis[leaving]
        basis[(ei, ej)] = theta
    else:
        raise RuntimeError("transportation simplex hit the iteration cap")
    plan = np.zeros((m, n))
    for (i, j), x in basis.items():
        plan[i, j] = max(x, 0.0)
    return float((plan * cost).sum()), plan


def wasserstein(mu, nu, metric) -> float:
    """Exact 1-Wasserstein distance between two distributions on a finite metric space."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    metric = np.asarray(metric, dtype=float)
    if mu.shape != nu.shape or metric.shape != (len(mu), len(mu)):
        raise ValueError("distribution and metric shapes disagree")
    if is_discrete_metric(metric):
        return float(0.5 * np.abs(mu - nu).sum())
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    if len(rows) == 1:
        return float(nu[cols] @ metric[rows[0], cols])
    if len(cols) == 1:
        return float(mu[rows] @ metric[rows, cols[0]])
    if len(rows) > MAX_SUPPORT or len(cols) > MAX_SUPPORT:
        raise ValueError(f"supports larger than {MAX_SUPPORT} points are not supported")
    value, _ = transport_simplex(mu[rows], nu[cols] * (mu[rows].sum() / nu[cols].sum()),
                                 metric[np.ix_(rows, cols)])
    return value
