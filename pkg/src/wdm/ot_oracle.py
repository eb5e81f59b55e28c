"""Exact information and transport quantities on small finite distributions.

Everything here is solved exactly (closed form or a linear program) and is
meant to serve as ground truth for the sample-based estimators elsewhere in
the package. All information quantities are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

MASS_TOL = 1e-12
MARGINAL_TOL = 1e-9

METRIC_KINDS = ("euclidean_l1_product", "euclidean_l2_product", "hamming", "explicit_matrix")


class OracleError(RuntimeError):
    """Raised when an LP that must be feasible fails to solve."""


def _as_points(support: Sequence) -> list[np.ndarray]:
    return [np.atleast_1d(np.asarray(s, dtype=float)) for s in support]


@dataclass
class DiscreteJoint:
    """Finite joint distribution p(x, y) on ``support_x`` x ``support_y``."""

    support_x: list
    support_y: list
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        nx, ny = len(self.support_x), len(self.support_y)
        if self.mass.shape != (nx, ny):
            raise ValueError(f"mass has shape {self.mass.shape}, expected {(nx, ny)}")
        if np.any(self.mass < 0) or not np.all(np.isfinite(self.mass)):
            raise ValueError("mass entries must be finite and nonnegative")
        total = self.mass.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"mass sums to {total!r}, not 1")
        for name, sup in (("support_x", self.support_x), ("support_y", self.support_y)):
            pts = [tuple(p) for p in _as_points(sup)]
            if len(set(pts)) != len(pts):
                raise ValueError(f"{name} contains repeated points")

    @classmethod
    def from_dict(cls, table: dict) -> "DiscreteJoint":
        """Build from ``{(x, y): mass}``; supports are the sorted distinct keys."""
        xs = sorted({k[0] for k in table})
        ys = sorted({k[1] for k in table})
        mass = np.zeros((len(xs), len(ys)))
        for (a, b), m in table.items():
            mass[xs.index(a), ys.index(b)] += m
        return cls(xs, ys, mass)

    @property
    def marginal_x(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def marginal_y(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def product_of_marginals(self) -> np.ndarray:
        return np.outer(self.marginal_x, self.marginal_y)

    def product_support(self) -> list[tuple]:
        """Row-major list of (x, y) pairs matching ``mass.ravel()``."""
        return [(a, b) for a in self.support_x for b in self.support_y]


@dataclass
class GroundMetric:
    """Ground cost for transport problems.

    The product kinds act on supports of ``(x, y)`` pairs and combine per-axis
    Euclidean distances by sum (``euclidean_l1_product``) or root-sum-square
    (``euclidean_l2_product``). Plain points (not pairs) are treated as a
    single axis, so both reduce to the Euclidean distance there. ``hamming``
    counts differing coordinates.
    """

    kind: str = "euclidean_l1_product"
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "explicit_matrix":
            if self.matrix is None:
                raise ValueError("explicit_matrix metric needs a matrix")
            self.matrix = np.asarray(self.matrix, dtype=float)
            validate_metric_matrix(self.matrix)

    def cost_matrix(self, support: Sequence | None = None) -> np.ndarray:
        """Pairwise costs over ``support`` (ignored for explicit matrices)."""
        if self.kind == "explicit_matrix":
            return self.matrix
        if support is None:
            raise ValueError(f"{self.kind} metric needs support points")
        axes = _split_axes(support)
        n = len(support)
        if self.kind == "hamming":
            cost = np.zeros((n, n))
            for pts in axes:
                cost += (pts[:, None, :] != pts[None, :, :]).sum(axis=-1)
            return cost
        per_axis = [np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1) for pts in axes]
        if self.kind == "euclidean_l1_product":
            return np.sum(per_axis, axis=0)
        return np.sqrt(np.sum(np.square(per_axis), axis=0))


def _split_axes(support: Sequence) -> list[np.ndarray]:
    """Stack support points into one (n, dim) array per product axis."""
    first = support[0]
    if isinstance(first, tuple) and len(first) == 2:
        xs = np.stack(_as_points([p[0] for p in support]))
        ys = np.stack(_as_points([p[1] for p in support]))
        return [xs, ys]
    return [np.stack(_as_points(support))]


def validate_metric_matrix(cost: np.ndarray, atol: float = 1e-12) -> None:
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("metric matrix must be square")
    if np.any(cost < 0):
        raise ValueError("metric matrix has negative costs")
    if np.any(np.abs(np.diag(cost)) > atol):
        raise ValueError("metric matrix must have zero diagonal")
    if not np.allclose(cost, cost.T, atol=atol, rtol=0):
        raise ValueError("metric matrix must be symmetric")
    # d(a, b) <= d(a, c) + d(c, b) for every c
    via = (cost[:, :, None] + cost[None, :, :]).min(axis=1)
    if np.any(cost > via + atol):
        raise ValueError("metric matrix violates the triangle inequality")


def mi_discrete(joint: DiscreteJoint) -> float:
    """Mutual information KL(p(x,y) || p(x)p(y)) in nats."""
    m = joint.mass
    prod = joint.product_of_marginals()
    nz = m > 0
    return float(max(np.sum(m[nz] * np.log(m[nz] / prod[nz])), 0.0))


def _check_distributions(p, q, cost):
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if cost.shape != (p.size, q.size):
        raise ValueError(f"cost matrix shape {cost.shape} does not match ({p.size}, {q.size})")
    if np.any(cost < 0):
        raise ValueError("negative transport costs")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > MARGINAL_TOL:
            raise ValueError(f"{name} is not a normalized distribution")
    return p, q


def transport_plan(p, q, cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Solve the transportation LP; returns (optimal cost, coupling)."""
    cost = np.asarray(cost, dtype=float)
    p, q = _check_distributions(p, q, cost)
    n, m = cost.shape
    rows = np.concatenate([np.repeat(np.arange(n), m), n + np.tile(np.arange(m), n)])
    cols = np.concatenate([np.arange(n * m), np.arange(n * m)])
    a_eq = coo_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)).tocsc()
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([p, q]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise OracleError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    return float(np.sum(plan * cost)), plan


def _resolve_cost(metric: GroundMetric, support, n: int) -> np.ndarray:
    cost = metric.cost_matrix(support)
    if cost.shape != (n, n):
        raise ValueError(f"metric matrix shape {cost.shape} does not match support size {n}")
    return cost


def wasserstein_discrete(p, q, metric: GroundMetric, support: Sequence | None = None) -> float:
    """Exact 1-Wasserstein distance between ``p`` and ``q`` on a shared support."""
    p = np.asarray(p, dtype=float).ravel()
    cost = _resolve_cost(metric, support, p.size)
    value, _ = transport_plan(p, q, cost)
    return max(value, 0.0)


def kr_dual_discrete(p, q, metric: GroundMetric, support: Sequence | None = None) -> tuple[float, np.ndarray]:
    """Kantorovich-Rubinstein dual: max f.(p - q) over 1-Lipschitz potentials f.

    The potential of the first support point is pinned to 0 (the objective is
    shift invariant).
    """
    p = np.asarray(p, dtype=float).ravel()
    cost = _resolve_cost(metric, support, p.size)
    p, q = _check_distributions(p, q, cost)
    n = p.size
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    k = ii.size
    # f_i - f_j <= d(i, j) for every ordered pair i != j
    a_ub = coo_matrix(
        (np.concatenate([np.ones(k), -np.ones(k)]),
         (np.concatenate([np.arange(k), np.arange(k)]), np.concatenate([ii, jj]))),
        shape=(k, n),
    ).tocsc()
    bounds = [(0.0, 0.0)] + [(None, None)] * (n - 1)
    res = linprog(
        -(p - q),
        A_ub=a_ub if k else None,
        b_ub=cost[ii, jj] if k else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise OracleError(f"dual LP failed: {res.message}")
    return float(-res.fun), res.x


def wdm_discrete(joint: DiscreteJoint, metric: GroundMetric | None = None) -> float:
    """Wasserstein dependency measure W(p(x,y), p(x)p(y))."""
    metric = metric or GroundMetric()
    support = joint.product_support()
    return wasserstein_discrete(joint.mass.ravel(), joint.product_of_marginals().ravel(), metric, support)
