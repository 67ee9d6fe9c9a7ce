"""
Share computation: minimize a cost expression subject to a product-of-shares
budget, round the result to whole bucket counts, and size reducer counts
from a per-reducer capacity.

The objective is a posynomial, so in log-shares u = ln x it is convex; the
solver runs a damped Newton method on the equality-constrained problem and
keeps an active set of variables pinned at share 1 (u = 0).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import linalg

from joins.cost_model import CostExpression
from utils.error_handler import InfeasiblePlanError, SolverConvergenceError
from utils.log_setup import setup_logger

ARMIJO = 1e-4
MIN_STEP = 1e-14
LOAD_SLACK = 1e-9


@dataclass
class ShareAssignment:
    real_shares: Dict[str, float]
    k_real: float
    real_cost: float
    integer_shares: Optional[Dict[str, int]] = None
    k_int: Optional[int] = None
    iterations: int = 0

    def integer_share(self, attribute: str) -> int:
        if self.integer_shares is None:
            raise ValueError("shares have not been integerized")
        return int(self.integer_shares.get(attribute, 1))

    def joinkey(self) -> Tuple[str, ...]:
        """Attributes that occupy a key slot: integer share above 1."""
        if self.integer_shares is None:
            return ()
        return tuple(a for a, s in self.integer_shares.items() if s > 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "real_shares": dict(self.real_shares),
            "k_real": self.k_real,
            "real_cost": self.real_cost,
            "integer_shares": dict(self.integer_shares) if self.integer_shares is not None else None,
            "k_int": self.k_int,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ShareAssignment":
        integer = data.get("integer_shares")
        return cls(
            real_shares={str(a): float(s) for a, s in data["real_shares"].items()},
            k_real=float(data["k_real"]),
            real_cost=float(data["real_cost"]),
            integer_shares={str(a): int(s) for a, s in integer.items()} if integer is not None else None,
            k_int=int(data["k_int"]) if data.get("k_int") is not None else None,
            iterations=int(data.get("iterations", 0)),
        )


@dataclass
class ReducerSizing:
    k: int
    shares: ShareAssignment
    expected_load: float
    feasible: bool = True
    reason: Optional[str] = None


class ShareSolver:
    """Log-domain active-set Newton solver for optimal real shares."""

    def __init__(self, tolerance: float = 1e-9, max_iterations: int = 10_000):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.logger = setup_logger("ShareSolver")

    def solve(self, expr: CostExpression, k: float) -> ShareAssignment:
        if k < 1:
            raise InfeasiblePlanError(f"Reducer budget must be at least 1, got {k}", context={"k": k})

        pinned = {a: 1.0 for a in expr.pinned_attributes}
        if not expr.free_variables:
            return ShareAssignment(real_shares=pinned, k_real=1.0, real_cost=expr.coefficient_total)

        log_k = math.log(k)
        if log_k == 0.0:
            log_shares = np.zeros(len(expr.free_variables))
            iterations = 0
        else:
            log_shares, iterations = self._minimize(expr, log_k)

        shares = {a: float(math.exp(u)) for a, u in zip(expr.free_variables, log_shares)}
        shares.update(pinned)
        cost = expr.evaluate(shares)
        self.logger.debug(f"Solved {expr.symbolic()} at k={k}: cost={cost:.6g} in {iterations} iteration(s)")
        return ShareAssignment(real_shares=shares, k_real=float(k), real_cost=cost, iterations=iterations)

    def _minimize(self, expr: CostExpression, log_k: float) -> Tuple[np.ndarray, int]:
        variables = list(expr.free_variables)
        position = {v: i for i, v in enumerate(variables)}
        incidence = np.zeros((len(expr.terms), len(variables)))
        for row, term in enumerate(expr.terms):
            for v in term.variables:
                if v in position:
                    incidence[row, position[v]] = 1.0
        coeffs = np.array([term.coefficient for term in expr.terms], dtype=float)

        def objective(point: np.ndarray) -> float:
            return float(coeffs @ np.exp(incidence @ point))

        u = np.full(len(variables), log_k / len(variables))
        free = np.ones(len(variables), dtype=bool)

        for iteration in range(1, self.max_iterations + 1):
            weights = coeffs * np.exp(incidence @ u)
            grad = incidence.T @ weights
            active = np.flatnonzero(free)
            g_free = grad[active]
            lam = float(g_free.mean())
            residual = float(np.max(np.abs(g_free - lam)) / lam) if lam > 0 else 0.0

            if residual <= self.tolerance:
                releasable = [i for i in np.flatnonzero(~free) if grad[i] < lam * (1 - self.tolerance)]
                if not releasable:
                    return self._rebalance(u, free, log_k), iteration
                free[min(releasable, key=lambda i: grad[i])] = True
                continue

            # Newton step on the free block, KKT system scaled by lam
            n = len(active)
            hessian = (incidence[:, active] * (weights / lam)[:, None]).T @ incidence[:, active]
            kkt = np.zeros((n + 1, n + 1))
            kkt[:n, :n] = hessian
            kkt[:n, n] = 1.0
            kkt[n, :n] = 1.0
            rhs = np.concatenate([-g_free / lam, [0.0]])
            step = linalg.lstsq(kkt, rhs)[0][:n]
            slope = float(g_free @ step)
            if not slope < 0:
                step = -(g_free - lam) / lam
                slope = float(g_free @ step)

            blocked = (u[active] <= 0.0) & (step < 0)
            if blocked.any():
                for i in active[blocked]:
                    u[i] = 0.0
                    free[i] = False
                continue

            shrinking = step < 0
            ratios = np.full(n, np.inf)
            ratios[shrinking] = u[active][shrinking] / -step[shrinking]
            alpha_max = float(ratios.min())
            alpha = min(1.0, alpha_max)

            current = objective(u)
            while alpha >= MIN_STEP:
                trial = u.copy()
                trial[active] += alpha * step
                if objective(trial) <= current + ARMIJO * alpha * slope:
                    break
                alpha *= 0.5
            if alpha < MIN_STEP:
                if residual <= math.sqrt(self.tolerance):
                    self.logger.debug(f"Line search stalled at residual {residual:.3g}; accepting")
                    return self._rebalance(u, free, log_k), iteration
                raise SolverConvergenceError(
                    f"Line search failed for {expr.symbolic()}",
                    context={"residual": residual, "iteration": iteration},
                )

            u[active] += alpha * step
            if alpha == alpha_max:
                for i in active[ratios <= alpha_max * (1 + 1e-12)]:
                    u[i] = 0.0
                    free[i] = False
            np.maximum(u, 0.0, out=u)

        raise SolverConvergenceError(
            f"Share solver did not converge within {self.max_iterations} iterations",
            context={"expression": expr.symbolic(), "log_k": log_k},
        )

    @staticmethod
    def _rebalance(u: np.ndarray, free: np.ndarray, log_k: float) -> np.ndarray:
        """Spread rounding drift over the free variables so the shares multiply to k."""
        result = u.copy()
        result[~free] = 0.0
        active = np.flatnonzero(free)
        drift = log_k - float(result.sum())
        result[active] += drift / len(active)
        return np.maximum(result, 0.0)


def solve_shares(expr: CostExpression, k: float, tolerance: float = 1e-9,
                 max_iterations: int = 10_000) -> ShareAssignment:
    return ShareSolver(tolerance, max_iterations).solve(expr, k)


def integerize(expr: CostExpression, shares: ShareAssignment) -> ShareAssignment:
    """Round real shares to bucket counts whose product stays within the budget.

    Starts from the floors and repeatedly raises the variable with the smallest
    cost increase per unit of product growth; ties go to the smaller name.
    """
    budget = max(1, int(math.floor(shares.k_real + 1e-9)))
    variables = sorted(expr.free_variables)
    integer = {a: 1 for a in expr.pinned_attributes}
    current = {v: max(1, int(math.floor(shares.real_shares.get(v, 1.0) + 1e-9))) for v in variables}

    while math.prod(current.values()) > budget:
        largest = max(variables, key=lambda v: (current[v], v))
        current[largest] -= 1

    product = math.prod(current.values()) if current else 1
    cost = expr.evaluate(current)
    while True:
        best: Optional[Tuple[float, str, float, int]] = None
        for v in variables:
            grown = product // current[v] * (current[v] + 1)
            if grown > budget:
                continue
            trial = dict(current)
            trial[v] += 1
            trial_cost = expr.evaluate(trial)
            rate = (trial_cost - cost) / (grown - product)
            if best is None or rate < best[0]:
                best = (rate, v, trial_cost, grown)
        if best is None:
            break
        _, v, cost, product = best
        current[v] += 1

    ordered = {a: current[a] for a in expr.free_variables}
    ordered.update(integer)
    return ShareAssignment(
        real_shares=dict(shares.real_shares),
        k_real=shares.k_real,
        real_cost=shares.real_cost,
        integer_shares=ordered,
        k_int=int(product),
        iterations=shares.iterations,
    )


def size_reducers(expr: CostExpression, q: float, solver: Optional[ShareSolver] = None,
                  max_reducers: int = 1_000_000) -> ReducerSizing:
    """Smallest k whose optimal expected load cost(k)/k is within capacity q."""
    solver = solver or ShareSolver()
    if q < 1:
        raise InfeasiblePlanError(f"Reducer capacity must be at least 1, got {q}", context={"q": q})

    limit = q * (1 + LOAD_SLACK)
    if not expr.free_variables:
        shares = solver.solve(expr, 1)
        load = shares.real_cost
        if load > limit:
            return ReducerSizing(1, shares, load, feasible=False,
                                 reason=f"no free share variable; one reducer must hold {load:.0f} > q={q} tuples")
        return ReducerSizing(1, shares, load)

    def load_at(k: int) -> Tuple[float, ShareAssignment]:
        solved = solver.solve(expr, k)
        return solved.real_cost / k, solved

    load, shares = load_at(1)
    if load <= limit:
        return ReducerSizing(1, shares, load)

    low, high = 1, 2
    while True:
        if high >= max_reducers:
            high = max_reducers
            load, shares = load_at(high)
            if load > limit:
                return ReducerSizing(high, shares, load, feasible=False,
                                     reason=f"load {load:.1f} still above q={q} at the reducer cap {max_reducers}")
            break
        load, shares = load_at(high)
        if load <= limit:
            break
        low, high = high, high * 2

    while high - low > 1:
        middle = (low + high) // 2
        middle_load, middle_shares = load_at(middle)
        if middle_load <= limit:
            high, load, shares = middle, middle_load, middle_shares
        else:
            low = middle
    return ReducerSizing(high, shares, load)
