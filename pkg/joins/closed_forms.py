"""
Closed-form communication costs and shares for joins with known structure:
2-way joins with a heavy hitter, chain joins and cyclic symmetric joins.
Each closed form can be cross-checked against the numeric share solver.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy import linalg

from joins.cost_model import build_generic_cost, specialize_cost
from joins.join_model import TypeAssignment, chain_spec, cyclic_symmetric_spec
from joins.share_solver import ShareSolver
from utils.error_handler import SingularSystemError, SpecValidationError, UnsupportedClosedFormError
from utils.log_setup import setup_logger

logger = setup_logger("ClosedForms")


@dataclass
class ClosedFormShares:
    cost: float
    shares: Dict[str, float]
    feasible: bool = True
    method: str = "closed_form"


@dataclass
class ChainAllocation:
    subchain_lengths: List[int]
    k_parts: List[float]
    cost: float
    per_subchain_cost: List[float] = field(default_factory=list)


def two_way_lower_bound(r: float, s: float, k: float) -> float:
    """Least communication for the heavy part of a 2-way join on k reducers."""
    return 2.0 * math.sqrt(k * r * s)


def naive_two_way_cost(r: float, s: float, k: float) -> float:
    """Partition one side over k reducers and broadcast the other to all of them."""
    return r + k * s


def subchain_lengths(n: int, hh_positions: Sequence[int]) -> List[int]:
    """Lengths (in relations) of the pieces a chain of n relations splits into.

    Positions index the inner attributes A1..A(n-1) of the chain.
    """
    positions = sorted(set(int(p) for p in hh_positions))
    if len(positions) != len(hh_positions):
        raise SpecValidationError("Heavy-hitter positions must be distinct", context={"positions": list(hh_positions)})
    if any(not 1 <= p <= n - 1 for p in positions):
        raise SpecValidationError(f"Heavy-hitter positions must lie in 1..{n - 1}", context={"positions": positions})
    bounds = [0] + positions + [n]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def chain_equal_cost(n: int, r: float, hh_positions: Sequence[int], k: float) -> ChainAllocation:
    """Budget split and cost for a chain of n equal-size relations cut at heavy attributes.

    Subchain i costs r*n_i*k_i^((n_i-2)/n_i) with the k_i multiplying to k; the
    optimum equalizes (n_i-2)*k_i^((n_i-2)/n_i). Two-relation pieces keep k_i = 1.
    """
    lengths = subchain_lengths(n, hh_positions)
    odd = [length for length in lengths if length % 2]
    if odd:
        raise UnsupportedClosedFormError(
            f"Chain closed form needs even subchains, got lengths {lengths}",
            context={"lengths": lengths},
        )

    exponents = [(length - 2) / length for length in lengths]
    spending = [i for i, e in enumerate(exponents) if e > 0]
    k_parts = [1.0] * len(lengths)
    if spending:
        inverse_sum = sum(1.0 / exponents[i] for i in spending)
        log_c = (math.log(k) + sum(math.log(lengths[i] - 2) / exponents[i] for i in spending)) / inverse_sum
        for i in spending:
            k_parts[i] = math.exp((log_c - math.log(lengths[i] - 2)) / exponents[i])

    per_subchain = [r * length * k_part ** e for length, k_part, e in zip(lengths, k_parts, exponents)]
    return ChainAllocation(lengths, k_parts, float(sum(per_subchain)), per_subchain)


def _chain_closed_form(sizes: Sequence[float], k: float) -> ClosedFormShares:
    n = len(sizes)
    if n < 2:
        raise SpecValidationError("A chain needs at least two relations")
    if n % 2:
        raise UnsupportedClosedFormError(f"Chain closed form needs an even relation count, got {n}",
                                         context={"n": n})

    exponent = (n - 2) / n
    odd_product = math.prod(sizes[0::2])
    even_product = math.prod(sizes[1::2])
    lam_odd = k ** exponent * odd_product ** (2.0 / n)
    lam_even = k ** exponent * even_product ** (2.0 / n)
    cost = n / 2 * (lam_odd + lam_even)

    # term i equals r_i*k/(a_{i-1}*a_i); odd terms equal lam_odd, even terms lam_even
    shares: Dict[str, float] = {}
    previous = 1.0
    for i in range(1, n):
        lam = lam_odd if i % 2 else lam_even
        share = sizes[i - 1] * k / (previous * lam)
        shares[f"A{i}"] = share
        previous = share
    feasible = all(s >= 1 - 1e-9 for s in shares.values())
    return ClosedFormShares(cost=cost, shares=shares, feasible=feasible)


def _numeric_chain(sizes: Sequence[float], k: float, solver: ShareSolver = None) -> ClosedFormShares:
    spec = chain_spec([int(s) for s in sizes])
    expr = specialize_cost(build_generic_cost(spec), TypeAssignment(), dict(zip(spec.relation_names, sizes)), spec)
    solved = (solver or ShareSolver()).solve(expr, k)
    return ClosedFormShares(cost=solved.real_cost, shares=dict(solved.real_shares), method="numeric")


def chain_arbitrary_cost(sizes: Sequence[float], k: float) -> ClosedFormShares:
    """Optimal chain cost n/2 * k^((n-2)/n) * ((r1 r3 ...)^(2/n) + (r2 r4 ...)^(2/n)) and its shares."""
    try:
        return _chain_closed_form(sizes, k)
    except UnsupportedClosedFormError as e:
        logger.warning(f"{e.message}; falling back to the numeric solver")
        return _numeric_chain(sizes, k)


def chain_cost(sizes: Sequence[float], k: float) -> float:
    return chain_arbitrary_cost(sizes, k).cost


def symmetric_orbits(n: int, d: int) -> List[List[int]]:
    """Relation indices (0-based) grouped by the orbits of i -> i + d mod n."""
    g = math.gcd(n, d)
    return [list(range(start, n, g)) for start in range(g)]


def _check_symmetric(n: int, d: int, sizes: Sequence[float]) -> None:
    if not 1 <= d < n:
        raise SpecValidationError(f"Symmetric join needs 1 <= d < n, got n={n}, d={d}", context={"n": n, "d": d})
    if len(sizes) != n:
        raise SpecValidationError(f"Expected {n} sizes, got {len(sizes)}")


def _orbit_taus(n: int, d: int, sizes: Sequence[float], k: float) -> List[float]:
    """Common value of every cost term inside each orbit."""
    n_d = n // math.gcd(n, d)
    taus = [0.0] * n
    for orbit in symmetric_orbits(n, d):
        tau = k ** (1 - d / n) * math.prod(sizes[i] for i in orbit) ** (1.0 / n_d)
        for i in orbit:
            taus[i] = tau
    return taus


def symmetric_cost(n: int, d: int, sizes: Sequence[float], k: float) -> float:
    """n_d * k^(1-d/n) * sum over orbits S of (prod_{i in S} r_i)^(1/n_d)."""
    _check_symmetric(n, d, sizes)
    n_d = n // math.gcd(n, d)
    return n_d * k ** (1 - d / n) * sum(
        math.prod(sizes[i] for i in orbit) ** (1.0 / n_d) for orbit in symmetric_orbits(n, d)
    )


def symmetric_shares(n: int, d: int, sizes: Sequence[float], k: float,
                     solver: ShareSolver = None) -> ClosedFormShares:
    """Shares of the cyclic symmetric join from the log-linear system of the orbit equalities.

    Rank-deficient systems (gcd(n, d) > 1) take the minimum-norm solution; an
    inconsistent system falls back to the numeric solver.
    """
    _check_symmetric(n, d, sizes)
    spec = cyclic_symmetric_spec(n, d, [int(s) for s in sizes])
    attributes = [f"X{j + 1}" for j in range(n)]
    taus = _orbit_taus(n, d, sizes, k)

    # rows: sum of log-shares of each relation's attributes, then the product constraint
    matrix = np.zeros((n + 1, n))
    rhs = np.zeros(n + 1)
    for i in range(n):
        for offset in range(d):
            matrix[i, (i + offset) % n] = 1.0
        rhs[i] = math.log(sizes[i] * k / taus[i])
    matrix[n, :] = 1.0
    rhs[n] = math.log(k)

    expected = symmetric_cost(n, d, sizes, k)
    try:
        solution, _, rank, _ = linalg.lstsq(matrix, rhs)
        if np.max(np.abs(matrix @ solution - rhs)) > 1e-8 * max(1.0, float(np.max(np.abs(rhs)))):
            raise SingularSystemError(
                "Share system for the symmetric join is inconsistent",
                context={"n": n, "d": d},
            )
        if rank < n:
            logger.debug(f"Symmetric share system has rank {rank} < {n}; using the minimum-norm solution")
        shares = {a: float(math.exp(y)) for a, y in zip(attributes, solution)}
        generic = build_generic_cost(spec)
        expr = specialize_cost(generic, TypeAssignment(), dict(zip(spec.relation_names, sizes)), spec)
        achieved = expr.evaluate(shares)
        if abs(achieved - expected) > 1e-6 * expected:
            raise SingularSystemError(
                f"Recovered shares give cost {achieved:.6g}, closed form {expected:.6g}",
                context={"n": n, "d": d},
            )
    except (SingularSystemError, linalg.LinAlgError) as e:
        logger.warning(f"Symmetric closed form unavailable ({e}); falling back to the numeric solver")
        generic = build_generic_cost(spec)
        expr = specialize_cost(generic, TypeAssignment(), dict(zip(spec.relation_names, sizes)), spec)
        solved = (solver or ShareSolver()).solve(expr, k)
        return ClosedFormShares(cost=solved.real_cost, shares=dict(solved.real_shares), method="numeric")

    feasible = all(s >= 1 - 1e-9 for s in shares.values())
    return ClosedFormShares(cost=expected, shares=shares, feasible=feasible)
