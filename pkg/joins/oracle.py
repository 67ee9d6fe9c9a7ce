"""
Reference answers for tests: a brute-force multiway join and an exhaustive
search over integer share vectors. Nothing here calls the planner or the
share solver.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence, Tuple

from joins.cost_model import CostExpression
from joins.join_model import JoinSpec, TupleStore
from utils.error_handler import OracleLimitError


@dataclass(frozen=True)
class CanonicalResult:
    """Output rows over the attributes sorted by name, rows sorted by value tokens."""

    attributes: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...]

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def from_rows(cls, attributes: Sequence[str], rows: Iterable[Sequence[str]]) -> "CanonicalResult":
        order = sorted(range(len(attributes)), key=lambda i: attributes[i])
        canonical = tuple(sorted(tuple(str(row[i]) for i in order) for row in rows))
        return cls(tuple(attributes[i] for i in order), canonical)

    def distinct(self) -> "CanonicalResult":
        return CanonicalResult(self.attributes, tuple(sorted(set(self.rows))))


@dataclass(frozen=True)
class BruteForceShares:
    shares: Dict[str, int]
    cost: float


def brute_force_join(store: TupleStore, spec: JoinSpec, cap: int = 10_000_000) -> CanonicalResult:
    """Join every relation by successive natural joins, checking the size cap after each step."""
    ordered = spec.connected_order()
    result = store.frame(ordered[0].name).copy()
    bound = list(ordered[0].attributes)
    for relation in ordered[1:]:
        frame = store.frame(relation.name)
        shared = [a for a in relation.attributes if a in bound]
        if shared:
            result = result.merge(frame, on=shared, how="inner")
        else:
            result = result.merge(frame, how="cross")
        bound.extend(a for a in relation.attributes if a not in bound)
        if len(result) > cap:
            raise OracleLimitError(
                f"Intermediate result of {len(result)} rows exceeds the oracle cap of {cap}",
                context={"rows": len(result), "cap": cap, "relation": relation.name},
            )
    attributes = sorted(spec.attribute_universe)
    rows = result[attributes].itertuples(index=False, name=None)
    return CanonicalResult.from_rows(attributes, rows)


def _evaluate(expr: CostExpression, shares: Mapping[str, int]) -> float:
    return sum(term.coefficient * math.prod(shares.get(v, 1) for v in term.variables) for term in expr.terms)


def _factorizations(k: int, slots: int) -> Iterable[Tuple[int, ...]]:
    if slots == 0:
        if k == 1:
            yield ()
        return
    if slots == 1:
        yield (k,)
        return
    for first in range(1, k + 1):
        if k % first == 0:
            for rest in _factorizations(k // first, slots - 1):
                yield (first,) + rest


def brute_force_shares(expr: CostExpression, k: int, max_variables: int = 4,
                       max_k: int = 64) -> BruteForceShares:
    """Cheapest integer share vector whose product is exactly k.

    Vectors are visited in lexicographic order, so among equal costs the first wins.
    """
    variables = sorted(expr.free_variables)
    if len(variables) > max_variables or k > max_k or k < 1:
        raise OracleLimitError(
            f"Exhaustive share search limited to {max_variables} variables and k <= {max_k}",
            context={"variables": len(variables), "k": k},
        )
    if not variables:
        return BruteForceShares({}, _evaluate(expr, {}))

    best = None
    for vector in sorted(_factorizations(int(k), len(variables))):
        shares = dict(zip(variables, vector))
        cost = _evaluate(expr, shares)
        if best is None or cost < best.cost:
            best = BruteForceShares(shares, cost)
    return best
