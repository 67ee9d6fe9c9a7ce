"""
Communication-cost expressions.

The cost of a one-round Shares job is the sum over relations of the relation's
size times its replication, the product of the shares of every attribute the
relation does not hold. Specializing to a residual join pins heavy-typed and
dominated attributes to share 1.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from joins.join_model import JoinSpec, TypeAssignment, dominated_attributes

PIN_HEAVY = "heavy_hitter"
PIN_DOMINATED = "dominated"


@dataclass(frozen=True)
class CostTerm:
    relation: str
    coefficient: float
    variables: Tuple[str, ...]

    def replication(self, shares: Mapping[str, float]) -> float:
        return math.prod(shares.get(v, 1) for v in self.variables)

    def evaluate(self, shares: Mapping[str, float]) -> float:
        return self.coefficient * self.replication(shares)

    def symbolic(self) -> str:
        parts = [self.relation.lower()] + sorted(v.lower() for v in self.variables)
        return "*".join(parts)


@dataclass(frozen=True)
class CostExpression:
    """Sum of terms subject to: product of the free variables equals k."""

    terms: Tuple[CostTerm, ...]
    free_variables: Tuple[str, ...]
    pinned: Tuple[Tuple[str, str], ...] = field(default_factory=tuple)

    def evaluate(self, shares: Mapping[str, float]) -> float:
        return sum(term.evaluate(shares) for term in self.terms)

    def term(self, relation: str) -> CostTerm:
        for term in self.terms:
            if term.relation == relation:
                return term
        raise KeyError(relation)

    @property
    def pinned_attributes(self) -> Tuple[str, ...]:
        return tuple(a for a, _ in self.pinned)

    @property
    def coefficient_total(self) -> float:
        return sum(term.coefficient for term in self.terms)

    def symbolic(self) -> str:
        """Render as e.g. ``r*c + s + t*b``: lowercase relation, then sorted share variables."""
        return " + ".join(term.symbolic() for term in self.terms)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "terms": [
                {"relation": t.relation, "coefficient": t.coefficient, "variables": list(t.variables)}
                for t in self.terms
            ],
            "free_variables": list(self.free_variables),
            "pinned": [{"attribute": a, "reason": reason} for a, reason in self.pinned],
            "symbolic": self.symbolic(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CostExpression":
        return cls(
            terms=tuple(
                CostTerm(str(t["relation"]), float(t["coefficient"]), tuple(t["variables"])) for t in data["terms"]
            ),
            free_variables=tuple(data["free_variables"]),
            pinned=tuple((p["attribute"], p["reason"]) for p in data.get("pinned", [])),
        )


def build_generic_cost(spec: JoinSpec) -> CostExpression:
    """One term per relation carrying every attribute the relation lacks."""
    universe = spec.attribute_universe
    terms = tuple(
        CostTerm(
            relation=relation.name,
            coefficient=float(relation.declared_size or 0),
            variables=tuple(a for a in universe if a not in relation.attributes),
        )
        for relation in spec.relations
    )
    return CostExpression(terms=terms, free_variables=universe)


def specialize_cost(generic: CostExpression, assignment: TypeAssignment, sizes: Mapping[str, float],
                    spec: JoinSpec) -> CostExpression:
    """Cost expression of one residual join.

    Heavy-typed attributes are pinned first, then dominance is re-run over what is
    left; relevant sizes replace the declared ones.
    """
    heavy = set(assignment.heavy_attributes())
    active = [a for a in generic.free_variables if a not in heavy]
    dominated = dominated_attributes(spec, active)

    pinned: List[Tuple[str, str]] = []
    for attribute in generic.free_variables:
        if attribute in heavy:
            pinned.append((attribute, PIN_HEAVY))
        elif attribute in dominated:
            pinned.append((attribute, PIN_DOMINATED))
    pinned_names = {a for a, _ in pinned}
    free = tuple(a for a in generic.free_variables if a not in pinned_names)

    terms = tuple(
        CostTerm(
            relation=term.relation,
            coefficient=float(sizes.get(term.relation, 0)),
            variables=tuple(v for v in term.variables if v not in pinned_names),
        )
        for term in generic.terms
    )
    return CostExpression(terms=terms, free_variables=free, pinned=tuple(pinned))
