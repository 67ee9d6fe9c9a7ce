"""
Join planner: splits a join into residual joins (one per combination of
heavy-hitter types), solves shares for each, prunes subsumed combinations and
assembles the plan consumed by the mapper and the shuffle simulator.
"""

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from joins.cost_model import CostExpression, build_generic_cost, specialize_cost
from joins.hh_stats import (
    HeavyHitterCatalog,
    HeavyHitterThreshold,
    RelationTypeHistogram,
    count_group_sizes,
    detect_heavy_hitters,
    type_histograms,
)
from joins.join_model import JoinSpec, TupleStore, TypeAssignment, validate_spec
from joins.share_solver import ShareAssignment, ShareSolver, integerize, size_reducers
from utils.config_manager import ConfigManager, get_config
from utils.error_handler import CombinationLimitError, ConfigurationError, DataFormatError
from utils.log_setup import setup_logger

ALGORITHM_SHARES = "shares"
ALGORITHM_SHARESSKEW = "sharesskew"
MODE_K = "k"
MODE_Q = "q"


@dataclass
class ResidualPlan:
    residual_id: int
    assignment: TypeAssignment
    relevant_sizes: Dict[str, int]
    cost_expr: CostExpression
    shares: ShareAssignment
    k: int
    predicted_cost: float
    feasible: bool = True
    note: Optional[str] = None
    absorbed: List[TypeAssignment] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.assignment.label()

    @property
    def k_int(self) -> int:
        return int(self.shares.k_int or 1)

    @property
    def joinkey(self) -> Tuple[str, ...]:
        return self.shares.joinkey()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "residual_id": self.residual_id,
            "label": self.label,
            "assignment": self.assignment.to_dict(),
            "relevant_sizes": dict(self.relevant_sizes),
            "cost_expression": self.cost_expr.to_dict(),
            "shares": self.shares.to_dict(),
            "k": self.k,
            "k_int": self.k_int,
            "predicted_cost": self.predicted_cost,
            "feasible": self.feasible,
            "note": self.note,
            "absorbed": [a.to_dict() for a in self.absorbed],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], order: Sequence[str]) -> "ResidualPlan":
        return cls(
            residual_id=int(data["residual_id"]),
            assignment=_ordered_assignment(data["assignment"], order),
            relevant_sizes={str(r): int(c) for r, c in data["relevant_sizes"].items()},
            cost_expr=CostExpression.from_dict(data["cost_expression"]),
            shares=ShareAssignment.from_dict(data["shares"]),
            k=int(data["k"]),
            predicted_cost=float(data["predicted_cost"]),
            feasible=bool(data.get("feasible", True)),
            note=data.get("note"),
            absorbed=[_ordered_assignment(a, order) for a in data.get("absorbed", [])],
        )


def _ordered_assignment(mapping: Mapping[str, Optional[str]], order: Sequence[str]) -> TypeAssignment:
    return TypeAssignment.of(
        {str(a): None if v is None else str(v) for a, v in mapping.items()},
        order=[a for a in order if a in mapping],
    )


@dataclass
class PruneResult:
    survivors: List[ResidualPlan]
    routing: Dict[TypeAssignment, TypeAssignment]

    def absorbed_by(self, assignment: TypeAssignment) -> List[TypeAssignment]:
        return [pruned for pruned, target in self.routing.items() if target == assignment]


@dataclass
class JoinPlan:
    spec: JoinSpec
    catalog: HeavyHitterCatalog
    residuals: List[ResidualPlan]
    routing: Dict[TypeAssignment, int]
    mode: str = MODE_K
    budget: float = 1
    algorithm: str = ALGORITHM_SHARESSKEW

    @property
    def total_reducers(self) -> int:
        return sum(p.k_int for p in self.residuals)

    @property
    def predicted_cost(self) -> float:
        return sum(p.predicted_cost for p in self.residuals)

    @property
    def infeasible_residuals(self) -> List[ResidualPlan]:
        return [p for p in self.residuals if not p.feasible]

    def residual(self, residual_id: int) -> ResidualPlan:
        return self.residuals[residual_id]

    def summary_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "residual_id": p.residual_id,
                "label": p.label,
                "cost_expression": p.cost_expr.symbolic(),
                "shares": dict(p.shares.integer_shares or {}),
                "k": p.k,
                "k_int": p.k_int,
                "predicted_cost": p.predicted_cost,
                "feasible": p.feasible,
            }
            for p in self.residuals
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "mode": self.mode,
            "budget": self.budget,
            "total_reducers": self.total_reducers,
            "predicted_cost": self.predicted_cost,
            "spec": self.spec.to_dict(),
            "catalog": self.catalog.to_dict(),
            "residuals": [p.to_dict() for p in self.residuals],
            "routing": [
                {"assignment": assignment.to_dict(), "residual_id": rid} for assignment, rid in self.routing.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JoinPlan":
        try:
            spec = validate_spec(JoinSpec.from_dict(data["spec"]))
            order = spec.attribute_universe
            residuals = [ResidualPlan.from_dict(item, order) for item in data["residuals"]]
            routing = {
                _ordered_assignment(item["assignment"], order): int(item["residual_id"]) for item in data["routing"]
            }
            return cls(
                spec=spec,
                catalog=HeavyHitterCatalog.from_dict(data["catalog"]),
                residuals=residuals,
                routing=routing,
                mode=str(data.get("mode", MODE_K)),
                budget=float(data.get("budget", 1)),
                algorithm=str(data.get("algorithm", ALGORITHM_SHARESSKEW)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"Malformed plan file: {e}") from e

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, path: Path) -> "JoinPlan":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"Cannot read plan {path}: {e}", context={"path": str(path)}) from e
        return cls.from_dict(data)


def enumerate_residual_joins(spec: JoinSpec, catalog: HeavyHitterCatalog, cap: int = 10_000) -> List[TypeAssignment]:
    """Cartesian product of per-attribute type sets; the all-ordinary combination comes first."""
    attributes = [a for a in spec.attribute_universe if catalog.values(a)]
    type_sets: List[List[Optional[str]]] = [[None] + list(catalog.values(a)) for a in attributes]
    count = math.prod(len(types) for types in type_sets)
    if count > cap:
        raise CombinationLimitError(
            f"{count} combinations of types exceed the cap of {cap}; raise the heavy-hitter threshold (q or tau)",
            context={"combinations": count, "cap": cap},
        )
    return [TypeAssignment(tuple(zip(attributes, combo))) for combo in itertools.product(*type_sets)]


def subsumes(subsuming: ResidualPlan, candidate: TypeAssignment, catalog: HeavyHitterCatalog,
             spec: JoinSpec) -> bool:
    """True when the candidate's tuples can be hashed through the subsuming plan's grid.

    The two may differ only where the subsuming plan is ordinary, and for every
    relation R holding such an attribute B the share b of B in the subsuming plan
    must satisfy b < r / b_h.
    """
    differing: List[Tuple[str, str]] = []
    for attribute in spec.attribute_universe:
        mine = subsuming.assignment.type_of(attribute)
        theirs = candidate.type_of(attribute)
        if mine == theirs:
            continue
        if mine is not None or theirs is None:
            return False
        differing.append((attribute, theirs))
    if not differing:
        return False

    for attribute, value in differing:
        share = subsuming.shares.real_shares.get(attribute, 1.0)
        for relation in spec.relations_containing(attribute):
            frequency = catalog.frequency(attribute, value, relation)
            if frequency == 0:
                continue
            if not share < subsuming.relevant_sizes.get(relation, 0) / frequency:
                return False
    return True


def prune_subsumed(plans: Sequence[ResidualPlan], catalog: HeavyHitterCatalog, spec: JoinSpec) -> PruneResult:
    """Keep a set of plans none of which is subsumed by another; route the rest.

    Plans are visited by increasing number of heavy-typed attributes and routed to
    the first kept plan that subsumes them. A routing group is then checked for
    combinations outside it whose tuples would all meet inside it, and members
    causing that are reinstated, so every output is produced exactly once.
    """
    logger = setup_logger("JoinPlanner")
    order = sorted(range(len(plans)), key=lambda i: (plans[i].assignment.heavy_count, i))
    kept: List[int] = []
    routing: Dict[int, int] = {}
    for index in order:
        target = next(
            (kid for kid in kept if subsumes(plans[kid], plans[index].assignment, catalog, spec)),
            None,
        )
        if target is None:
            kept.append(index)
        else:
            routing[index] = target
            logger.info(f"Residual {plans[index].label} subsumed by {plans[target].label}")

    heavy_by_relation = [catalog.heavy_attributes_of(r) for r in spec.relations]

    def projections(index: int) -> List[Tuple[Optional[str], ...]]:
        return [plans[index].assignment.projection(h) for h in heavy_by_relation]

    while True:
        groups: Dict[int, List[int]] = {kid: [kid] for kid in kept}
        for pruned, target in routing.items():
            groups[target].append(pruned)

        reinstated: List[int] = []
        for target, members in groups.items():
            if len(members) == 1:
                continue
            covered = [set(p) for p in zip(*(projections(m) for m in members))]
            for other in range(len(plans)):
                if other in members:
                    continue
                mine = projections(other)
                if not all(p in cover for p, cover in zip(mine, covered)):
                    continue
                target_projection = projections(target)
                reinstated = [
                    m for m in members
                    if m != target and any(
                        mp == op and op != tp for mp, op, tp in zip(projections(m), mine, target_projection)
                    )
                ]
                break
            if reinstated:
                break

        if not reinstated:
            break
        for index in reinstated:
            logger.info(f"Residual {plans[index].label} reinstated to keep outputs unique")
            del routing[index]
            kept.append(index)

    survivors = [plans[i] for i in sorted(kept)]
    return PruneResult(
        survivors=survivors,
        routing={plans[p].assignment: plans[t].assignment for p, t in routing.items()},
    )


class JoinPlanner:
    """Builds SharesSkew (or plain Shares) plans for a join over a tuple store."""

    def __init__(self, config: Optional[ConfigManager] = None):
        self.config = config or get_config()
        settings = self.config.get_planner_settings()
        self.combination_cap = int(settings.get("combination_cap", 10_000))
        self.max_reducers = int(settings.get("max_reducers", 1_000_000))
        self.workers = max(1, int(settings.get("workers", 1)))
        self.solver = ShareSolver(
            tolerance=float(settings.get("solver_tolerance", 1e-9)),
            max_iterations=int(settings.get("solver_max_iterations", 10_000)),
        )
        self.logger = setup_logger("JoinPlanner")

    def plan_residual(self, generic: CostExpression, assignment: TypeAssignment, sizes: Mapping[str, int],
                      spec: JoinSpec, k: Optional[int] = None, q: Optional[float] = None,
                      residual_id: int = 0) -> ResidualPlan:
        expr = specialize_cost(generic, assignment, sizes, spec)
        feasible, note = True, None
        if q is not None:
            sizing = size_reducers(expr, q, self.solver, self.max_reducers)
            real, budget, feasible, note = sizing.shares, sizing.k, sizing.feasible, sizing.reason
            if not feasible:
                self.logger.warning(f"Residual {assignment.label()} infeasible: {note}")
        else:
            real = self.solver.solve(expr, k)
            budget = int(k) if expr.free_variables else 1
        shares = integerize(expr, real)
        predicted = expr.evaluate(shares.integer_shares)
        self.logger.debug(
            f"Residual {assignment.label()}: {expr.symbolic()} k={budget} shares={shares.integer_shares} "
            f"cost={predicted:.0f}"
        )
        return ResidualPlan(
            residual_id=residual_id,
            assignment=assignment,
            relevant_sizes={r: int(c) for r, c in sizes.items()},
            cost_expr=expr,
            shares=shares,
            k=budget,
            predicted_cost=predicted,
            feasible=feasible,
            note=note,
        )

    def plan(self, spec: JoinSpec, store: TupleStore, catalog: Optional[HeavyHitterCatalog] = None,
             k: Optional[int] = None, q: Optional[float] = None,
             algorithm: str = ALGORITHM_SHARESSKEW) -> JoinPlan:
        if (k is None) == (q is None):
            raise ConfigurationError("Plan with exactly one of a reducer budget k or a capacity q",
                                     context={"k": k, "q": q})
        if k is not None and k < 1:
            raise ConfigurationError(f"Reducer budget must be at least 1, got {k}", context={"k": k})

        validate_spec(spec)
        if algorithm == ALGORITHM_SHARES:
            catalog = HeavyHitterCatalog.empty()
        elif catalog is None:
            threshold = HeavyHitterThreshold.from_settings(self.config.get_heavy_hitter_settings())
            catalog = detect_heavy_hitters(store, spec, threshold,
                                           int(self.config.get("heavy_hitters.workers", 1)))

        assignments = enumerate_residual_joins(spec, catalog, self.combination_cap)
        self.logger.info(f"{len(assignments)} residual join(s) for {spec.name} ({algorithm})")
        histograms = type_histograms(store, spec, catalog)
        generic = build_generic_cost(spec)

        def solve(item: Tuple[int, TypeAssignment]) -> ResidualPlan:
            index, assignment = item
            sizes = {r.name: histograms[r.name].count_for(assignment) for r in spec.relations}
            return self.plan_residual(generic, assignment, sizes, spec, k, q, residual_id=index)

        if self.workers > 1 and len(assignments) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                plans = list(pool.map(solve, enumerate(assignments)))
        else:
            plans = [solve(item) for item in enumerate(assignments)]

        pruned = prune_subsumed(plans, catalog, spec)
        residuals = self._merge_groups(pruned, histograms, generic, spec, k, q)

        routing: Dict[TypeAssignment, int] = {}
        for residual in residuals:
            routing[residual.assignment] = residual.residual_id
            for member in residual.absorbed:
                routing[member] = residual.residual_id

        plan = JoinPlan(
            spec=spec,
            catalog=catalog,
            residuals=residuals,
            routing=routing,
            mode=MODE_Q if q is not None else MODE_K,
            budget=float(q if q is not None else k),
            algorithm=algorithm,
        )
        self.logger.info(
            f"Plan ready: {len(residuals)} residual(s), {plan.total_reducers} reducer(s), "
            f"predicted cost {plan.predicted_cost:.0f}"
        )
        return plan

    def _merge_groups(self, pruned: PruneResult, histograms: Mapping[str, RelationTypeHistogram],
                      generic: CostExpression, spec: JoinSpec, k: Optional[int],
                      q: Optional[float]) -> List[ResidualPlan]:
        """Number the survivors; re-plan those that absorbed pruned combinations on merged sizes."""
        residuals: List[ResidualPlan] = []
        for residual_id, survivor in enumerate(pruned.survivors):
            absorbed = pruned.absorbed_by(survivor.assignment)
            if absorbed:
                sizes = count_group_sizes(histograms, spec, [survivor.assignment] + absorbed)
                survivor = self.plan_residual(generic, survivor.assignment, sizes, spec, k, q)
            survivor.residual_id = residual_id
            survivor.absorbed = absorbed
            residuals.append(survivor)
        return residuals


def plan_join(spec: JoinSpec, store: TupleStore, catalog: Optional[HeavyHitterCatalog], k: Optional[int] = None,
              q: Optional[float] = None, algorithm: str = ALGORITHM_SHARESSKEW,
              config: Optional[ConfigManager] = None) -> JoinPlan:
    return JoinPlanner(config).plan(spec, store, catalog, k=k, q=q, algorithm=algorithm)
