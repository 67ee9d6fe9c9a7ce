"""
Join model: relation schemas, join hypergraphs, tuple storage and the
structural analyses (incidence, connectivity, dominance) the planner needs.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import pandas as pd

from utils.error_handler import DataFormatError, SpecValidationError, UnknownRelationError

ORDINARY_LABEL = "ordinary"


@dataclass(frozen=True)
class RelationSchema:
    name: str
    attributes: Tuple[str, ...]
    declared_size: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))

    @property
    def arity(self) -> int:
        return len(self.attributes)

    def contains(self, attribute: str) -> bool:
        return attribute in self.attributes

    def index_of(self, attribute: str) -> int:
        return self.attributes.index(attribute)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"name": self.name, "attributes": list(self.attributes)}
        if self.declared_size is not None:
            data["size"] = self.declared_size
        return data


@dataclass(frozen=True)
class JoinSpec:
    """A natural join written as a hypergraph: relations are hyperedges over attributes."""

    relations: Tuple[RelationSchema, ...]
    name: str = "join"

    def __post_init__(self) -> None:
        object.__setattr__(self, "relations", tuple(self.relations))

    @property
    def attribute_universe(self) -> Tuple[str, ...]:
        """All attributes, in order of first appearance."""
        seen: List[str] = []
        for relation in self.relations:
            for attribute in relation.attributes:
                if attribute not in seen:
                    seen.append(attribute)
        return tuple(seen)

    @property
    def relation_names(self) -> Tuple[str, ...]:
        return tuple(r.name for r in self.relations)

    def relation(self, name: str) -> RelationSchema:
        for relation in self.relations:
            if relation.name == name:
                return relation
        raise UnknownRelationError(f"Unknown relation '{name}'", context={"relation": name})

    def relations_containing(self, attribute: str) -> FrozenSet[str]:
        return frozenset(r.name for r in self.relations if attribute in r.attributes)

    def incidence(self) -> Dict[str, FrozenSet[str]]:
        return {a: self.relations_containing(a) for a in self.attribute_universe}

    def shared_attributes(self, left: str, right: str) -> Tuple[str, ...]:
        other = set(self.relation(right).attributes)
        return tuple(a for a in self.relation(left).attributes if a in other)

    def connected_order(self) -> List[RelationSchema]:
        """Relations in breadth-first order over shared attributes, starting at the first."""
        if not self.relations:
            return []
        order = [self.relations[0]]
        visited = {self.relations[0].name}
        queue = deque([self.relations[0]])
        while queue:
            current = queue.popleft()
            for candidate in self.relations:
                if candidate.name in visited:
                    continue
                if set(candidate.attributes) & set(current.attributes):
                    visited.add(candidate.name)
                    order.append(candidate)
                    queue.append(candidate)
        return order

    def declared_sizes(self) -> Dict[str, int]:
        return {r.name: int(r.declared_size or 0) for r in self.relations}

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "relations": [r.to_dict() for r in self.relations]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JoinSpec":
        try:
            relations = tuple(
                RelationSchema(
                    name=str(item["name"]),
                    attributes=tuple(str(a) for a in item["attributes"]),
                    declared_size=item.get("size"),
                )
                for item in data["relations"]
            )
        except (KeyError, TypeError) as e:
            raise SpecValidationError(f"Malformed join spec: {e}") from e
        return cls(relations=relations, name=str(data.get("name", "join")))

    @classmethod
    def load(cls, path: Path) -> "JoinSpec":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise SpecValidationError(f"Cannot read join spec {path}: {e}", context={"path": str(path)}) from e
        return validate_spec(cls.from_dict(data))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path


@dataclass(frozen=True)
class TupleRecord:
    relation: str
    values: Tuple[str, ...]

    def validate(self, schema: RelationSchema) -> "TupleRecord":
        if len(self.values) != schema.arity:
            raise DataFormatError(
                f"Tuple of {self.relation} has arity {len(self.values)}, expected {schema.arity}",
                context={"relation": self.relation, "values": list(self.values)},
            )
        return self


@dataclass(frozen=True)
class TypeAssignment:
    """One combination of types: each HH-bearing attribute is ordinary (None) or one HH value."""

    types: Tuple[Tuple[str, Optional[str]], ...] = ()

    @classmethod
    def of(cls, mapping: Mapping[str, Optional[str]], order: Optional[Sequence[str]] = None) -> "TypeAssignment":
        keys = list(order) if order is not None else sorted(mapping)
        return cls(tuple((a, mapping[a]) for a in keys if a in mapping))

    def type_of(self, attribute: str) -> Optional[str]:
        for name, value in self.types:
            if name == attribute:
                return value
        return None

    @property
    def attributes(self) -> Tuple[str, ...]:
        return tuple(a for a, _ in self.types)

    def heavy_attributes(self) -> Tuple[str, ...]:
        return tuple(a for a, v in self.types if v is not None)

    @property
    def heavy_count(self) -> int:
        return len(self.heavy_attributes())

    def projection(self, attributes: Sequence[str]) -> Tuple[Optional[str], ...]:
        return tuple(self.type_of(a) for a in attributes)

    def label(self) -> str:
        heavy = [f"{a}={v}" for a, v in self.types if v is not None]
        return ",".join(heavy) if heavy else ORDINARY_LABEL

    def to_dict(self) -> Dict[str, Optional[str]]:
        return {a: v for a, v in self.types}

    @classmethod
    def from_dict(cls, data: Mapping[str, Optional[str]]) -> "TypeAssignment":
        return cls(tuple((str(a), None if v is None else str(v)) for a, v in data.items()))


class TupleStore:
    """In-memory relation instances, one string-typed DataFrame per relation."""

    def __init__(self, spec: JoinSpec):
        self.spec = spec
        self._frames: Dict[str, pd.DataFrame] = {
            r.name: pd.DataFrame({a: pd.Series([], dtype=object) for a in r.attributes}) for r in spec.relations
        }

    def add_relation(self, name: str, frame: pd.DataFrame) -> None:
        schema = self.spec.relation(name)
        if list(frame.columns) != list(schema.attributes):
            raise DataFormatError(
                f"Columns {list(frame.columns)} of {name} do not match schema {list(schema.attributes)}",
                context={"relation": name},
            )
        self._frames[name] = frame.astype(str).reset_index(drop=True)

    def frame(self, name: str) -> pd.DataFrame:
        if name not in self._frames:
            raise UnknownRelationError(f"Unknown relation '{name}'", context={"relation": name})
        return self._frames[name]

    def size(self, name: str) -> int:
        return len(self.frame(name))

    def sizes(self) -> Dict[str, int]:
        return {name: len(frame) for name, frame in self._frames.items()}

    def records(self, name: str) -> Iterator[TupleRecord]:
        for values in self.frame(name).itertuples(index=False, name=None):
            yield TupleRecord(name, tuple(values))

    def all_records(self) -> Iterator[TupleRecord]:
        for relation in self.spec.relations:
            yield from self.records(relation.name)

    @classmethod
    def from_rows(cls, spec: JoinSpec, rows: Mapping[str, Iterable[Sequence[Any]]]) -> "TupleStore":
        store = cls(spec)
        for name, relation_rows in rows.items():
            schema = spec.relation(name)
            materialized = [tuple(str(v) for v in row) for row in relation_rows]
            for row in materialized:
                TupleRecord(name, row).validate(schema)
            if materialized:
                frame = pd.DataFrame(materialized, columns=list(schema.attributes), dtype=object)
            else:
                frame = pd.DataFrame({a: pd.Series([], dtype=object) for a in schema.attributes})
            store.add_relation(name, frame)
        return store


def validate_spec(spec: JoinSpec) -> JoinSpec:
    """Return the spec unchanged if it is a connected join of at least two relations."""
    if len(spec.relations) < 2:
        raise SpecValidationError("A join needs at least two relations", context={"relations": len(spec.relations)})

    names: Set[str] = set()
    for relation in spec.relations:
        if not relation.name:
            raise SpecValidationError("Relation names must be non-empty")
        if relation.name in names:
            raise SpecValidationError(f"Duplicate relation name '{relation.name}'", context={"relation": relation.name})
        names.add(relation.name)
        if not relation.attributes:
            raise SpecValidationError(f"Relation '{relation.name}' has no attributes", context={"relation": relation.name})
        if any(not a for a in relation.attributes):
            raise SpecValidationError(f"Relation '{relation.name}' has an empty attribute name")
        if len(set(relation.attributes)) != len(relation.attributes):
            raise SpecValidationError(
                f"Duplicate attribute in relation '{relation.name}'",
                context={"relation": relation.name, "attributes": list(relation.attributes)},
            )
        if relation.declared_size is not None and relation.declared_size < 0:
            raise SpecValidationError(f"Negative size for relation '{relation.name}'")

    if len(spec.connected_order()) != len(spec.relations):
        raise SpecValidationError(
            "Join graph is disconnected",
            context={"reachable": [r.name for r in spec.connected_order()]},
        )
    return spec


def dominated_attributes(spec: JoinSpec, active: Iterable[str]) -> FrozenSet[str]:
    """Active attributes dominated by another active attribute, iterated to a fixpoint.

    B dominates A when B appears in every relation where A appears. For identical
    incidence sets the lexicographically larger name is the dominated one.
    """
    incidence = spec.incidence()
    remaining = [a for a in spec.attribute_universe if a in set(active)]
    dominated: Set[str] = set()

    changed = True
    while changed:
        changed = False
        for attribute in sorted(remaining):
            mine = incidence[attribute]
            for other in remaining:
                if other == attribute:
                    continue
                theirs = incidence[other]
                if not mine <= theirs:
                    continue
                if mine == theirs and attribute < other:
                    continue
                dominated.add(attribute)
                remaining.remove(attribute)
                changed = True
                break
            if changed:
                break
    return frozenset(dominated)


def chain_spec(sizes: Sequence[int], name: str = "chain") -> JoinSpec:
    """R1(A0,A1) join R2(A1,A2) join ... join Rn(A(n-1),An)."""
    relations = tuple(
        RelationSchema(f"R{i + 1}", (f"A{i}", f"A{i + 1}"), int(size)) for i, size in enumerate(sizes)
    )
    return validate_spec(JoinSpec(relations, name=name))


def cyclic_symmetric_spec(n: int, d: int, sizes: Sequence[int], name: str = "symmetric") -> JoinSpec:
    """n relations over attributes X1..Xn; relation i covers d cyclically consecutive attributes from Xi."""
    if not 1 <= d < n:
        raise SpecValidationError(f"Symmetric join needs 1 <= d < n, got n={n}, d={d}", context={"n": n, "d": d})
    if len(sizes) != n:
        raise SpecValidationError(f"Expected {n} sizes, got {len(sizes)}")
    relations = tuple(
        RelationSchema(
            f"R{i + 1}",
            tuple(f"X{(i + offset) % n + 1}" for offset in range(d)),
            int(sizes[i]),
        )
        for i in range(n)
    )
    return validate_spec(JoinSpec(relations, name=f"{name}_{n}_{d}"))
