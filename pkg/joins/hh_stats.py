"""
Preliminary round: heavy-hitter detection and relevant-size counting.

A value is heavy for an attribute when its count in some relation holding the
attribute exceeds the threshold (reducer capacity q by default, or a fraction
tau of that relation's size).
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from joins.join_model import JoinSpec, RelationSchema, TupleStore, TypeAssignment, dominated_attributes
from utils.error_handler import DataFormatError, ThresholdConfigError
from utils.log_setup import setup_logger

Signature = Tuple[Optional[str], ...]


@dataclass(frozen=True)
class HeavyHitterThreshold:
    capacity_q: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self) -> None:
        if self.capacity_q is None and self.tau is None:
            raise ThresholdConfigError("Heavy-hitter threshold needs either a capacity q or a fraction tau")
        if self.tau is not None and not 0 < self.tau <= 1:
            raise ThresholdConfigError(f"tau must lie in (0, 1], got {self.tau}", context={"tau": self.tau})
        if self.capacity_q is not None and self.capacity_q < 0:
            raise ThresholdConfigError(f"q must be non-negative, got {self.capacity_q}")

    def limit_for(self, relation_size: int) -> float:
        """Counts strictly above this limit make a value heavy in that relation."""
        if self.tau is not None:
            return self.tau * relation_size
        return float(self.capacity_q)

    def describe(self) -> Dict[str, Any]:
        return {"capacity_q": self.capacity_q, "tau": self.tau}

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any]) -> "HeavyHitterThreshold":
        return cls(capacity_q=settings.get("capacity_q"), tau=settings.get("tau"))


@dataclass(frozen=True)
class HeavyHitter:
    attribute: str
    value: str
    frequencies: Dict[str, int] = field(default_factory=dict, hash=False)

    def frequency(self, relation: str) -> int:
        return int(self.frequencies.get(relation, 0))


class HeavyHitterCatalog:
    """Heavy hitters per attribute with exact per-relation frequencies."""

    def __init__(self, entries: Optional[Mapping[str, Sequence[HeavyHitter]]] = None,
                 threshold: Optional[Dict[str, Any]] = None):
        self._entries: Dict[str, List[HeavyHitter]] = {
            attribute: list(hitters) for attribute, hitters in (entries or {}).items() if hitters
        }
        self.threshold = threshold or {}

    @classmethod
    def empty(cls) -> "HeavyHitterCatalog":
        return cls({})

    @property
    def is_empty(self) -> bool:
        return not self._entries

    def __len__(self) -> int:
        return sum(len(h) for h in self._entries.values())

    def attributes(self) -> Tuple[str, ...]:
        return tuple(self._entries)

    def hitters(self, attribute: str) -> Tuple[HeavyHitter, ...]:
        return tuple(self._entries.get(attribute, ()))

    def values(self, attribute: str) -> Tuple[str, ...]:
        return tuple(h.value for h in self._entries.get(attribute, ()))

    def is_heavy(self, attribute: str, value: str) -> bool:
        return value in self.values(attribute)

    def frequency(self, attribute: str, value: str, relation: str) -> int:
        for hitter in self._entries.get(attribute, ()):
            if hitter.value == value:
                return hitter.frequency(relation)
        return 0

    def heavy_attributes_of(self, schema: RelationSchema) -> Tuple[str, ...]:
        return tuple(a for a in schema.attributes if a in self._entries)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "threshold": self.threshold,
            "heavy_hitters": [
                {"attribute": h.attribute, "value": h.value, "frequencies": dict(h.frequencies)}
                for attribute in self._entries
                for h in self._entries[attribute]
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "HeavyHitterCatalog":
        entries: Dict[str, List[HeavyHitter]] = {}
        try:
            for item in data.get("heavy_hitters", []):
                hitter = HeavyHitter(
                    attribute=str(item["attribute"]),
                    value=str(item["value"]),
                    frequencies={str(r): int(c) for r, c in item["frequencies"].items()},
                )
                entries.setdefault(hitter.attribute, []).append(hitter)
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"Malformed heavy-hitter catalog: {e}") from e
        return cls(entries, threshold=dict(data.get("threshold", {})))

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, path: Path) -> "HeavyHitterCatalog":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"Cannot read catalog {path}: {e}", context={"path": str(path)}) from e
        return cls.from_dict(data)


class RelevantSizes:
    """Per combination of types: relation -> number of relevant tuples."""

    def __init__(self, sizes: Optional[Dict[TypeAssignment, Dict[str, int]]] = None):
        self._sizes: Dict[TypeAssignment, Dict[str, int]] = dict(sizes or {})

    def __getitem__(self, assignment: TypeAssignment) -> Dict[str, int]:
        return self._sizes[assignment]

    def __contains__(self, assignment: TypeAssignment) -> bool:
        return assignment in self._sizes

    def __len__(self) -> int:
        return len(self._sizes)

    def items(self):
        return self._sizes.items()

    def total(self, relation: str) -> int:
        return sum(sizes.get(relation, 0) for sizes in self._sizes.values())


class RelationTypeHistogram:
    """Tuple counts of one relation keyed by its signature on the heavy attributes it holds.

    The signature carries the HH value for heavy-valued positions and None for
    ordinary ones.
    """

    def __init__(self, relation: str, heavy_attributes: Tuple[str, ...], counts: Dict[Signature, int]):
        self.relation = relation
        self.heavy_attributes = heavy_attributes
        self.counts = counts

    def count_for(self, assignment: TypeAssignment) -> int:
        return self.counts.get(assignment.projection(self.heavy_attributes), 0)

    def count_for_signatures(self, signatures: Iterable[Signature]) -> int:
        return sum(self.counts.get(s, 0) for s in set(signatures))

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def relation_type_histogram(frame: pd.DataFrame, schema: RelationSchema,
                            catalog: HeavyHitterCatalog) -> RelationTypeHistogram:
    heavy = catalog.heavy_attributes_of(schema)
    if not heavy or frame.empty:
        counts = {tuple(None for _ in heavy): len(frame)} if len(frame) else {}
        return RelationTypeHistogram(schema.name, heavy, counts)

    # code 0 = ordinary, i + 1 = i-th heavy value of that attribute
    value_lists = [catalog.values(a) for a in heavy]
    codes = np.stack(
        [pd.Categorical(frame[a], categories=list(values)).codes.astype(np.int64) + 1
         for a, values in zip(heavy, value_lists)],
        axis=1,
    )
    rows, counts = np.unique(codes, axis=0, return_counts=True)
    histogram: Dict[Signature, int] = {}
    for row, count in zip(rows, counts):
        signature = tuple(None if c == 0 else value_lists[i][c - 1] for i, c in enumerate(row))
        histogram[signature] = int(count)
    return RelationTypeHistogram(schema.name, heavy, histogram)


class HeavyHitterScanner:
    """Runs the preliminary round over a tuple store."""

    def __init__(self, spec: JoinSpec, threshold: HeavyHitterThreshold, workers: int = 1):
        self.spec = spec
        self.threshold = threshold
        self.workers = max(1, int(workers))
        self.logger = setup_logger("HeavyHitterScanner")

    def scanned_attributes(self) -> Tuple[str, ...]:
        dominated = dominated_attributes(self.spec, self.spec.attribute_universe)
        return tuple(a for a in self.spec.attribute_universe if a not in dominated)

    def _count_relation(self, store: TupleStore, schema: RelationSchema,
                        attributes: Sequence[str]) -> Dict[str, pd.Series]:
        frame = store.frame(schema.name)
        return {a: frame[a].value_counts(sort=False) for a in attributes if a in schema.attributes}

    def detect(self, store: TupleStore) -> HeavyHitterCatalog:
        attributes = self.scanned_attributes()
        relations = list(self.spec.relations)
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                per_relation = list(pool.map(lambda r: self._count_relation(store, r, attributes), relations))
        else:
            per_relation = [self._count_relation(store, r, attributes) for r in relations]
        counts = dict(zip((r.name for r in relations), per_relation))

        entries: Dict[str, List[HeavyHitter]] = {}
        for attribute in attributes:
            holders = [r for r in relations if attribute in r.attributes]
            heavy_values: List[str] = []
            for relation in holders:
                limit = self.threshold.limit_for(store.size(relation.name))
                series = counts[relation.name][attribute]
                for value in series[series > limit].index:
                    if value not in heavy_values:
                        heavy_values.append(value)
            heavy_values.sort()
            hitters = [
                HeavyHitter(
                    attribute=attribute,
                    value=str(value),
                    frequencies={r.name: int(counts[r.name][attribute].get(value, 0)) for r in holders},
                )
                for value in heavy_values
            ]
            if hitters:
                entries[attribute] = hitters
                self.logger.info(f"Attribute {attribute}: {len(hitters)} heavy hitter(s)")

        catalog = HeavyHitterCatalog(entries, threshold=self.threshold.describe())
        self.logger.info(f"Heavy-hitter scan done: {len(catalog)} value(s) over {len(entries)} attribute(s)")
        return catalog

    def type_histograms(self, store: TupleStore, catalog: HeavyHitterCatalog) -> Dict[str, RelationTypeHistogram]:
        relations = list(self.spec.relations)

        def build(schema: RelationSchema) -> RelationTypeHistogram:
            return relation_type_histogram(store.frame(schema.name), schema, catalog)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                histograms = list(pool.map(build, relations))
        else:
            histograms = [build(r) for r in relations]
        return {h.relation: h for h in histograms}


def detect_heavy_hitters(store: TupleStore, spec: JoinSpec, threshold: HeavyHitterThreshold,
                         workers: int = 1) -> HeavyHitterCatalog:
    return HeavyHitterScanner(spec, threshold, workers).detect(store)


def type_histograms(store: TupleStore, spec: JoinSpec, catalog: HeavyHitterCatalog) -> Dict[str, RelationTypeHistogram]:
    return {r.name: relation_type_histogram(store.frame(r.name), r, catalog) for r in spec.relations}


def count_relevant_sizes(store: TupleStore, spec: JoinSpec, catalog: HeavyHitterCatalog,
                         residuals: Sequence[TypeAssignment]) -> RelevantSizes:
    """Exact relevant tuple counts of every relation for each combination of types."""
    histograms = type_histograms(store, spec, catalog)
    return RelevantSizes({
        assignment: {r.name: histograms[r.name].count_for(assignment) for r in spec.relations}
        for assignment in residuals
    })


def count_group_sizes(histograms: Mapping[str, RelationTypeHistogram], spec: JoinSpec,
                      group: Sequence[TypeAssignment]) -> Dict[str, int]:
    """Relevant counts when several combinations are routed into one residual.

    A tuple is counted once even if it matches more than one member of the group.
    """
    sizes: Dict[str, int] = {}
    for relation in spec.relations:
        histogram = histograms[relation.name]
        signatures = [a.projection(histogram.heavy_attributes) for a in group]
        sizes[relation.name] = histogram.count_for_signatures(signatures)
    return sizes
