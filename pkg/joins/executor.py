"""
Shuffle and reduce simulation.

Pairs emitted by the mapper are grouped by reducer key, every reducer joins
its buffers locally, and the statistics record communication per residual and
load per reducer. Also hosts the naive 2-way skew baseline.
"""

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from joins.join_model import JoinSpec, TupleStore
from joins.mapper import HashFamily, KeyVector, Payload, TupleMapper, write_spill
from joins.oracle import CanonicalResult
from joins.planner import JoinPlan
from utils.config_manager import ConfigManager, get_config
from utils.error_handler import (
    CommunicationMismatchError,
    DuplicateOutputError,
    ReducerOverflowError,
    SpecValidationError,
)
from utils.log_setup import setup_logger

PARTITION_SLOT = "partition"
Provenance = Tuple[Tuple[str, int], ...]


@dataclass
class Reducer:
    key: KeyVector
    buffers: Dict[str, List[Tuple[int, Tuple[str, ...]]]] = field(default_factory=dict)

    def add(self, payload: Payload) -> None:
        self.buffers.setdefault(payload.relation, []).append((payload.row_id, payload.values))

    @property
    def load(self) -> int:
        return sum(len(b) for b in self.buffers.values())


@dataclass
class ResidualStats:
    residual_id: int
    label: str
    k: int
    k_int: int
    predicted_cost: float
    measured_pairs: int = 0
    reducers_used: int = 0
    max_load: int = 0
    output_count: int = 0

    @property
    def mean_load(self) -> float:
        return self.measured_pairs / self.k_int if self.k_int else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "residual_id": self.residual_id,
            "label": self.label,
            "k": self.k,
            "k_int": self.k_int,
            "predicted_cost": self.predicted_cost,
            "measured_pairs": self.measured_pairs,
            "reducers_used": self.reducers_used,
            "max_load": self.max_load,
            "mean_load": self.mean_load,
            "output_count": self.output_count,
        }


@dataclass
class ShuffleStats:
    residuals: Dict[int, ResidualStats] = field(default_factory=dict)
    reducer_loads: Counter = field(default_factory=Counter)
    output_count: int = 0

    @classmethod
    def for_plan(cls, plan: JoinPlan) -> "ShuffleStats":
        return cls(residuals={
            p.residual_id: ResidualStats(p.residual_id, p.label, p.k, p.k_int, p.predicted_cost)
            for p in plan.residuals
        })

    def record(self, key: KeyVector, count: int = 1) -> int:
        self.reducer_loads[key] += count
        self.residuals[key.residual_id].measured_pairs += count
        return self.reducer_loads[key]

    @property
    def total_pairs(self) -> int:
        return sum(self.reducer_loads.values())

    @property
    def reducer_count(self) -> int:
        return sum(r.k_int for r in self.residuals.values())

    @property
    def max_load(self) -> int:
        return max(self.reducer_loads.values(), default=0)

    @property
    def mean_load(self) -> float:
        count = self.reducer_count
        return self.total_pairs / count if count else 0.0

    def finalize(self) -> "ShuffleStats":
        for stats in self.residuals.values():
            loads = [load for key, load in self.reducer_loads.items() if key.residual_id == stats.residual_id]
            stats.reducers_used = len(loads)
            stats.max_load = max(loads, default=0)
        return self

    def load_histogram(self, bins: int = 10) -> Dict[str, List[float]]:
        """Histogram of loads over every reducer of the plan, idle ones included."""
        loads = list(self.reducer_loads.values())
        loads += [0] * max(0, self.reducer_count - len(loads))
        counts, edges = np.histogram(np.asarray(loads, dtype=float), bins=bins)
        return {"counts": counts.tolist(), "edges": edges.tolist()}

    def metrics_rows(self) -> List[Dict[str, Any]]:
        return [self.residuals[rid].to_dict() for rid in sorted(self.residuals)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_pairs": self.total_pairs,
            "total_reducers": self.reducer_count,
            "max_load": self.max_load,
            "mean_load": self.mean_load,
            "output_count": self.output_count,
            "load_histogram": self.load_histogram(),
            "residuals": self.metrics_rows(),
        }

    def save_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    def save_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.metrics_rows()).to_csv(path, index=False)
        return path


@dataclass
class JoinResult:
    """Output rows over the attribute universe in canonical (name-sorted) order."""

    attributes: Tuple[str, ...]
    rows: List[Tuple[str, ...]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def as_canonical(self) -> CanonicalResult:
        return CanonicalResult(self.attributes, tuple(sorted(self.rows)))


def local_join(reducer: Reducer, spec: JoinSpec) -> List[Tuple[Tuple[str, ...], Provenance]]:
    """Join the reducer's buffers with a hash-join cascade in connected relation order.

    Each output carries its provenance, the (relation, row id) of every tuple used.
    """
    attributes = tuple(sorted(spec.attribute_universe))
    partial: List[Tuple[Dict[str, str], Provenance]] = [({}, ())]
    bound: List[str] = []
    for relation in spec.connected_order():
        tuples = reducer.buffers.get(relation.name, [])
        if not tuples:
            return []
        shared = [a for a in relation.attributes if a in bound]
        positions = [relation.index_of(a) for a in shared]
        index: Dict[Tuple[str, ...], List[Tuple[int, Tuple[str, ...]]]] = {}
        for row_id, values in tuples:
            index.setdefault(tuple(values[p] for p in positions), []).append((row_id, values))

        extended: List[Tuple[Dict[str, str], Provenance]] = []
        for assignment, provenance in partial:
            for row_id, values in index.get(tuple(assignment[a] for a in shared), ()):
                merged = dict(assignment)
                merged.update(zip(relation.attributes, values))
                extended.append((merged, provenance + ((relation.name, row_id),)))
        partial = extended
        if not partial:
            return []
        bound.extend(a for a in relation.attributes if a not in bound)

    return [(tuple(assignment[a] for a in attributes), provenance) for assignment, provenance in partial]


class ShuffleSimulator:
    """In-memory map/shuffle/reduce run of a plan over a tuple store."""

    def __init__(self, spec: JoinSpec, memory_cap: Optional[int] = None, workers: int = 1,
                 verify_identity: bool = True):
        self.spec = spec
        self.memory_cap = memory_cap
        self.workers = max(1, int(workers))
        self.verify_identity = verify_identity
        self.logger = setup_logger("ShuffleSimulator")

    @classmethod
    def from_config(cls, spec: JoinSpec, config: Optional[ConfigManager] = None) -> "ShuffleSimulator":
        settings = (config or get_config()).get_executor_settings()
        return cls(
            spec,
            memory_cap=settings.get("reducer_memory_cap"),
            workers=settings.get("workers", 1),
            verify_identity=settings.get("verify_identity", True),
        )

    def _check_capacity(self, key: KeyVector, load: int) -> None:
        if self.memory_cap is not None and load > self.memory_cap:
            raise ReducerOverflowError(
                f"Reducer {key.as_text()} exceeded the memory cap of {self.memory_cap} tuples",
                context={"reducer": key.as_text(), "cap": self.memory_cap},
            )

    def _shuffle(self, pairs: Iterable[Tuple[KeyVector, Payload]], stats: ShuffleStats,
                 compute_output: bool) -> Dict[KeyVector, Reducer]:
        reducers: Dict[KeyVector, Reducer] = {}
        for key, payload in pairs:
            self._check_capacity(key, stats.record(key))
            if compute_output:
                reducer = reducers.get(key)
                if reducer is None:
                    reducer = reducers[key] = Reducer(key)
                reducer.add(payload)
        return reducers

    def _check_identity(self, stats: ShuffleStats) -> None:
        for residual in stats.residuals.values():
            if residual.measured_pairs != int(round(residual.predicted_cost)):
                raise CommunicationMismatchError(
                    f"Residual {residual.label} emitted {residual.measured_pairs} pairs, "
                    f"predicted {residual.predicted_cost:.0f}",
                    context=residual.to_dict(),
                )

    def _reduce(self, reducers: Dict[KeyVector, Reducer], stats: ShuffleStats) -> JoinResult:
        ordered = list(reducers.values())
        if self.workers > 1 and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                outputs = list(pool.map(lambda r: local_join(r, self.spec), ordered))
        else:
            outputs = [local_join(r, self.spec) for r in ordered]

        seen: Counter = Counter()
        result = JoinResult(tuple(sorted(self.spec.attribute_universe)))
        for reducer, produced in zip(ordered, outputs):
            stats.residuals[reducer.key.residual_id].output_count += len(produced)
            for row, provenance in produced:
                seen[provenance] += 1
                result.rows.append(row)

        duplicates = [p for p, count in seen.items() if count > 1]
        if duplicates:
            raise DuplicateOutputError(
                f"{len(duplicates)} output tuple(s) produced more than once",
                context={"example": [list(map(list, duplicates[0]))]},
            )
        result.rows.sort()
        stats.output_count = len(result.rows)
        return result

    def _finish(self, reducers: Dict[KeyVector, Reducer], stats: ShuffleStats,
                compute_output: bool) -> Tuple[JoinResult, ShuffleStats]:
        stats.finalize()
        if self.verify_identity:
            self._check_identity(stats)
        if compute_output:
            result = self._reduce(reducers, stats)
        else:
            result = JoinResult(tuple(sorted(self.spec.attribute_universe)))
        self.logger.info(
            f"Job done: {stats.total_pairs} pairs, max load {stats.max_load}, "
            f"mean load {stats.mean_load:.1f}, {stats.output_count} output(s)"
        )
        return result, stats

    def run_job(self, store: TupleStore, plan: JoinPlan, hashes: HashFamily, compute_output: bool = True,
                spill_path: Optional[Path] = None) -> Tuple[JoinResult, ShuffleStats]:
        mapper = TupleMapper(plan, hashes)
        stats = ShuffleStats.for_plan(plan)
        pairs: Iterable[Tuple[KeyVector, Payload]] = mapper.map_store(store)
        if spill_path is not None:
            pairs = list(pairs)
            written = write_spill(pairs, spill_path)
            self.logger.info(f"Spilled {written} pair(s) to {spill_path}")
        reducers = self._shuffle(pairs, stats, compute_output)
        return self._finish(reducers, stats, compute_output)

    def naive_2way(self, store: TupleStore, hh_values: Sequence[str], k: int, hashes: HashFamily,
                   compute_output: bool = True) -> Tuple[JoinResult, ShuffleStats]:
        """Partition the larger heavy side over k reducers, broadcast the smaller one.

        Each heavy value gets its own group of k reducers; the remaining tuples are
        hash-joined on the join attribute over k reducers.
        """
        if len(self.spec.relations) != 2:
            raise SpecValidationError("The naive baseline needs a 2-way join",
                                      context={"relations": len(self.spec.relations)})
        left, right = self.spec.relations
        shared = self.spec.shared_attributes(left.name, right.name)
        if len(shared) != 1:
            raise SpecValidationError("The naive baseline needs exactly one join attribute",
                                      context={"shared": list(shared)})
        join_attribute = shared[0]
        values = sorted(set(str(v) for v in hh_values))
        k = int(k)

        frames = {r.name: store.frame(r.name) for r in (left, right)}
        heavy_mask = {name: frame[join_attribute].isin(values) for name, frame in frames.items()}

        stats = ShuffleStats()
        stats.residuals[0] = ResidualStats(
            0, "ordinary", k, k, float(sum(int((~mask).sum()) for mask in heavy_mask.values()))
        )
        reducers: Dict[KeyVector, Reducer] = {}

        def emit(key: KeyVector, payload: Payload) -> None:
            self._check_capacity(key, stats.record(key))
            if compute_output:
                reducers.setdefault(key, Reducer(key)).add(payload)

        for relation in (left, right):
            frame = frames[relation.name][~heavy_mask[relation.name]]
            position = relation.index_of(join_attribute)
            hashes.prime(join_attribute, frame[join_attribute])
            for row_id, row in zip(frame.index, frame.itertuples(index=False, name=None)):
                bucket = hashes.bucket(join_attribute, row[position], k)
                emit(KeyVector(0, ((join_attribute, bucket),)), Payload(relation.name, int(row_id), row))

        for group, value in enumerate(values, start=1):
            parts = {name: frames[name][frames[name][join_attribute] == value] for name in frames}
            partitioned, broadcast = (left, right) if len(parts[left.name]) >= len(parts[right.name]) else (right, left)
            part_frame, cast_frame = parts[partitioned.name], parts[broadcast.name]
            stats.residuals[group] = ResidualStats(
                group, f"{join_attribute}={value}", k, k, float(len(part_frame) + k * len(cast_frame))
            )

            others = [i for i, a in enumerate(partitioned.attributes) if a != join_attribute]
            label = f"{PARTITION_SLOT}:{partitioned.name}"
            for row_id, row in zip(part_frame.index, part_frame.itertuples(index=False, name=None)):
                token = "\x1f".join(row[i] for i in others) if others else str(row_id)
                key = KeyVector(group, ((PARTITION_SLOT, hashes.bucket(label, token, k)),))
                emit(key, Payload(partitioned.name, int(row_id), row))

            keys = [KeyVector(group, ((PARTITION_SLOT, i),)) for i in range(k)]
            if compute_output:
                for row_id, row in zip(cast_frame.index, cast_frame.itertuples(index=False, name=None)):
                    payload = Payload(broadcast.name, int(row_id), row)
                    for key in keys:
                        emit(key, payload)
            elif len(cast_frame):
                for key in keys:
                    self._check_capacity(key, stats.record(key, len(cast_frame)))

        return self._finish(reducers, stats, compute_output)


def run_job(store: TupleStore, plan: JoinPlan, hashes: HashFamily, compute_output: bool = True,
            config: Optional[ConfigManager] = None) -> Tuple[JoinResult, ShuffleStats]:
    return ShuffleSimulator.from_config(plan.spec, config).run_job(store, plan, hashes, compute_output)


def naive_2way(store: TupleStore, spec: JoinSpec, hh_values: Sequence[str], k: int, hashes: HashFamily,
               compute_output: bool = True,
               config: Optional[ConfigManager] = None) -> Tuple[JoinResult, ShuffleStats]:
    return ShuffleSimulator.from_config(spec, config).naive_2way(store, hh_values, k, hashes, compute_output)
