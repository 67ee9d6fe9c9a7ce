"""
Map side of the simulated job.

Each tuple is classified against the residual joins it is relevant to, its
join-key attributes are marked (h = hash, r = replicate, 1 = no slot), and the
replicated slots are expanded into the full set of reducer keys.
"""

import csv
import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from joins.join_model import JoinSpec, TupleRecord, TupleStore
from joins.planner import JoinPlan, ResidualPlan
from utils.error_handler import UnknownRelationError


class AttributeMark(Enum):
    HASH = "h"
    ONE = "1"
    REPLICATE = "r"


@dataclass(frozen=True)
class KeyVector:
    residual_id: int
    slots: Tuple[Tuple[str, int], ...]

    def bucket(self, attribute: str) -> Optional[int]:
        for name, index in self.slots:
            if name == attribute:
                return index
        return None

    def as_text(self) -> str:
        return f"{self.residual_id}|" + ",".join(f"{a}={i}" for a, i in self.slots)


@dataclass(frozen=True)
class Payload:
    relation: str
    row_id: int
    values: Tuple[str, ...]


class HashFamily:
    """Seeded 64-bit hashes, one independent function per attribute.

    Each attribute's hash key is derived from the master seed and the attribute
    name; buckets are hash mod share.
    """

    def __init__(self, master_seed: int = 1729):
        self.master_seed = int(master_seed)
        self._keys: Dict[str, str] = {}
        self._memo: Dict[Tuple[str, str], int] = {}

    def hash_key(self, attribute: str) -> str:
        if attribute not in self._keys:
            digest = hashlib.blake2b(f"{self.master_seed}:{attribute}".encode("utf-8"), digest_size=8)
            self._keys[attribute] = digest.hexdigest()
        return self._keys[attribute]

    def prime(self, attribute: str, values: Iterable[str]) -> None:
        """Hash a batch of values at once and remember them."""
        pending = [v for v in pd.unique(pd.Series(list(values), dtype=object)) if (attribute, v) not in self._memo]
        if not pending:
            return
        hashed = pd.util.hash_array(np.asarray(pending, dtype=object), hash_key=self.hash_key(attribute))
        for value, digest in zip(pending, hashed):
            self._memo[(attribute, value)] = int(digest)

    def hash_value(self, attribute: str, value: str) -> int:
        key = (attribute, value)
        if key not in self._memo:
            digest = pd.util.hash_array(np.asarray([value], dtype=object), hash_key=self.hash_key(attribute))[0]
            self._memo[key] = int(digest)
        return self._memo[key]

    def bucket(self, attribute: str, value: str, share: int) -> int:
        if share <= 1:
            return 0
        return self.hash_value(attribute, value) % int(share)


def recursive_keys(base_key: Sequence[Union[int, AttributeMark]], shares: Sequence[int]) -> List[Tuple[int, ...]]:
    """Expand every replicate-marked slot over all of its buckets.

    Fixed slots (bucket indices) are kept; the result is the Cartesian product
    over replicated slots, in slot order.
    """
    keys: List[Tuple[int, ...]] = []

    def expand(position: int, prefix: Tuple[int, ...]) -> None:
        if position == len(base_key):
            keys.append(prefix)
            return
        slot = base_key[position]
        if slot is AttributeMark.REPLICATE:
            for bucket in range(int(shares[position])):
                expand(position + 1, prefix + (bucket,))
        else:
            expand(position + 1, prefix + (int(slot),))

    expand(0, ())
    return keys


class ResidualRouter:
    """Maps a tuple's heavy-hitter signature to the residuals that must receive it."""

    def __init__(self, plan: JoinPlan):
        self.plan = plan
        self.heavy_attributes: Dict[str, Tuple[str, ...]] = {
            r.name: plan.catalog.heavy_attributes_of(r) for r in plan.spec.relations
        }
        self.heavy_values: Dict[str, frozenset] = {
            a: frozenset(plan.catalog.values(a)) for a in plan.catalog.attributes()
        }
        self._routes: Dict[str, Dict[Tuple[Optional[str], ...], Tuple[int, ...]]] = {}
        for relation in plan.spec.relations:
            attributes = self.heavy_attributes[relation.name]
            routes: Dict[Tuple[Optional[str], ...], set] = {}
            for assignment, residual_id in plan.routing.items():
                routes.setdefault(assignment.projection(attributes), set()).add(residual_id)
            self._routes[relation.name] = {s: tuple(sorted(ids)) for s, ids in routes.items()}

    def signature(self, record: TupleRecord) -> Tuple[Optional[str], ...]:
        schema = self.plan.spec.relation(record.relation)
        signature = []
        for attribute in self.heavy_attributes[record.relation]:
            value = record.values[schema.index_of(attribute)]
            signature.append(value if value in self.heavy_values[attribute] else None)
        return tuple(signature)

    def classify(self, record: TupleRecord) -> Tuple[int, ...]:
        if record.relation not in self._routes:
            raise UnknownRelationError(f"Unknown relation '{record.relation}'", context={"relation": record.relation})
        return self._routes[record.relation].get(self.signature(record), ())


def classify(record: TupleRecord, plan: JoinPlan) -> Tuple[int, ...]:
    return ResidualRouter(plan).classify(record)


class TupleMapper:
    """Turns tuples into (reducer key, payload) pairs under a join plan."""

    def __init__(self, plan: JoinPlan, hashes: HashFamily):
        self.plan = plan
        self.hashes = hashes
        self.router = ResidualRouter(plan)

    def mark_attributes(self, relation: str, residual: ResidualPlan) -> Dict[str, AttributeMark]:
        """Marks for every attribute of the join: h/r for join-key slots, 1 otherwise."""
        schema = self.plan.spec.relation(relation)
        joinkey = set(residual.joinkey)
        marks: Dict[str, AttributeMark] = {}
        for attribute in self.plan.spec.attribute_universe:
            if attribute not in joinkey:
                marks[attribute] = AttributeMark.ONE
            elif schema.contains(attribute):
                marks[attribute] = AttributeMark.HASH
            else:
                marks[attribute] = AttributeMark.REPLICATE
        return marks

    def keys_for(self, record: TupleRecord, residual: ResidualPlan) -> List[KeyVector]:
        schema = self.plan.spec.relation(record.relation)
        marks = self.mark_attributes(record.relation, residual)
        joinkey = residual.joinkey
        shares = [residual.shares.integer_share(a) for a in joinkey]
        base: List[Union[int, AttributeMark]] = []
        for attribute, share in zip(joinkey, shares):
            if marks[attribute] is AttributeMark.HASH:
                base.append(self.hashes.bucket(attribute, record.values[schema.index_of(attribute)], share))
            else:
                base.append(AttributeMark.REPLICATE)
        return [KeyVector(residual.residual_id, tuple(zip(joinkey, key))) for key in recursive_keys(base, shares)]

    def classify(self, record: TupleRecord) -> Tuple[int, ...]:
        return self.router.classify(record)

    def map_tuple(self, record: TupleRecord, row_id: int = 0) -> List[Tuple[KeyVector, Payload]]:
        record.validate(self.plan.spec.relation(record.relation))
        payload = Payload(record.relation, row_id, record.values)
        pairs: List[Tuple[KeyVector, Payload]] = []
        for residual_id in self.classify(record):
            for key in self.keys_for(record, self.plan.residual(residual_id)):
                pairs.append((key, payload))
        return pairs

    def prime_hashes(self, store: TupleStore) -> None:
        for relation in self.plan.spec.relations:
            frame = store.frame(relation.name)
            for attribute in relation.attributes:
                self.hashes.prime(attribute, frame[attribute])

    def map_store(self, store: TupleStore) -> Iterator[Tuple[KeyVector, Payload]]:
        self.prime_hashes(store)
        for relation in self.plan.spec.relations:
            for row_id, values in enumerate(store.frame(relation.name).itertuples(index=False, name=None)):
                yield from self.map_tuple(TupleRecord(relation.name, tuple(values)), row_id)


def map_tuple(record: TupleRecord, plan: JoinPlan, hashes: HashFamily, row_id: int = 0) -> List[Tuple[KeyVector, Payload]]:
    return TupleMapper(plan, hashes).map_tuple(record, row_id)


def write_spill(pairs: Iterable[Tuple[KeyVector, Payload]], path: Path) -> int:
    """Write emitted pairs as TSV: residual id, key slots, relation, row id, values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        for key, payload in pairs:
            slots = ",".join(f"{a}={i}" for a, i in key.slots)
            writer.writerow([key.residual_id, slots, payload.relation, payload.row_id, *payload.values])
            written += 1
    return written
