#!/usr/bin/env python3
"""
Tests for tuple classification, attribute marks and key expansion
"""

import os
import sys
import tempfile
import unittest
from collections import Counter
from pathlib import Path

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from joins.hh_stats import HeavyHitterThreshold, detect_heavy_hitters
from joins.join_model import JoinSpec, RelationSchema, TupleRecord, TupleStore
from joins.mapper import AttributeMark, HashFamily, TupleMapper, classify, map_tuple, recursive_keys, write_spill
from joins.planner import JoinPlanner
from utils.config_manager import ConfigManager
from utils.error_handler import DataFormatError, UnknownRelationError


def three_way_fixture():
    spec = JoinSpec((
        RelationSchema("R", ("A", "B")),
        RelationSchema("S", ("B", "E", "C")),
        RelationSchema("T", ("C", "D")),
    ))
    rows_r = [(f"a{i}", "b1") for i in range(10)] + [(f"a{i}", "b2") for i in range(10, 20)]
    rows_r += [("a20", "x"), ("a21", "y")]
    rows_s = [("b1", "e1", "c1"), ("b1", "e2", "z"), ("b2", "e3", "c1"), ("y", "e4", "c1"), ("y", "e5", "z")]
    rows_t = [("c1", f"d{i}") for i in range(10)] + [("z", "d10"), ("w", "d11")]
    store = TupleStore.from_rows(spec, {"R": rows_r, "S": rows_s, "T": rows_t})
    catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(capacity_q=5))
    plan = JoinPlanner(ConfigManager()).plan(spec, store, catalog, k=8)
    return spec, store, plan


class TestRecursiveKeys(unittest.TestCase):
    """Expansion of replicated key slots"""

    def test_replicated_slots(self):
        keys = recursive_keys([1, AttributeMark.REPLICATE, AttributeMark.REPLICATE], [4, 2, 3])
        self.assertEqual(len(keys), 6)
        self.assertEqual(keys[0], (1, 0, 0))
        self.assertEqual(keys[-1], (1, 1, 2))
        self.assertEqual(keys, sorted(keys))

    def test_fixed_key(self):
        self.assertEqual(recursive_keys([2, 0], [3, 5]), [(2, 0)])

    def test_empty_key(self):
        self.assertEqual(recursive_keys([], []), [()])


class TestHashFamily(unittest.TestCase):
    """Seeded per-attribute hashing"""

    def test_deterministic_across_instances(self):
        self.assertEqual(HashFamily(7).bucket("A", "x", 16), HashFamily(7).bucket("A", "x", 16))

    def test_primed_matches_unprimed(self):
        primed = HashFamily(5)
        primed.prime("A", ["x", "y", "z"])
        self.assertEqual(primed.hash_value("A", "y"), HashFamily(5).hash_value("A", "y"))

    def test_share_one_has_single_bucket(self):
        self.assertEqual(HashFamily().bucket("A", "anything", 1), 0)

    def test_buckets_spread(self):
        hashes = HashFamily(11)
        counts = Counter(hashes.bucket("B", f"v{i}", 4) for i in range(1000))
        self.assertEqual(set(counts), {0, 1, 2, 3})
        for count in counts.values():
            self.assertTrue(150 <= count <= 350)

    def test_seed_changes_hash_key(self):
        self.assertNotEqual(HashFamily(1).hash_key("A"), HashFamily(2).hash_key("A"))
        self.assertNotEqual(HashFamily(1).hash_key("A"), HashFamily(1).hash_key("B"))


class TestClassify(unittest.TestCase):
    """Tuples go to every residual whose types they match"""

    @classmethod
    def setUpClass(cls):
        cls.spec, cls.store, cls.plan = three_way_fixture()

    def labels(self, relation, values):
        ids = classify(TupleRecord(relation, values), self.plan)
        return {self.plan.residual(i).label for i in ids}

    def test_heavy_r_tuple(self):
        self.assertEqual(self.labels("R", ("a0", "b1")), {"B=b1", "B=b1,C=c1"})

    def test_ordinary_r_tuple(self):
        self.assertEqual(self.labels("R", ("a20", "x")), {"ordinary", "C=c1"})

    def test_heavy_t_tuple(self):
        self.assertEqual(self.labels("T", ("c1", "d0")), {"C=c1", "B=b1,C=c1", "B=b2,C=c1"})

    def test_s_tuple_with_two_heavy_values(self):
        self.assertEqual(self.labels("S", ("b1", "e1", "c1")), {"B=b1,C=c1"})

    def test_every_tuple_routed(self):
        mapper = TupleMapper(self.plan, HashFamily())
        for record in self.store.all_records():
            self.assertTrue(mapper.classify(record))

    def test_unknown_relation(self):
        with self.assertRaises(UnknownRelationError):
            map_tuple(TupleRecord("Q", ("1",)), self.plan, HashFamily())


class TestTupleMapper(unittest.TestCase):
    """Marks, keys and emitted pairs"""

    @classmethod
    def setUpClass(cls):
        cls.spec, cls.store, cls.plan = three_way_fixture()

    def setUp(self):
        self.mapper = TupleMapper(self.plan, HashFamily(3))

    def test_marks(self):
        for residual in self.plan.residuals:
            joinkey = set(residual.joinkey)
            for relation in self.spec.relations:
                marks = self.mapper.mark_attributes(relation.name, residual)
                self.assertEqual(set(marks), set(self.spec.attribute_universe))
                for attribute, mark in marks.items():
                    if attribute not in joinkey:
                        self.assertIs(mark, AttributeMark.ONE)
                    elif relation.contains(attribute):
                        self.assertIs(mark, AttributeMark.HASH)
                    else:
                        self.assertIs(mark, AttributeMark.REPLICATE)

    def test_heavy_attribute_never_in_joinkey(self):
        for residual in self.plan.residuals:
            for attribute in residual.assignment.heavy_attributes():
                self.assertNotIn(attribute, residual.joinkey)

    def test_key_count_matches_replication(self):
        for residual in self.plan.residuals:
            shares = residual.shares.integer_shares
            for relation in self.spec.relations:
                record = next(self.store.records(relation.name))
                keys = self.mapper.keys_for(record, residual)
                self.assertEqual(len(keys), residual.cost_expr.term(relation.name).replication(shares))
                self.assertEqual(len(set(keys)), len(keys))

    def test_keys_within_grid(self):
        residual = self.plan.residual(0)
        for record in self.store.records("S"):
            for key in self.mapper.keys_for(record, residual):
                for attribute, bucket in key.slots:
                    self.assertTrue(0 <= bucket < residual.shares.integer_share(attribute))

    def test_total_pairs_equal_predicted_cost(self):
        pairs = list(self.mapper.map_store(self.store))
        self.assertEqual(len(pairs), round(self.plan.predicted_cost))
        per_residual = Counter(key.residual_id for key, _ in pairs)
        for residual in self.plan.residuals:
            self.assertEqual(per_residual[residual.residual_id], round(residual.predicted_cost))

    def test_arity_checked(self):
        with self.assertRaises(DataFormatError):
            self.mapper.map_tuple(TupleRecord("R", ("a", "b", "c")))

    def test_spill(self):
        pairs = list(self.mapper.map_store(self.store))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "spill" / "pairs.tsv"
            written = write_spill(pairs, path)
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(written, len(pairs))
        self.assertEqual(len(lines), len(pairs))
        self.assertEqual(lines[0].split("\t")[2], pairs[0][1].relation)


if __name__ == "__main__":
    unittest.main()
