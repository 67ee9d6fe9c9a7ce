#!/usr/bin/env python3
"""
Tests for join specs, dominance and the tuple store
"""

import itertools
import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from joins.join_model import (
    JoinSpec,
    RelationSchema,
    TupleRecord,
    TupleStore,
    TypeAssignment,
    chain_spec,
    cyclic_symmetric_spec,
    dominated_attributes,
    validate_spec,
)
from utils.error_handler import DataFormatError, SpecValidationError, UnknownRelationError


def three_way_spec() -> JoinSpec:
    return JoinSpec((
        RelationSchema("R", ("A", "B")),
        RelationSchema("S", ("B", "E", "C")),
        RelationSchema("T", ("C", "D")),
    ))


class TestValidateSpec(unittest.TestCase):
    """Structural checks on join specs"""

    def test_minimal_connected_join(self):
        spec = JoinSpec((RelationSchema("R", ("A", "B")), RelationSchema("S", ("B", "C"))))
        self.assertIs(validate_spec(spec), spec)

    def test_disconnected_join_rejected(self):
        spec = JoinSpec((RelationSchema("R", ("A", "B")), RelationSchema("S", ("C", "D"))))
        with self.assertRaises(SpecValidationError) as ctx:
            validate_spec(spec)
        self.assertIn("disconnected", ctx.exception.message)

    def test_duplicate_attribute_rejected(self):
        spec = JoinSpec((RelationSchema("R", ("A", "A")), RelationSchema("S", ("A", "C"))))
        with self.assertRaises(SpecValidationError):
            validate_spec(spec)

    def test_single_relation_rejected(self):
        with self.assertRaises(SpecValidationError):
            validate_spec(JoinSpec((RelationSchema("R", ("A", "B")),)))

    def test_duplicate_relation_name_rejected(self):
        spec = JoinSpec((RelationSchema("R", ("A", "B")), RelationSchema("R", ("B", "C"))))
        with self.assertRaises(SpecValidationError):
            validate_spec(spec)

    def test_negative_size_rejected(self):
        spec = JoinSpec((RelationSchema("R", ("A", "B"), -1), RelationSchema("S", ("B", "C"))))
        with self.assertRaises(SpecValidationError):
            validate_spec(spec)


class TestDominance(unittest.TestCase):
    """Dominated attributes, iterated to a fixpoint"""

    def test_chain_ends_dominated(self):
        spec = JoinSpec((
            RelationSchema("R", ("A", "B")),
            RelationSchema("S", ("B", "C")),
            RelationSchema("T", ("C", "D")),
        ))
        self.assertEqual(dominated_attributes(spec, spec.attribute_universe), {"A", "D"})

    def test_cycle_has_no_dominated_attribute(self):
        spec = cyclic_symmetric_spec(3, 2, [1, 1, 1])
        self.assertEqual(dominated_attributes(spec, spec.attribute_universe), frozenset())

    def test_pinning_exposes_new_dominance(self):
        spec = three_way_spec()
        active = [a for a in spec.attribute_universe if a != "B"]
        self.assertEqual(dominated_attributes(spec, active), {"D", "E"})

    def test_all_active_three_way(self):
        spec = three_way_spec()
        self.assertEqual(dominated_attributes(spec, spec.attribute_universe), {"A", "D", "E"})

    def test_identical_incidence_keeps_smaller_name(self):
        spec = JoinSpec((RelationSchema("R", ("A", "B", "X")), RelationSchema("S", ("A", "B", "Y"))))
        dominated = dominated_attributes(spec, ["A", "B"])
        self.assertEqual(dominated, {"B"})

    def test_deterministic(self):
        spec = three_way_spec()
        first = dominated_attributes(spec, spec.attribute_universe)
        for _ in range(5):
            self.assertEqual(dominated_attributes(spec, spec.attribute_universe), first)

    def test_adding_an_attribute_never_shrinks_the_dominated_set(self):
        specs = [
            three_way_spec(),
            chain_spec([1, 1, 1, 1]),
            cyclic_symmetric_spec(4, 2, [1, 1, 1, 1]),
            JoinSpec((RelationSchema("R", ("A", "B", "X")), RelationSchema("S", ("A", "B", "Y")))),
        ]
        for spec in specs:
            universe = spec.attribute_universe
            for size in range(len(universe) + 1):
                for active in itertools.combinations(universe, size):
                    before = dominated_attributes(spec, active)
                    for extra in universe:
                        if extra in active:
                            continue
                        with self.subTest(join=spec.name, active=active, extra=extra):
                            self.assertLessEqual(before, dominated_attributes(spec, active + (extra,)))


class TestJoinSpec(unittest.TestCase):
    """Spec accessors and serialization"""

    def test_attribute_universe_first_appearance(self):
        self.assertEqual(three_way_spec().attribute_universe, ("A", "B", "E", "C", "D"))

    def test_unknown_relation(self):
        with self.assertRaises(UnknownRelationError):
            three_way_spec().relation("Q")

    def test_shared_attributes(self):
        self.assertEqual(three_way_spec().shared_attributes("S", "T"), ("C",))

    def test_save_and_load(self):
        spec = chain_spec([10, 20, 30])
        with tempfile.TemporaryDirectory() as tmp:
            path = spec.save(Path(tmp) / "chain.json")
            loaded = JoinSpec.load(path)
        self.assertEqual(loaded, spec)
        self.assertEqual(loaded.declared_sizes(), {"R1": 10, "R2": 20, "R3": 30})

    def test_load_malformed(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text("{\"relations\": [{\"name\": \"R\"}]}", encoding="utf-8")
            with self.assertRaises(SpecValidationError):
                JoinSpec.load(path)

    def test_chain_spec_layout(self):
        spec = chain_spec([1, 1, 1, 1])
        self.assertEqual([r.attributes for r in spec.relations],
                         [("A0", "A1"), ("A1", "A2"), ("A2", "A3"), ("A3", "A4")])

    def test_cyclic_symmetric_triangle(self):
        spec = cyclic_symmetric_spec(3, 2, [5, 6, 7])
        self.assertEqual([r.attributes for r in spec.relations], [("X1", "X2"), ("X2", "X3"), ("X3", "X1")])

    def test_cyclic_symmetric_single_attribute_is_disconnected(self):
        with self.assertRaises(SpecValidationError):
            cyclic_symmetric_spec(4, 1, [1, 1, 1, 1])

    def test_cyclic_symmetric_d_too_large(self):
        with self.assertRaises(SpecValidationError):
            cyclic_symmetric_spec(3, 3, [1, 1, 1])


class TestTypeAssignment(unittest.TestCase):
    """Combinations of types"""

    def test_label_and_heavy_attributes(self):
        assignment = TypeAssignment.of({"B": "b1", "C": None}, order=["B", "C"])
        self.assertEqual(assignment.label(), "B=b1")
        self.assertEqual(assignment.heavy_attributes(), ("B",))
        self.assertEqual(assignment.heavy_count, 1)

    def test_ordinary_label(self):
        self.assertEqual(TypeAssignment.of({"B": None}).label(), "ordinary")

    def test_projection_of_missing_attribute_is_ordinary(self):
        assignment = TypeAssignment.of({"B": "b1"})
        self.assertEqual(assignment.projection(["B", "C"]), ("b1", None))


class TestTupleStore(unittest.TestCase):
    """In-memory relation frames"""

    def test_from_rows(self):
        spec = three_way_spec()
        store = TupleStore.from_rows(spec, {"R": [(1, 2), (3, 4)], "T": [("x", "y")]})
        self.assertEqual(store.sizes(), {"R": 2, "S": 0, "T": 1})
        self.assertEqual(list(store.records("R"))[0], TupleRecord("R", ("1", "2")))

    def test_arity_mismatch(self):
        with self.assertRaises(DataFormatError):
            TupleStore.from_rows(three_way_spec(), {"R": [("1", "2", "3")]})

    def test_record_validation(self):
        schema = RelationSchema("R", ("A", "B"))
        with self.assertRaises(DataFormatError):
            TupleRecord("R", ("1",)).validate(schema)


if __name__ == "__main__":
    unittest.main()
