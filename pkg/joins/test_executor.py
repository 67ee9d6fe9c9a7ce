#!/usr/bin/env python3
"""
Tests for the simulated shuffle: local joins, exactly-once output,
communication accounting and the naive 2-way baseline
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from joins.closed_forms import two_way_lower_bound
from joins.executor import Reducer, ResidualStats, ShuffleSimulator, ShuffleStats, local_join, naive_2way, run_job
from joins.hh_stats import HeavyHitterCatalog, HeavyHitterThreshold, detect_heavy_hitters
from joins.join_model import JoinSpec, RelationSchema, TupleStore, chain_spec, cyclic_symmetric_spec
from joins.mapper import HashFamily, KeyVector, Payload
from joins.oracle import brute_force_join
from joins.planner import ALGORITHM_SHARES, JoinPlanner
from utils.config_manager import ConfigManager
from utils.error_handler import (
    CommunicationMismatchError,
    DuplicateOutputError,
    ReducerOverflowError,
    SpecValidationError,
)
from workbench.generator import (
    PLANTED,
    UNIFORM,
    AttributeDistribution,
    DataGenerator,
    GeneratorConfig,
    PlantedValue,
    RelationGeneratorConfig,
)


def two_way_spec() -> JoinSpec:
    return JoinSpec((RelationSchema("R", ("A", "B")), RelationSchema("S", ("B", "C"))))


def three_way_spec() -> JoinSpec:
    return JoinSpec((
        RelationSchema("R", ("A", "B")),
        RelationSchema("S", ("B", "E", "C")),
        RelationSchema("T", ("C", "D")),
    ))


def three_way_store(spec: JoinSpec) -> TupleStore:
    rows_r = [(f"a{i}", "b1") for i in range(10)] + [(f"a{i}", "b2") for i in range(10, 20)]
    rows_r += [("a20", "x"), ("a21", "y")]
    rows_s = [("b1", "e1", "c1"), ("b1", "e2", "z"), ("b2", "e3", "c1"), ("y", "e4", "c1"), ("y", "e5", "z")]
    rows_t = [("c1", f"d{i}") for i in range(10)] + [("z", "d10"), ("w", "d11")]
    return TupleStore.from_rows(spec, {"R": rows_r, "S": rows_s, "T": rows_t})


def skewed_two_way(rows: int) -> TupleStore:
    """Every tuple of R and S carries the same join value b."""
    return TupleStore.from_rows(two_way_spec(), {
        "R": [(f"a{i}", "b") for i in range(rows)],
        "S": [("b", f"c{j}") for j in range(rows)],
    })


def planner() -> JoinPlanner:
    return JoinPlanner(ConfigManager())


def random_store(spec: JoinSpec, seed: int) -> TupleStore:
    """Small instance over a narrow domain with planted h-tokens on some attributes."""
    rng = np.random.RandomState(seed)
    relations = []
    for schema in spec.relations:
        attributes = {}
        for attribute in schema.attributes:
            planted = []
            if rng.rand() < 0.6:
                planted = [PlantedValue(f"h{j}", float(rng.uniform(0.12, 0.25))) for j in range(rng.randint(1, 3))]
            attributes[attribute] = AttributeDistribution(
                kind=PLANTED if planted else UNIFORM,
                domain_size=int(rng.randint(8, 16)),
                planted=planted,
            )
        relations.append(RelationGeneratorConfig(schema.name, int(rng.randint(20, 61)), attributes))
    generator = DataGenerator(GeneratorConfig(relations=relations, seed=seed))
    store = TupleStore(spec)
    for index, schema in enumerate(spec.relations):
        store.add_relation(schema.name, generator.generate_frame(index, schema))
    return store


def uniform_store(spec: JoinSpec, tuples: int, domain: int, seed: int) -> TupleStore:
    """Every attribute uniform over a domain much larger than any reducer's share."""
    relations = [
        RelationGeneratorConfig(
            schema.name, tuples, {a: AttributeDistribution(UNIFORM, domain_size=domain) for a in schema.attributes}
        )
        for schema in spec.relations
    ]
    generator = DataGenerator(GeneratorConfig(relations=relations, seed=seed))
    store = TupleStore(spec)
    for index, schema in enumerate(spec.relations):
        store.add_relation(schema.name, generator.generate_frame(index, schema))
    return store


def mild_chain_store(spec: JoinSpec) -> TupleStore:
    """4-relation chain where b on A1 and d on A3 each occur twice in both relations holding them."""
    return TupleStore.from_rows(spec, {
        "R1": [(f"x{i}", f"v{i}") for i in range(200)] + [("xb1", "b"), ("xb2", "b")],
        "R2": [(f"v{i}", f"w{i}") for i in range(200)] + [("b", "wb1"), ("b", "wb2")],
        "R3": [(f"w{i}", f"y{i}") for i in range(200)] + [("wb1", "d"), ("wb2", "d")],
        "R4": [(f"y{i}", f"z{i}") for i in range(200)] + [("d", "z1"), ("d", "z2")],
    })


class TestLocalJoin(unittest.TestCase):
    """Hash-join cascade inside one reducer"""

    def test_two_way(self):
        reducer = Reducer(KeyVector(0, ()))
        reducer.add(Payload("R", 0, ("a1", "b")))
        reducer.add(Payload("R", 1, ("a2", "b")))
        reducer.add(Payload("R", 2, ("a3", "q")))
        reducer.add(Payload("S", 0, ("b", "c1")))
        outputs = local_join(reducer, two_way_spec())
        self.assertEqual(sorted(row for row, _ in outputs), [("a1", "b", "c1"), ("a2", "b", "c1")])
        self.assertEqual(sorted(p for _, p in outputs), [(("R", 0), ("S", 0)), (("R", 1), ("S", 0))])

    def test_missing_relation_gives_nothing(self):
        reducer = Reducer(KeyVector(0, ()))
        reducer.add(Payload("R", 0, ("a1", "b")))
        self.assertEqual(local_join(reducer, two_way_spec()), [])

    def test_attributes_sorted_by_name(self):
        spec = JoinSpec((RelationSchema("R", ("Z", "M")), RelationSchema("S", ("M", "A"))))
        reducer = Reducer(KeyVector(0, ()))
        reducer.add(Payload("R", 0, ("z", "m")))
        reducer.add(Payload("S", 0, ("m", "a")))
        self.assertEqual(local_join(reducer, spec)[0][0], ("a", "m", "z"))


class TestRunJob(unittest.TestCase):
    """Simulated jobs over the 3-way fixture"""

    def setUp(self):
        self.spec = three_way_spec()
        self.store = three_way_store(self.spec)
        catalog = detect_heavy_hitters(self.store, self.spec, HeavyHitterThreshold(capacity_q=5))
        self.plan = planner().plan(self.spec, self.store, catalog, k=8)

    def test_matches_oracle(self):
        result, stats = ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily())
        expected = brute_force_join(self.store, self.spec)
        self.assertEqual(result.as_canonical(), expected)
        self.assertEqual(stats.output_count, len(expected))
        self.assertGreater(len(expected), 0)

    def test_communication_identity(self):
        _, stats = ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily())
        for residual in self.plan.residuals:
            self.assertEqual(stats.residuals[residual.residual_id].measured_pairs, round(residual.predicted_cost))
        self.assertEqual(stats.total_pairs, round(self.plan.predicted_cost))
        self.assertEqual(stats.reducer_count, self.plan.total_reducers)

    def test_mismatch_detected(self):
        self.plan.residuals[0].predicted_cost += 5
        with self.assertRaises(CommunicationMismatchError):
            ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily())

    def test_shuffle_only(self):
        result, stats = ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily(), compute_output=False)
        self.assertEqual(len(result), 0)
        self.assertEqual(stats.output_count, 0)
        self.assertEqual(stats.total_pairs, round(self.plan.predicted_cost))

    def test_parallel_reduce(self):
        sequential, _ = ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily())
        parallel, _ = ShuffleSimulator(self.spec, workers=4).run_job(self.store, self.plan, HashFamily())
        self.assertEqual(sequential.rows, parallel.rows)

    def test_memory_cap(self):
        with self.assertRaises(ReducerOverflowError):
            ShuffleSimulator(self.spec, memory_cap=1).run_job(self.store, self.plan, HashFamily())

    def test_module_wrapper(self):
        result, _ = run_job(self.store, self.plan, HashFamily(), config=ConfigManager())
        self.assertEqual(result.as_canonical(), brute_force_join(self.store, self.spec))

    def test_stats_export(self):
        _, stats = ShuffleSimulator(self.spec).run_job(self.store, self.plan, HashFamily())
        exported = stats.to_dict()
        self.assertEqual(len(exported["residuals"]), len(self.plan.residuals))
        self.assertEqual(sum(exported["load_histogram"]["counts"]), self.plan.total_reducers)


class TestExactlyOnce(unittest.TestCase):
    """Duplicate detection and edge cases"""

    def test_duplicate_output_detected(self):
        spec = two_way_spec()
        reducers = {}
        for bucket in (0, 1):
            key = KeyVector(0, (("B", bucket),))
            reducers[key] = Reducer(key)
            reducers[key].add(Payload("R", 0, ("a", "b")))
            reducers[key].add(Payload("S", 0, ("b", "c")))
        stats = ShuffleStats(residuals={0: ResidualStats(0, "ordinary", 2, 2, 4.0)})
        with self.assertRaises(DuplicateOutputError):
            ShuffleSimulator(spec)._reduce(reducers, stats)

    def test_empty_relation(self):
        spec = two_way_spec()
        store = TupleStore.from_rows(spec, {"R": [(f"a{i}", "b") for i in range(30)], "S": []})
        catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(capacity_q=5))
        plan = planner().plan(spec, store, catalog, k=4)
        result, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily())
        self.assertEqual(len(result), 0)
        self.assertEqual(result.as_canonical(), brute_force_join(store, spec))
        self.assertEqual(stats.total_pairs, round(plan.predicted_cost))

    def test_bag_semantics(self):
        spec = two_way_spec()
        store = TupleStore.from_rows(spec, {"R": [("a", "b"), ("a", "b")], "S": [("b", "c")]})
        plan = planner().plan(spec, store, None, k=2)
        result, _ = ShuffleSimulator(spec).run_job(store, plan, HashFamily())
        self.assertEqual(result.rows, [("a", "b", "c"), ("a", "b", "c")])
        self.assertEqual(len(result.as_canonical().distinct()), 1)


class TestSkewedTwoWay(unittest.TestCase):
    """A single heavy join value shared by every tuple"""

    @classmethod
    def setUpClass(cls):
        cls.spec = two_way_spec()
        cls.store = skewed_two_way(10_000)
        cls.catalog = detect_heavy_hitters(cls.store, cls.spec, HeavyHitterThreshold(tau=0.5))

    def heavy_stats(self, plan, stats):
        heavy = next(r for r in plan.residuals if r.label == "B=b")
        return heavy, stats.residuals[heavy.residual_id]

    def test_catalog(self):
        self.assertEqual(self.catalog.values("B"), ("b",))

    def test_communication_at_lower_bound(self):
        simulator = ShuffleSimulator(self.spec)
        for k in (4, 16, 64, 256):
            plan = planner().plan(self.spec, self.store, self.catalog, k=k)
            _, stats = simulator.run_job(self.store, plan, HashFamily(), compute_output=False)
            heavy, measured = self.heavy_stats(plan, stats)
            self.assertEqual(heavy.k_int, k)
            self.assertEqual(measured.measured_pairs, 2 * int(np.sqrt(k)) * 10_000)
            bound = two_way_lower_bound(10_000, 10_000, heavy.k_int)
            self.assertAlmostEqual(measured.measured_pairs / bound, 1.0)

            _, naive = simulator.naive_2way(self.store, ["b"], k, HashFamily(), compute_output=False)
            self.assertGreater(naive.residuals[1].measured_pairs, measured.measured_pairs)

    def test_capacity_mode(self):
        plan = planner().plan(self.spec, self.store, self.catalog, q=2000)
        _, stats = ShuffleSimulator(self.spec).run_job(self.store, plan, HashFamily(), compute_output=False)
        heavy, measured = self.heavy_stats(plan, stats)
        self.assertEqual(heavy.k, 100)
        self.assertEqual(heavy.shares.integer_share("A"), 10)
        self.assertEqual(heavy.shares.integer_share("C"), 10)
        self.assertLessEqual(measured.max_load, 3000)


class TestNaiveTwoWay(unittest.TestCase):
    """Partition-and-broadcast baseline"""

    def test_heavy_part_cost(self):
        spec = two_way_spec()
        store = TupleStore.from_rows(spec, {
            "R": [(f"a{i}", "b") for i in range(1000)],
            "S": [("b", f"c{j}") for j in range(100)],
        })
        _, stats = naive_2way(store, spec, ["b"], 10, HashFamily(), compute_output=False, config=ConfigManager())
        self.assertEqual(stats.residuals[1].measured_pairs, 2000)
        _, single = naive_2way(store, spec, ["b"], 1, HashFamily(), compute_output=False, config=ConfigManager())
        self.assertEqual(single.total_pairs, 1100)

    def test_matches_oracle(self):
        spec = two_way_spec()
        rows_r = [(f"a{i}", "b") for i in range(30)] + [(f"a{i}", f"v{i % 5}") for i in range(30, 40)]
        rows_s = [("b", f"c{j}") for j in range(10)] + [(f"v{j % 7}", f"c{j}") for j in range(10, 24)]
        store = TupleStore.from_rows(spec, {"R": rows_r, "S": rows_s})
        result, stats = ShuffleSimulator(spec).naive_2way(store, ["b"], 4, HashFamily())
        self.assertEqual(result.as_canonical(), brute_force_join(store, spec))
        self.assertEqual(stats.residuals[1].measured_pairs, 30 + 4 * 10)

    def test_needs_two_way(self):
        spec = three_way_spec()
        with self.assertRaises(SpecValidationError):
            ShuffleSimulator(spec).naive_2way(three_way_store(spec), ["b1"], 4, HashFamily())


class TestRandomizedOracle(unittest.TestCase):
    """Simulated output equals the brute-force join on random skewed instances"""

    SPECS = {
        "two_way": two_way_spec(),
        "chain": chain_spec([1, 1, 1]),
        "triangle": cyclic_symmetric_spec(3, 2, [1, 1, 1]),
        "three_way": three_way_spec(),
    }

    def test_random_instances(self):
        budgets = (1, 2, 4, 8, 16)
        simulator_planner = planner()
        checked = 0
        for offset, (name, spec) in enumerate(self.SPECS.items()):
            for trial in range(13):
                seed = 1000 * offset + trial
                store = random_store(spec, seed)
                catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(tau=0.1))
                k = budgets[trial % len(budgets)]
                plan = simulator_planner.plan(spec, store, catalog, k=k)
                with self.subTest(join=name, seed=seed, k=k):
                    result, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(seed))
                    self.assertEqual(result.as_canonical(), brute_force_join(store, spec))
                    self.assertEqual(stats.total_pairs, round(plan.predicted_cost))
                checked += 1
        self.assertGreaterEqual(checked, 50)

    def test_random_instances_capacity_mode(self):
        capacities = (10, 25, 60)
        simulator_planner = planner()
        for offset, (name, spec) in enumerate(self.SPECS.items()):
            for trial in range(6):
                seed = 5000 + 1000 * offset + trial
                store = random_store(spec, seed)
                catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(tau=0.1))
                q = capacities[trial % len(capacities)]
                plan = simulator_planner.plan(spec, store, catalog, q=q)
                with self.subTest(join=name, seed=seed, q=q):
                    result, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(seed))
                    self.assertEqual(result.as_canonical(), brute_force_join(store, spec))
                    self.assertEqual(stats.total_pairs, round(plan.predicted_cost))

    def test_merged_residuals_capacity_mode(self):
        two_way = two_way_spec()
        mild_two_way = TupleStore.from_rows(two_way, {
            "R": [(f"a{i}", f"v{i}") for i in range(200)] + [("ax", "b"), ("ay", "b")],
            "S": [(f"v{i}", f"c{i}") for i in range(200)] + [("b", "cx"), ("b", "cy")],
        })
        chain = chain_spec([202, 202, 202, 202])
        cases = [(two_way, mild_two_way, 1), (chain, mild_chain_store(chain), 3)]
        for spec, store, absorbed in cases:
            catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(capacity_q=1))
            plan = planner().plan(spec, store, catalog, q=200)
            with self.subTest(join=spec.name):
                self.assertEqual(len(plan.residuals), 1)
                self.assertEqual(len(plan.residual(0).absorbed), absorbed)
                result, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(11))
                self.assertEqual(result.as_canonical(), brute_force_join(store, spec))
                self.assertEqual(stats.total_pairs, round(plan.predicted_cost))


class TestLoadBalance(unittest.TestCase):
    """Reducer loads on skew-free data stay close to the mean"""

    def test_uniform_two_way(self):
        spec = two_way_spec()
        for seed in (3, 5, 8):
            store = uniform_store(spec, 4000, 50_000, seed)
            plan = planner().plan(spec, store, k=16, algorithm=ALGORITHM_SHARES)
            _, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(seed), compute_output=False)
            with self.subTest(seed=seed):
                self.assertEqual(stats.reducer_count, 16)
                self.assertGreaterEqual(stats.mean_load, 100)
                self.assertLessEqual(stats.max_load, 2 * stats.mean_load)

    def test_uniform_chain(self):
        spec = chain_spec([3000, 3000, 3000])
        store = uniform_store(spec, 3000, 50_000, 13)
        plan = planner().plan(spec, store, HeavyHitterCatalog.empty(), k=16)
        _, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(13), compute_output=False)
        self.assertEqual(stats.reducer_count, 16)
        self.assertGreaterEqual(stats.mean_load, 100)
        self.assertLessEqual(stats.max_load, 2 * stats.mean_load)


class TestDeterminism(unittest.TestCase):
    """Same seeds, same metrics file"""

    def run_once(self, path: Path) -> bytes:
        spec = three_way_spec()
        store = random_store(spec, 4242)
        catalog = detect_heavy_hitters(store, spec, HeavyHitterThreshold(tau=0.1))
        plan = planner().plan(spec, store, catalog, k=8)
        _, stats = ShuffleSimulator(spec).run_job(store, plan, HashFamily(99))
        return stats.save_json(path).read_bytes()

    def test_metrics_byte_identical(self):
        with tempfile.TemporaryDirectory() as tmp:
            first = self.run_once(Path(tmp) / "first.json")
            second = self.run_once(Path(tmp) / "second.json")
        self.assertEqual(first, second)


if __name__ == "__main__":
    unittest.main()
