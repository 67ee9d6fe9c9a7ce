#!/usr/bin/env python3
"""
Tests for closed-form costs, cross-checked against the numeric share solver
"""

import math
import os
import sys
import unittest

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from joins.closed_forms import (
    chain_arbitrary_cost,
    chain_cost,
    chain_equal_cost,
    naive_two_way_cost,
    subchain_lengths,
    symmetric_cost,
    symmetric_orbits,
    symmetric_shares,
    two_way_lower_bound,
)
from joins.cost_model import build_generic_cost, specialize_cost
from joins.join_model import TypeAssignment, chain_spec, cyclic_symmetric_spec
from joins.share_solver import solve_shares
from utils.error_handler import SpecValidationError, UnsupportedClosedFormError

RANDOM_INSTANCES = 20
MAX_DRAWS = 5000


def numeric_cost(spec, sizes, k) -> float:
    expr = specialize_cost(build_generic_cost(spec), TypeAssignment(), dict(zip(spec.relation_names, sizes)), spec)
    return solve_shares(expr, k).real_cost


def feasible_draws(rng: np.random.RandomState, n: int, accept):
    """Yield integer size vectors in [1, 10] until enough are accepted."""
    accepted = 0
    for _ in range(MAX_DRAWS):
        sizes = [int(v) for v in rng.randint(1, 11, size=n)]
        if accept(sizes):
            accepted += 1
            yield sizes
            if accepted == RANDOM_INSTANCES:
                return


class TestTwoWay(unittest.TestCase):
    """Heavy part of a 2-way join"""

    def test_lower_bound(self):
        self.assertAlmostEqual(two_way_lower_bound(100, 100, 16), 800.0)

    def test_naive(self):
        self.assertEqual(naive_two_way_cost(100, 100, 16), 1700)
        self.assertEqual(naive_two_way_cost(100, 10, 1), 110)

    def test_lower_bound_matches_solver(self):
        spec = chain_spec([1000, 100])
        # heavy A1 leaves shares on A0 and A2 only
        assignment = TypeAssignment.of({"A1": "b"})
        expr = specialize_cost(build_generic_cost(spec), assignment, {"R1": 1000, "R2": 100}, spec)
        solved = solve_shares(expr, 100).real_cost
        self.assertAlmostEqual(solved / two_way_lower_bound(1000, 100, 100), 1.0, places=7)


class TestChainClosedForm(unittest.TestCase):
    """Chains of arbitrary sizes"""

    def test_four_relation_chain(self):
        result = chain_arbitrary_cost([16, 1, 16, 1], 16)
        self.assertAlmostEqual(result.cost, 136.0)
        self.assertAlmostEqual(result.shares["A1"], 4.0)
        self.assertAlmostEqual(result.shares["A2"], 1.0)
        self.assertAlmostEqual(result.shares["A3"], 4.0)
        self.assertTrue(result.feasible)
        self.assertEqual(result.method, "closed_form")

    def test_matches_solver_on_known_instance(self):
        self.assertAlmostEqual(numeric_cost(chain_spec([16, 1, 16, 1]), [16, 1, 16, 1], 16), 136.0, places=5)

    def test_two_relation_chain(self):
        self.assertAlmostEqual(chain_cost([7, 9], 50), 16.0)

    def test_odd_chain_uses_solver(self):
        result = chain_arbitrary_cost([5, 5, 5], 9)
        self.assertEqual(result.method, "numeric")
        self.assertAlmostEqual(result.cost, 35.0, places=5)

    def test_random_even_chains(self):
        rng = np.random.RandomState(11)
        k = 4096
        checked = 0
        for n in (4, 6):
            for sizes in feasible_draws(rng, n, lambda s: chain_arbitrary_cost(s, k).feasible):
                closed = chain_arbitrary_cost(sizes, k).cost
                self.assertAlmostEqual(numeric_cost(chain_spec(sizes), sizes, k) / closed, 1.0, places=6)
                checked += 1
        self.assertEqual(checked, 2 * RANDOM_INSTANCES)


class TestChainEqualSizes(unittest.TestCase):
    """Chains of equal-size relations split at heavy attributes"""

    def test_subchain_lengths(self):
        self.assertEqual(subchain_lengths(6, [2]), [2, 4])
        self.assertEqual(subchain_lengths(8, [4]), [4, 4])
        self.assertEqual(subchain_lengths(5, []), [5])

    def test_invalid_positions(self):
        with self.assertRaises(SpecValidationError):
            subchain_lengths(4, [4])
        with self.assertRaises(SpecValidationError):
            subchain_lengths(4, [2, 2])

    def test_two_equal_subchains(self):
        k, r = 256.0, 10.0
        result = chain_equal_cost(8, r, [4], k)
        self.assertEqual(result.subchain_lengths, [4, 4])
        for part in result.k_parts:
            self.assertAlmostEqual(part, math.sqrt(k))
        self.assertAlmostEqual(result.cost, 8 * r * k ** 0.25)

    def test_two_relation_piece_takes_no_budget(self):
        k, r = 64.0, 3.0
        result = chain_equal_cost(6, r, [2], k)
        self.assertEqual(result.subchain_lengths, [2, 4])
        self.assertAlmostEqual(result.k_parts[0], 1.0)
        self.assertAlmostEqual(result.k_parts[1], k)
        self.assertAlmostEqual(result.cost, 2 * r + 4 * r * math.sqrt(k))

    def test_no_heavy_hitter_matches_arbitrary_chain(self):
        self.assertAlmostEqual(chain_equal_cost(6, 3, [], 64).cost, 288.0)
        self.assertAlmostEqual(chain_cost([3] * 6, 64), 288.0)

    def test_odd_subchain_rejected(self):
        with self.assertRaises(UnsupportedClosedFormError):
            chain_equal_cost(5, 1.0, [], 16)


class TestSymmetricJoins(unittest.TestCase):
    """Cyclic symmetric joins"""

    def test_orbits(self):
        self.assertEqual(symmetric_orbits(4, 2), [[0, 2], [1, 3]])
        self.assertEqual(symmetric_orbits(5, 3), [[0, 1, 2, 3, 4]])

    def test_triangle(self):
        result = symmetric_shares(3, 2, [2, 1, 4], 64)
        self.assertAlmostEqual(result.cost, 24.0)
        self.assertAlmostEqual(result.shares["X1"], 8.0)
        self.assertAlmostEqual(result.shares["X2"], 2.0)
        self.assertAlmostEqual(result.shares["X3"], 4.0)

    def test_rank_deficient_system(self):
        result = symmetric_shares(4, 2, [2, 1, 2, 1], 64)
        self.assertAlmostEqual(result.cost, 48.0)
        self.assertTrue(result.feasible)
        for share in result.shares.values():
            self.assertAlmostEqual(share, math.sqrt(8))

    def test_equal_sizes(self):
        for n, d in ((3, 2), (4, 2), (5, 3), (6, 4)):
            self.assertAlmostEqual(symmetric_cost(n, d, [7] * n, 100) / (n * 7 * 100 ** (1 - d / n)), 1.0)

    def test_invalid_degree(self):
        with self.assertRaises(SpecValidationError):
            symmetric_cost(3, 3, [1, 1, 1], 8)
        with self.assertRaises(SpecValidationError):
            symmetric_cost(3, 2, [1, 1], 8)

    def _check_random(self, n: int, d: int, seed: int):
        rng = np.random.RandomState(seed)
        k = 4096
        checked = 0
        for sizes in feasible_draws(rng, n, lambda s: symmetric_shares(n, d, s, k).feasible):
            closed = symmetric_shares(n, d, sizes, k)
            self.assertEqual(closed.method, "closed_form")
            solved = numeric_cost(cyclic_symmetric_spec(n, d, sizes), sizes, k)
            self.assertAlmostEqual(solved / closed.cost, 1.0, places=6)
            checked += 1
        self.assertEqual(checked, RANDOM_INSTANCES)

    def test_random_triangles(self):
        self._check_random(3, 2, seed=3)

    def test_random_four_two(self):
        self._check_random(4, 2, seed=4)

    def test_random_five_three(self):
        self._check_random(5, 3, seed=5)


if __name__ == "__main__":
    unittest.main()
