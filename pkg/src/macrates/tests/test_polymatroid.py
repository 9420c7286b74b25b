import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from macrates.capacity import ChannelState, MacConfig, RateVector
from macrates.exceptions import DomainError, SolverError
from macrates.polymatroid import (
    MAX_SCAN_ARITY,
    RankOracle,
    boundary_slack,
    contains,
    maximize_concave,
    maximize_linear,
    most_violated_subset,
    uniform_margin,
    validate_polymatroid,
    vertex,
)
from macrates.utility import AlphaFairUtility

F1 = 0.5 * math.log(2.0)
F12 = 0.5 * math.log(3.0)


def symmetric_oracle():
    """Rank oracle of the two-user unit channel."""
    return RankOracle.for_channel(MacConfig(2, (1.0, 1.0), 1.0), ChannelState((1.0, 1.0)))


def random_oracle(rng, num_users):
    """Gaussian MAC oracle with powers and gains drawn from [0.1, 5]."""
    powers = tuple(rng.uniform(0.1, 5.0, num_users))
    gains = tuple(rng.uniform(0.1, 5.0, num_users))
    return RankOracle.for_channel(MacConfig(num_users, powers, 1.0), ChannelState(gains))


def grid_optimum(oracle, utility, step=1e-4):
    """
    Brute-force maximizer of an increasing utility over a two-user region. Such a
    maximizer lies on the dominant face, so the grid runs along that segment.
    """
    total = oracle({0, 1})
    low = total - oracle({1})
    r1 = np.append(np.arange(low, oracle({0}), step), oracle({0}))
    candidates = np.column_stack((r1, total - r1))
    values = [utility.value(point) for point in candidates]
    return candidates[int(np.argmax(values))]


class RankOracleTests(SimpleTestCase):
    """Set-function oracles and their memo."""

    def test_memoized_and_normalized(self):
        """The empty set is zero and each subset is evaluated once, whatever its ordering."""
        calls = []
        oracle = RankOracle(2, lambda s: calls.append(s) or float(len(s)))
        self.assertEqual(oracle([]), 0.0)
        self.assertEqual(oracle({0, 1}), 2.0)
        self.assertEqual(oracle((1, 0)), 2.0)
        self.assertEqual(len(calls), 1)

    def test_out_of_range(self):
        """Users outside the arity raise DomainError."""
        with self.assertRaises(DomainError):
            symmetric_oracle()({2})

    def test_restrict(self):
        """A restricted oracle renumbers the kept users in the given order."""
        oracle = RankOracle.for_channel(MacConfig(3, (1.0, 2.0, 3.0), 1.0), ChannelState((1.0, 1.0, 1.0)))
        restricted = oracle.restrict([2, 0])
        self.assertEqual(restricted.arity, 2)
        self.assertEqual(restricted({0}), oracle({2}))
        self.assertEqual(restricted({0, 1}), oracle({0, 2}))


class ValidatePolymatroidTests(SimpleTestCase):
    """
    Tests for the exhaustive polymatroid checker.
    """

    def test_gaussian_rank_is_valid(self):
        """Random Gaussian MAC ranks are polymatroids."""
        rng = np.random.default_rng(1)
        for _ in range(5):
            self.assertTrue(validate_polymatroid(random_oracle(rng, 3)).ok)

    def test_squared_cardinality_violates_submodularity(self):
        """|S|^2 is reported against the pair of singletons."""
        report = validate_polymatroid(RankOracle(2, lambda s: float(len(s)) ** 2))
        self.assertFalse(report.ok)
        pairs = {(v.kind, v.first, v.second) for v in report.violations}
        self.assertIn(("submodularity", frozenset({0}), frozenset({1})), pairs)

    def test_zero_function_is_valid(self):
        """The zero function passes every check."""
        self.assertTrue(validate_polymatroid(RankOracle(3, lambda s: 0.0)).ok)

    def test_monotonicity_violation(self):
        """A function that drops on the full set is flagged as non-monotone."""
        report = validate_polymatroid(RankOracle(2, lambda s: 1.0 if len(s) == 1 else 0.5))
        self.assertIn("monotonicity", {v.kind for v in report.violations})

    def test_arity_limit(self):
        """Exhaustive validation refuses more than ten users."""
        with self.assertRaises(DomainError):
            validate_polymatroid(RankOracle(11, lambda s: float(len(s))))


class ContainsTests(SimpleTestCase):
    """Region membership."""

    def test_examples(self):
        """The origin and a vertex are inside; a point past the sum constraint and a negative point are not."""
        oracle = symmetric_oracle()
        self.assertTrue(contains(oracle, RateVector((0.0, 0.0))))
        self.assertTrue(contains(oracle, (F1, F12 - F1)))
        self.assertFalse(contains(oracle, (0.35, 0.35)))
        self.assertFalse(contains(oracle, (-0.1, 0.0)))

    def test_negative_coordinates_ignore_tolerance(self):
        """The tolerance loosens subset constraints only, never nonnegativity."""
        oracle = symmetric_oracle()
        self.assertFalse(contains(oracle, (-1e-12, 0.0)))
        self.assertFalse(contains(oracle, (0.1, -1e-12), tol=1e-6))
        self.assertTrue(contains(oracle, (F1 + 1e-12, F12 - F1)))

    def test_dimension_mismatch(self):
        """A point with the wrong number of coordinates raises."""
        with self.assertRaises(DomainError):
            contains(symmetric_oracle(), (0.1, 0.1, 0.1))


class VertexTests(SimpleTestCase):
    """Marginal allocations along a user ordering."""

    def test_examples(self):
        """Both orderings of the symmetric channel and the single-user case."""
        oracle = symmetric_oracle()
        self.assertTrue(vertex(oracle, (0, 1)).rates.is_close(RateVector((F1, F12 - F1))))
        self.assertTrue(vertex(oracle, (1, 0)).rates.is_close(RateVector((F12 - F1, F1))))
        single = RankOracle.for_channel(MacConfig(1, (1.0,), 1.0), ChannelState((1.0,)))
        self.assertAlmostEqual(vertex(single, (0,)).rates[0], F1, places=12)

    def test_non_permutation(self):
        """A repeated user is not an ordering."""
        with self.assertRaises(DomainError):
            vertex(symmetric_oracle(), (0, 0))

    def test_vertices_lie_on_dominant_face(self):
        """All 24 vertices of a four-user region sum to f(N) and are feasible."""
        oracle = random_oracle(np.random.default_rng(4), 4)
        for order in itertools.permutations(range(4)):
            point = vertex(oracle, order).rates
            self.assertAlmostEqual(math.fsum(point), oracle(range(4)), places=12)
            self.assertTrue(contains(oracle, point))


class MaximizeLinearTests(SimpleTestCase):
    """
    Tests for linear maximization over the region by the greedy vertex.
    """

    def test_examples(self):
        """The heavier weight goes first and ties go to the lower index."""
        oracle = symmetric_oracle()
        best = maximize_linear(oracle, (2.0, 1.0))
        self.assertTrue(best.is_close(RateVector((F1, F12 - F1))))
        self.assertAlmostEqual(2 * best[0] + best[1], F1 + F12, places=12)
        self.assertTrue(maximize_linear(oracle, (1.0, 1.0)).is_close(best))
        self.assertTrue(maximize_linear(oracle, (0.0, 1.0)).is_close(RateVector((F12 - F1, F1))))

    def test_negative_weight(self):
        """Negative weights are outside the solver's domain."""
        with self.assertRaises(DomainError):
            maximize_linear(symmetric_oracle(), (1.0, -1.0))

    def test_matches_vertex_enumeration(self):
        """The greedy vertex beats every other vertex on 50 random three-user regions."""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            oracle = random_oracle(rng, 3)
            weights = rng.uniform(0.0, 1.0, 3)
            best = maximize_linear(oracle, weights)
            objectives = [
                float(weights @ vertex(oracle, order).rates.as_array())
                for order in itertools.permutations(range(3))
            ]
            self.assertAlmostEqual(float(weights @ best.as_array()), max(objectives), delta=1e-9)

    def test_scale_invariance(self):
        """Rescaling the weights returns the same vertex."""
        oracle = random_oracle(np.random.default_rng(8), 4)
        weights = np.array([0.3, 2.0, 0.3, 1.1])
        base = maximize_linear(oracle, weights)
        for scale in (1e-3, 0.5, 10.0, 1e6):
            self.assertEqual(maximize_linear(oracle, scale * weights), base)


class MaximizeConcaveTests(SimpleTestCase):
    """
    Tests for the Frank-Wolfe solver over polymatroid regions.
    """

    def test_symmetric_log_utility(self):
        """Proportional fairness splits the symmetric sum rate."""
        solution = maximize_concave(symmetric_oracle(), AlphaFairUtility(1.0, (1.0, 1.0)), step_rule="line_search")
        self.assertTrue(solution.converged)
        np.testing.assert_allclose(solution.rates.as_array(), [F12 / 2, F12 / 2], atol=1e-6)

    def test_open_loop_symmetry(self):
        """The default step rule reaches the same split within its looser accuracy."""
        solution = maximize_concave(symmetric_oracle(), AlphaFairUtility(1.0, (1.0, 1.0)))
        self.assertAlmostEqual(solution.rates[0], solution.rates[1], delta=1e-4)
        self.assertAlmostEqual(solution.rates[0], 0.274653, delta=1e-3)

    def test_linear_utility_matches_maximize_linear(self):
        """A linear utility converges to the linear solver's vertex."""
        oracle = symmetric_oracle()
        solution = maximize_concave(oracle, AlphaFairUtility.linear((2.0, 1.0)))
        self.assertTrue(solution.converged)
        self.assertTrue(solution.rates.is_close(maximize_linear(oracle, (2.0, 1.0)), tol=1e-6))

    def test_output_is_feasible_with_reported_gap(self):
        """The returned point is feasible and a converged gap respects the tolerance."""
        oracle = random_oracle(np.random.default_rng(3), 3)
        solution = maximize_concave(oracle, AlphaFairUtility(2.0, (1.0, 2.0, 3.0)), tol=1e-4)
        self.assertTrue(contains(oracle, solution.rates))
        if solution.converged:
            self.assertLessEqual(solution.gap, 1e-4)

    def test_matches_grid_search(self):
        """Ten random two-user instances agree with a 1e-4 grid to 1e-3."""
        rng = np.random.default_rng(11)
        alphas = (0.5, 1.0, 2.0)
        for k in range(10):
            oracle = random_oracle(rng, 2)
            utility = AlphaFairUtility(alphas[k % 3], tuple(rng.uniform(0.5, 2.0, 2)))
            with self.subTest(instance=k, alpha=utility.alpha):
                solution = maximize_concave(oracle, utility)
                expected = grid_optimum(oracle, utility)
                np.testing.assert_allclose(solution.rates.as_array(), expected, atol=1e-3)

    def test_step_rules_agree(self):
        """Open-loop and line-search steps find the same optimum."""
        oracle = symmetric_oracle()
        utility = AlphaFairUtility(2.0, (1.5, 1.0))
        open_loop = maximize_concave(oracle, utility).rates.as_array()
        line_search = maximize_concave(oracle, utility, step_rule="line_search").rates.as_array()
        np.testing.assert_allclose(open_loop, line_search, atol=1e-3)

    def test_zero_coordinate_start_is_blended(self):
        """A start vertex with a zero coordinate is still solved for log utility."""
        # User 2 adds nothing once user 1 is decoded, so the identity vertex has a zero coordinate.
        oracle = RankOracle(2, lambda s: 1.0)
        solution = maximize_concave(oracle, AlphaFairUtility(1.0, (1.0, 1.0)), step_rule="line_search")
        np.testing.assert_allclose(solution.rates.as_array(), [0.5, 0.5], atol=1e-6)

    def test_nonfinite_gradient(self):
        """A NaN gradient aborts with the failing iteration in the diagnostics."""
        class Broken:
            def value(self, rates):
                return 0.0

            def gradient(self, rates):
                return np.array([np.nan, 1.0])

        with self.assertRaises(SolverError) as ctx:
            maximize_concave(symmetric_oracle(), Broken())
        self.assertIn("iteration", ctx.exception.diagnostics)

    def test_invalid_arguments(self):
        """A zero tolerance and an unknown step rule are rejected."""
        utility = AlphaFairUtility(1.0, (1.0, 1.0))
        with self.assertRaises(DomainError):
            maximize_concave(symmetric_oracle(), utility, tol=0.0)
        with self.assertRaises(DomainError):
            maximize_concave(symmetric_oracle(), utility, step_rule="armijo")


class MarginTests(SimpleTestCase):
    """
    Tests for distances of a rate point to the region boundary.
    """

    def test_uniform_margin(self):
        """The margin is the largest equal increment that stays feasible."""
        oracle = symmetric_oracle()
        self.assertAlmostEqual(uniform_margin(oracle, (0.0, 0.0)), F12 / 2, places=12)
        inside = (0.1, 0.1)
        eps = uniform_margin(oracle, inside)
        self.assertTrue(contains(oracle, (0.1 + eps, 0.1 + eps), tol=1e-9))
        self.assertFalse(contains(oracle, (0.1 + eps + 1e-6, 0.1 + eps + 1e-6)))
        self.assertLess(uniform_margin(oracle, (0.4, 0.4)), 0)

    def test_boundary_slack_of_vertex_is_zero(self):
        """Vertices lie on the boundary."""
        oracle = symmetric_oracle()
        self.assertAlmostEqual(boundary_slack(oracle, vertex(oracle, (0, 1)).rates), 0.0, places=12)

    def test_scans_reject_wide_oracles(self):
        """Subset scans refuse oracles above the scan arity."""
        wide = RankOracle(MAX_SCAN_ARITY + 1, lambda s: float(len(s)))
        origin = np.zeros(MAX_SCAN_ARITY + 1)
        for scan in (boundary_slack, most_violated_subset, uniform_margin, contains):
            with self.subTest(scan=scan.__name__), self.assertRaises(DomainError):
                scan(wide, origin)

    def test_most_violated_subset(self):
        """The worst subset and its excess for points beyond a singleton and the sum constraint."""
        oracle = symmetric_oracle()
        subset, excess = most_violated_subset(oracle, (0.5, 0.1))
        self.assertEqual(subset, frozenset({0}))
        self.assertAlmostEqual(excess, 0.5 - F1, places=12)
        subset, excess = most_violated_subset(oracle, (0.3, 0.3))
        self.assertEqual(subset, frozenset({0, 1}))
        self.assertAlmostEqual(excess, 0.6 - F12, places=12)
