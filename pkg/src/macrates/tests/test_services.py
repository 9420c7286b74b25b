import copy
import csv
import math
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings

from macrates.capacity import RateVector
from macrates.config import parse_scenario
from macrates.exceptions import ConfigurationError, DomainError, SimulationError
from macrates.services import (
    FileUploadRunner,
    LimitedDurationRunner,
    distance_trace,
    queue_label,
    replication_seed,
    run_file_upload,
    run_limited_duration,
    run_scenario,
    run_stability_probe,
    running_average,
)

HIGH_CHAIN = {"states": [0.003, 2.0], "transition": [[0.5, 0.5], [0.75, 0.25]]}
FLAT_CHAIN = {"states": [1.0], "transition": [[1.0]]}


def scenario(scenario_type, chain=HIGH_CHAIN, alpha=2.0, weights=(1.5, 1.0), **options):
    """Parses a two-user scenario around ``chain`` with the given [scenario] options."""
    raw = {
        "mac": {"num_users": 2, "powers": [1.0, 1.0], "noise": 1.0},
        # A single chain is assigned to both users.
        "fading": {"chains": {"main": copy.deepcopy(chain)}},
        "utility": {"alpha": alpha, "weights": list(weights)},
        "scenario": {"type": scenario_type, **options},
    }
    return parse_scenario(raw, scenario_type)


def read_rows(path):
    """All rows of a CSV file, header included."""
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


class OutputDirMixin:
    """Gives each test a fresh output directory in ``self.out``."""

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class HelperTests(SimpleTestCase):
    """Pure helpers shared by the runners."""

    def test_distance_trace(self):
        """Distances are taken from the running average, not the per-slot rate."""
        distances = distance_trace([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], [0.5, 0.5])
        np.testing.assert_allclose(distances, [math.sqrt(0.5), 0.0, 0.0], atol=1e-15)

    def test_distance_trace_accepts_rate_vectors(self):
        """RateVector records and references are accepted as arrays."""
        records = [RateVector((0.2, 0.4))] * 3
        np.testing.assert_allclose(distance_trace(records, RateVector((0.2, 0.4))), 0.0, atol=1e-15)

    def test_distance_trace_rejects_bad_input(self):
        """Empty records and mismatched lengths raise DomainError."""
        with self.assertRaises(DomainError):
            distance_trace([], [0.5, 0.5])
        with self.assertRaises(DomainError):
            distance_trace([[1.0, 0.0, 0.0]], [0.5, 0.5])

    def test_running_average(self):
        """Cumulative means row by row."""
        np.testing.assert_allclose(running_average(np.array([[2.0], [0.0], [1.0]])), [[2.0], [1.0], [1.0]])

    def test_replication_seeds_are_distinct_and_stable(self):
        """A replication's stream depends only on the root seed and its index."""
        first = np.random.default_rng(replication_seed(5, 0)).random(4)
        again = np.random.default_rng(replication_seed(5, 0)).random(4)
        other = np.random.default_rng(replication_seed(5, 1)).random(4)
        np.testing.assert_array_equal(first, again)
        self.assertFalse(np.array_equal(first, other))

    def test_queue_label(self):
        """Integral gains print without a decimal point."""
        self.assertEqual(queue_label(100.0), "queue_K100")
        self.assertEqual(queue_label(2.5), "queue_K2.5")


class LimitedDurationTests(OutputDirMixin, SimpleTestCase):
    """
    Tests for the limited-duration runner and its CSV output.
    """

    def test_rows_per_policy(self):
        """One row per slot for each policy, in slot order."""
        config = scenario("limited_duration", slots=1000, k_values=[10.0], seed=1)
        metrics = run_limited_duration(config, self.out)
        rows = read_rows(self.out / "limited_duration.csv")
        self.assertEqual(rows[0], ["slot", "policy", "rep", "avg_rate_1", "avg_rate_2", "distance_to_opt"])
        by_policy = {}
        for row in rows[1:]:
            by_policy.setdefault(row[1], []).append(int(row[0]))
        self.assertEqual(set(by_policy), {"greedy", "queue_K10"})
        for slots in by_policy.values():
            self.assertEqual(slots, list(range(1, 1001)))
        self.assertEqual(metrics.policies(), ["greedy", "queue_K10"])

    def test_one_state_greedy_matches_optimum(self):
        """Without fading the greedy average sits on R* from the first slot."""
        config = scenario("limited_duration", chain=FLAT_CHAIN, slots=50, policies=["greedy"])
        metrics = run_limited_duration(config, self.out)
        self.assertLess(metrics.mean_distance("greedy", 1), 1e-4)
        self.assertLess(metrics.mean_distance("greedy", 50), 1e-4)

    def test_queue_rates_stay_in_region(self):
        """Queue-based runs report checkpoint distances and nonnegative averages."""
        config = scenario("limited_duration", slots=300, policies=["queue"], k_values=[1.0, 100.0], seed=4)
        metrics = run_limited_duration(config, self.out)
        summary = metrics.summary()
        self.assertEqual(set(summary["policies"]), {"queue_K1", "queue_K100"})
        self.assertEqual(set(summary["policies"]["queue_K1"]["distance_at"]), {"10", "100"})
        for run in metrics.runs:
            self.assertTrue(np.all(run.average_rates >= 0))
            self.assertGreaterEqual(run.mean_sum_queue, 0.0)
            self.assertEqual(len(run.distances), 300)

    def test_reproducible_across_runs_and_workers(self):
        """Output bytes depend on the seed only, not on reruns or worker count."""
        config = scenario("limited_duration", slots=200, k_values=[10.0], seed=2**64 - 1, replications=3)
        run_limited_duration(config, self.out / "a")
        run_limited_duration(config, self.out / "b")
        run_limited_duration(config, self.out / "c", workers=3)
        reference = (self.out / "a" / "limited_duration.csv").read_bytes()
        self.assertEqual(reference, (self.out / "b" / "limited_duration.csv").read_bytes())
        self.assertEqual(reference, (self.out / "c" / "limited_duration.csv").read_bytes())

    def test_seeds_change_paths(self):
        """Different root seeds give different fading paths."""
        run_limited_duration(scenario("limited_duration", slots=200, policies=["greedy"], seed=1), self.out / "a")
        run_limited_duration(scenario("limited_duration", slots=200, policies=["greedy"], seed=2), self.out / "b")
        self.assertNotEqual(
            (self.out / "a" / "limited_duration.csv").read_bytes(),
            (self.out / "b" / "limited_duration.csv").read_bytes(),
        )

    def test_runner_rejects_other_scenarios(self):
        """A runner refuses a configuration for another scenario."""
        config = scenario("limited_duration", slots=10)
        with self.assertRaises(ConfigurationError):
            FileUploadRunner(config, self.out)


class FileUploadTests(OutputDirMixin, SimpleTestCase):
    """
    Tests for the file-upload runner.
    """

    def test_symmetric_users_finish_together(self):
        """Equal users with equal files complete in the same slot."""
        config = scenario(
            "file_upload",
            chain=FLAT_CHAIN,
            alpha=1.0,
            weights=(1.0, 1.0),
            file_sizes=[1.0],
            policies=["greedy"],
            step_rule="line_search",
        )
        metrics = run_file_upload(config, self.out)
        (run,) = metrics.runs
        self.assertEqual(run.completion, (4, 4))
        for served in run.served:
            self.assertAlmostEqual(served, 1.0, places=12)

    def test_served_amounts_match_file_sizes(self):
        """Delivered amounts add up to each file and both CSVs are written."""
        config = scenario("file_upload", file_sizes=[2.0, [1.0, 3.0]], k_values=[10.0], seed=9)
        metrics = run_file_upload(config, self.out)
        self.assertEqual(metrics.file_sizes(), [(2.0, 2.0), (1.0, 3.0)])
        self.assertEqual(len(metrics.runs), 4)
        for run in metrics.runs:
            with self.subTest(policy=run.policy, size=run.file_size):
                for served, size in zip(run.served, run.file_size):
                    self.assertAlmostEqual(served, size, places=9)
                self.assertTrue(all(t >= 1 for t in run.completion))
                self.assertTrue(math.isfinite(run.utility))

        rows = read_rows(self.out / "file_upload.csv")
        self.assertEqual(
            rows[0],
            ["file_size", "policy", "rep", "completion_1", "completion_2", "upload_rate_1", "upload_rate_2", "utility"],
        )
        self.assertEqual([row[0] for row in rows[1:]], ["2.0", "2.0", "1.0;3.0", "1.0;3.0"])
        summary = read_rows(self.out / "file_upload_summary.csv")
        self.assertEqual(summary[0], ["file_size", "policy", "mean_utility", "utility_gap"])
        self.assertEqual(float(summary[1][3]), 0.0)

    def test_slot_cap(self):
        """Exceeding the slot cap raises with the policy and slot in the diagnostics."""
        config = scenario("file_upload", file_sizes=[1000.0], policies=["greedy"], slot_cap=5)
        with self.assertRaises(SimulationError) as ctx:
            run_file_upload(config, self.out)
        self.assertEqual(ctx.exception.diagnostics["policy"], "greedy")
        self.assertEqual(ctx.exception.diagnostics["slot"], 6)


class StabilityRunTests(OutputDirMixin, SimpleTestCase):
    """
    Tests for the fixed-arrival stability runs.
    """

    CASES = [
        {"name": "inside", "load": 0.5},
        {"name": "outside", "load": 1.5},
        {"name": "idle", "rates": [0.0, 0.0]},
    ]

    def test_inside_outside_and_idle(self):
        """Loads inside the region are stable and loads outside it grow."""
        config = scenario("stability_probe", slots=20_000, seed=3, cases=self.CASES)
        metrics = run_stability_probe(config, self.out)
        (inside,) = metrics.verdicts("inside")
        (outside,) = metrics.verdicts("outside")
        (idle,) = metrics.verdicts("idle")
        self.assertTrue(inside.stable)
        self.assertFalse(outside.stable)
        self.assertTrue(idle.stable)
        self.assertEqual(idle.mean_sum_queue, 0.0)

        runs = {run.case: run for run in metrics.runs}
        self.assertEqual(runs["outside"].subset, (0, 1))
        self.assertGreaterEqual(outside.growth_slope, runs["outside"].growth_floor - 1e-6)
        self.assertIsNotNone(runs["inside"].queue_bound)

        rows = read_rows(self.out / "stability_probe.csv")
        self.assertEqual(rows[0], ["case", "rep", "verdict", "growth_slope", "mean_sum_queue", "drift_slope"])
        self.assertEqual([row[2] for row in rows[1:]], ["stable", "unstable", "stable"])

    def test_boundary_case_is_rejected(self):
        """A load factor of exactly one has no verdict."""
        config = scenario("stability_probe", slots=20_000, cases=[{"name": "edge", "load": 1.0}])
        with self.assertRaises(ConfigurationError):
            run_stability_probe(config, self.out)

    def test_short_runs_are_rejected(self):
        """Runs shorter than the verdict minimum are a configuration error."""
        config = scenario("stability_probe", slots=500, cases=[{"name": "inside", "load": 0.5}])
        with self.assertRaises(ConfigurationError):
            run_stability_probe(config, self.out)

    @override_settings(MACRATES={**settings.MACRATES, "MIN_VERDICT_SLOTS": 100})
    def test_minimum_length_is_configurable(self):
        """The minimum verdict length comes from settings."""
        config = scenario("stability_probe", slots=200, cases=[{"name": "idle", "rates": [0.0, 0.0]}])
        metrics = run_stability_probe(config, self.out)
        self.assertEqual(metrics.summary()["cases"]["idle"]["stable"], 1)


class RunScenarioTests(OutputDirMixin, SimpleTestCase):
    """Dispatch by scenario type."""

    def test_dispatches_by_scenario(self):
        """run_scenario picks the runner named by the configuration."""
        config = scenario("limited_duration", slots=20, policies=["greedy"])
        metrics = run_scenario(config, self.out)
        self.assertEqual(metrics.scenario, "limited_duration")
        self.assertEqual(metrics.csv_path, self.out / "limited_duration.csv")
        self.assertTrue(metrics.csv_path.exists())
        self.assertIsInstance(LimitedDurationRunner(config, self.out).run().summary()["optimum"], list)
