"""
Scenario runners: simulation loops, metrics and CSV emission.

Each runner executes ``config.replications`` independent replications. A
replication draws all of its randomness from ``SeedSequence(seed, spawn_key=(rep,))``,
so results do not depend on the order (or concurrency) in which replications run.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .capacity import RateVector
from .conf import get_setting
from .config import ProbeCase, ScenarioConfig
from .exceptions import ConfigurationError, DomainError, SimulationError
from .fading import substream
from .policies import (
    BlockScheme,
    GreedyPolicy,
    QueueBasedPolicy,
    block_scheme_step,
    drift_constants,
    offline_optimum,
    required_error_bound,
)
from .polymatroid import (
    RankOracle,
    boundary_slack,
    maximize_linear,
    most_violated_subset,
    uniform_margin,
    vertex,
)
from .queueing import (
    ArrivalProcess,
    DriftEstimate,
    RunTrace,
    StabilityVerdict,
    empirical_drift,
    stability_verdict,
    update_queues,
)

logger = logging.getLogger(__name__)

GREEDY = "greedy"


def queue_label(gain: float) -> str:
    return f"queue_K{gain:g}"


def replication_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Root seed sequence of replication ``rep``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),))


def distance_trace(rate_records, reference) -> np.ndarray:
    """
    d(t) = || (1/t) sum_{tau <= t} R(tau) - R* ||_2 for t = 1..T.

    Raises:
        DomainError: for an empty record set or mismatched dimensions.
    """
    records = np.asarray(
        [r.as_array() if isinstance(r, RateVector) else r for r in rate_records], dtype=float
    )
    target = reference.as_array() if isinstance(reference, RateVector) else np.asarray(reference, dtype=float)
    if records.size == 0:
        raise DomainError("distance trace needs at least one rate record")
    if records.ndim != 2 or records.shape[1] != target.size:
        raise DomainError(f"records of shape {records.shape} do not match a reference of length {target.size}")
    return np.linalg.norm(running_average(records) - target, axis=1)


def running_average(records: np.ndarray) -> np.ndarray:
    counts = np.arange(1, records.shape[0] + 1, dtype=float)[:, None]
    return np.cumsum(records, axis=0) / counts


@dataclass
class PolicyRun:
    """One policy's path in one limited-duration replication."""

    policy: str
    rep: int
    average_rates: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    utility: float
    mean_sum_queue: Optional[float] = None
    mean_controller_arrival: Optional[np.ndarray] = None


@dataclass
class UploadRun:
    file_size: Tuple[float, ...]
    policy: str
    rep: int
    completion: Tuple[int, ...]
    served: Tuple[float, ...]
    utility: float

    @property
    def upload_rates(self) -> Tuple[float, ...]:
        return tuple(f / t for f, t in zip(self.file_size, self.completion))


@dataclass
class ProbeRun:
    case: str
    rep: int
    verdict: StabilityVerdict
    drift: DriftEstimate = field(repr=False)
    subset: Tuple[int, ...]
    queue_bound: Optional[float] = None
    growth_floor: Optional[float] = None


@dataclass
class Metrics:
    """Results of one scenario run; every figure is recomputable from ``runs``."""

    scenario: str
    csv_path: Path
    runs: List[Any] = field(default_factory=list)
    optimum: Optional[RateVector] = None
    optimum_utility: Optional[float] = None
    checkpoints: Tuple[int, ...] = ()

    def policies(self) -> List[str]:
        return list(dict.fromkeys(run.policy for run in self.runs if hasattr(run, "policy")))

    def mean_distance(self, policy: str, slot: int) -> float:
        """Replication mean of d(slot), slots counted from 1."""
        values = [run.distances[slot - 1] for run in self.runs if run.policy == policy]
        return float(np.mean(values))

    def mean_utility(self, policy: str, file_size: Optional[Sequence[float]] = None) -> float:
        values = [
            run.utility
            for run in self.runs
            if run.policy == policy and (file_size is None or run.file_size == tuple(file_size))
        ]
        return float(np.mean(values))

    def mean_sum_queue(self, policy: str) -> float:
        return float(np.mean([run.mean_sum_queue for run in self.runs if run.policy == policy]))

    def file_sizes(self) -> List[Tuple[float, ...]]:
        return list(dict.fromkeys(run.file_size for run in self.runs))

    def utility_gaps(self, policy: str) -> Dict[Tuple[float, ...], float]:
        """u(greedy) - u(policy) per file size, averaged over replications."""
        return {
            size: self.mean_utility(GREEDY, size) - self.mean_utility(policy, size)
            for size in self.file_sizes()
        }

    def verdicts(self, case: str) -> List[StabilityVerdict]:
        return [run.verdict for run in self.runs if run.case == case]

    def drift_slopes(self, case: str) -> List[float]:
        return [run.drift.slope for run in self.runs if run.case == case]

    def summary(self) -> Dict[str, Any]:
        """A JSON-friendly digest for logs and the run registry."""
        summary: Dict[str, Any] = {"scenario": self.scenario, "csv": str(self.csv_path)}
        if self.optimum is not None:
            summary["optimum"] = list(self.optimum)
            summary["optimum_utility"] = self.optimum_utility
        if self.scenario == "limited_duration":
            final = {}
            for policy in self.policies():
                runs = [run for run in self.runs if run.policy == policy]
                entry = {
                    "final_distance": float(np.mean([run.distances[-1] for run in runs])),
                    "distance_at": {
                        str(slot): self.mean_distance(policy, slot)
                        for slot in self.checkpoints
                        if slot <= len(runs[0].distances)
                    },
                    "utility": float(np.mean([run.utility for run in runs])),
                }
                if runs[0].mean_sum_queue is not None:
                    entry["mean_sum_queue"] = self.mean_sum_queue(policy)
                    entry["mean_controller_arrival"] = np.mean(
                        [run.mean_controller_arrival for run in runs], axis=0
                    ).tolist()
                final[policy] = entry
            summary["policies"] = final
        elif self.scenario == "file_upload":
            summary["utilities"] = {
                _size_label(size): {policy: self.mean_utility(policy, size) for policy in self.policies()}
                for size in self.file_sizes()
            }
        elif self.scenario == "stability_probe":
            cases = {}
            for case in dict.fromkeys(run.case for run in self.runs):
                verdicts = self.verdicts(case)
                cases[case] = {
                    "stable": sum(v.stable for v in verdicts),
                    "replications": len(verdicts),
                    "mean_growth_slope": float(np.mean([v.growth_slope for v in verdicts])),
                    "mean_drift_slope": float(np.mean(self.drift_slopes(case))),
                }
            summary["cases"] = cases
        return summary


def _size_label(size: Sequence[float]) -> str:
    if len(set(size)) == 1:
        return repr(float(size[0]))
    return ";".join(repr(float(f)) for f in size)


def _floats(values) -> List[float]:
    return [float(v) for v in np.asarray(values).tolist()]


class ScenarioRunner:
    """
    Base class of the scenario runners.

    Subclasses implement ``_prepare`` (shared, deterministic work such as the
    offline optimum), ``_replicate`` (one replication) and ``_write``.
    """

    scenario = ""

    def __init__(self, config: ScenarioConfig, out_dir: Union[Path, str], workers: int = 1):
        if config.scenario != self.scenario:
            raise ConfigurationError(
                f"scenario: {type(self).__name__} cannot run a {config.scenario!r} configuration"
            )
        self.config = config
        self.out_dir = Path(out_dir)
        self.workers = max(int(workers), 1)
        self.csv_path = self.out_dir / f"{self.scenario}.csv"

    def run(self) -> Metrics:
        config = self.config
        logger.info(
            f"Starting {self.scenario} with seed={config.seed}, replications={config.replications}, "
            f"users={config.num_users}."
        )
        metrics = Metrics(self.scenario, self.csv_path)
        self._prepare(metrics)

        reps = range(config.replications)
        if self.workers > 1 and config.replications > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._replicate_logged, reps))
        else:
            results = [self._replicate_logged(rep) for rep in reps]
        for runs in results:
            metrics.runs.extend(runs)

        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._write(metrics)
        logger.info(f"Finished {self.scenario}; results written to {self.csv_path}.")
        return metrics

    def _replicate_logged(self, rep: int) -> list:
        runs = self._replicate(rep)
        logger.info(f"Replication {rep + 1}/{self.config.replications} of {self.scenario} done.")
        return runs

    def _prepare(self, metrics: Metrics) -> None:
        pass

    def _replicate(self, rep: int) -> list:
        raise NotImplementedError

    def _write(self, metrics: Metrics) -> None:
        raise NotImplementedError

    def _open_csv(self, path: Path):
        return path.open("w", newline="", encoding="utf-8")


class LimitedDurationRunner(ScenarioRunner):
    """
    Greedy and queue-based policies over ``slots`` slots of the same fading path,
    compared through the distance of their running average rates to R*.
    """

    scenario = "limited_duration"

    def _prepare(self, metrics: Metrics) -> None:
        config = self.config
        self.optimum = offline_optimum(config.mac, config.fading(), config.utility, step_rule=config.step_rule)
        metrics.optimum = self.optimum
        metrics.optimum_utility = config.utility.value(self.optimum.as_array())
        metrics.checkpoints = config.checkpoints
        self.greedy = GreedyPolicy(config.mac, config.utility, step_rule=config.step_rule)
        self.queue_based = QueueBasedPolicy(config.mac)

    def _replicate(self, rep: int) -> List[PolicyRun]:
        config = self.config
        root = replication_seed(config.seed, rep)
        runs = []
        if GREEDY in config.policies:
            rates = self._greedy_path(config.fading(substream(root, 0)))
            runs.append(self._policy_run(GREEDY, rep, rates))
        if "queue" in config.policies:
            for k, gain in enumerate(config.k_values):
                rng = np.random.default_rng(substream(root, 1, k))
                rates, trace, mean_arrival = self._queue_path(
                    config.fading(substream(root, 0)), config.controller(gain), rng
                )
                runs.append(
                    self._policy_run(
                        queue_label(gain),
                        rep,
                        rates,
                        mean_sum_queue=float(trace.mean_queues().sum()),
                        mean_controller_arrival=mean_arrival,
                    )
                )
        return runs

    def _policy_run(self, policy: str, rep: int, rates: np.ndarray, **extra) -> PolicyRun:
        averages = running_average(rates)
        return PolicyRun(
            policy=policy,
            rep=rep,
            average_rates=averages,
            distances=distance_trace(rates, self.optimum),
            utility=self.config.utility.value(averages[-1]),
            **extra,
        )

    def _greedy_path(self, fading) -> np.ndarray:
        rates = np.empty((self.config.slots, self.config.num_users))
        for slot in range(self.config.slots):
            rates[slot] = self.greedy.allocate(fading.state)
            fading.step()
        return rates

    def _queue_path(self, fading, controller, rng) -> Tuple[np.ndarray, RunTrace, np.ndarray]:
        num_users = self.config.num_users
        queues = np.zeros(num_users)
        trace = RunTrace(num_users)
        rates = np.empty((self.config.slots, num_users))
        mean_arrivals = np.zeros(num_users)
        for slot in range(self.config.slots):
            mean_arrivals += controller.mean_arrivals(queues)
            arrivals = controller.arrivals(queues, rng)
            service = self.queue_based.allocate(queues, fading.state)
            rates[slot] = np.minimum(queues + arrivals, service)
            trace.append(slot, fading.state_id, queues, rates[slot], arrivals)
            queues = update_queues(queues, arrivals, service)
            fading.step()
        return rates, trace, mean_arrivals / self.config.slots

    def _write(self, metrics: Metrics) -> None:
        num_users = self.config.num_users
        header = (
            ["slot", "policy", "rep"]
            + [f"avg_rate_{i + 1}" for i in range(num_users)]
            + ["distance_to_opt"]
        )
        with self._open_csv(self.csv_path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for run in metrics.runs:
                for slot, (averages, distance) in enumerate(
                    zip(run.average_rates.tolist(), run.distances.tolist()), start=1
                ):
                    writer.writerow([slot, run.policy, run.rep, *averages, distance])


class FileUploadRunner(ScenarioRunner):
    """
    Every user uploads a file of finite size; a run ends when all files are
    delivered. Greedy serves the remaining file directly, the queue-based policy
    buffers it through its congestion controller.
    """

    scenario = "file_upload"

    def _prepare(self, metrics: Metrics) -> None:
        config = self.config
        self.greedy = GreedyPolicy(config.mac, config.utility, step_rule=config.step_rule)
        self.queue_based = QueueBasedPolicy(config.mac)
        self.summary_path = self.out_dir / f"{self.scenario}_summary.csv"

    def _replicate(self, rep: int) -> List[UploadRun]:
        config = self.config
        root = replication_seed(config.seed, rep)
        runs = []
        for index, size in enumerate(config.file_sizes):
            files = np.asarray(size, dtype=float)
            if GREEDY in config.policies:
                completion, served = self._greedy_upload(files, config.fading(substream(root, index, 0)))
                runs.append(self._upload_run(size, GREEDY, rep, completion, served))
            if "queue" in config.policies:
                for k, gain in enumerate(config.k_values):
                    rng = np.random.default_rng(substream(root, index, 1, k))
                    completion, served = self._queue_upload(
                        files, config.fading(substream(root, index, 0)), config.controller(gain), rng
                    )
                    runs.append(self._upload_run(size, queue_label(gain), rep, completion, served))
        return runs

    def _upload_run(self, size, policy: str, rep: int, completion: np.ndarray, served: List[List[float]]) -> UploadRun:
        completion = tuple(int(t) for t in completion)
        rates = np.asarray(size, dtype=float) / np.asarray(completion, dtype=float)
        return UploadRun(
            file_size=tuple(size),
            policy=policy,
            rep=rep,
            completion=completion,
            served=tuple(math.fsum(amounts) for amounts in served),
            utility=self.config.utility.value(rates),
        )

    def _check_cap(self, slot: int, policy: str, remaining: np.ndarray) -> None:
        if slot > self.config.slot_cap:
            raise SimulationError(
                f"{policy} upload did not finish within {self.config.slot_cap} slots",
                {"policy": policy, "slot": slot, "remaining": remaining.tolist()},
            )

    def _greedy_upload(self, files: np.ndarray, fading) -> Tuple[np.ndarray, List[List[float]]]:
        num_users = self.config.num_users
        remaining = files.copy()
        completion = np.zeros(num_users, dtype=int)
        served: List[List[float]] = [[] for _ in range(num_users)]
        slot = 0
        while np.any(remaining > 0):
            slot += 1
            self._check_cap(slot, GREEDY, remaining)
            active = tuple(int(i) for i in np.flatnonzero(remaining > 0))
            rates = self.greedy.allocate(fading.state, active)
            for i in active:
                if rates[i] >= remaining[i]:
                    served[i].append(float(remaining[i]))
                    remaining[i] = 0.0
                    completion[i] = slot
                elif rates[i] > 0:
                    served[i].append(float(rates[i]))
                    remaining[i] -= rates[i]
            fading.step()
        return completion, served

    def _queue_upload(self, files: np.ndarray, fading, controller, rng) -> Tuple[np.ndarray, List[List[float]]]:
        num_users = self.config.num_users
        unbuffered = files.copy()
        queues = np.zeros(num_users)
        completion = np.zeros(num_users, dtype=int)
        served: List[List[float]] = [[] for _ in range(num_users)]
        slot = 0
        while np.any(completion == 0):
            slot += 1
            self._check_cap(slot, queue_label(controller.gain), unbuffered + queues)
            offered = controller.arrivals(queues, rng)
            arrivals = np.where(offered >= unbuffered, unbuffered, offered)
            unbuffered = np.where(offered >= unbuffered, 0.0, unbuffered - offered)
            service = self.queue_based.allocate(queues, fading.state)
            delivered = np.minimum(queues + arrivals, service)
            queues = update_queues(queues, arrivals, service)
            for i in range(num_users):
                if completion[i]:
                    continue
                if delivered[i] > 0:
                    served[i].append(float(delivered[i]))
                if unbuffered[i] == 0 and queues[i] == 0:
                    completion[i] = slot
            fading.step()
        return completion, served

    def _write(self, metrics: Metrics) -> None:
        num_users = self.config.num_users
        header = (
            ["file_size", "policy", "rep"]
            + [f"completion_{i + 1}" for i in range(num_users)]
            + [f"upload_rate_{i + 1}" for i in range(num_users)]
            + ["utility"]
        )
        with self._open_csv(self.csv_path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for run in metrics.runs:
                writer.writerow(
                    [_size_label(run.file_size), run.policy, run.rep, *run.completion, *_floats(run.upload_rates), run.utility]
                )

        with self._open_csv(self.summary_path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["file_size", "policy", "mean_utility", "utility_gap"])
            for size in metrics.file_sizes():
                baseline = metrics.mean_utility(GREEDY, size) if GREEDY in metrics.policies() else None
                for policy in metrics.policies():
                    mean = metrics.mean_utility(policy, size)
                    gap = "" if baseline is None else baseline - mean
                    writer.writerow([_size_label(size), policy, mean, gap])


@dataclass(frozen=True)
class _ProbePlan:
    """Resolved arrival vector and server of one stability-probe case."""

    case: ProbeCase
    rates: np.ndarray
    inside: bool
    scheme: Optional[BlockScheme] = None
    server: Optional[np.ndarray] = None
    subset: Tuple[int, ...] = ()
    queue_bound: Optional[float] = None
    growth_floor: Optional[float] = None


class StabilityProbeRunner(ScenarioRunner):
    """
    Arrival vectors inside the throughput region are served by the block scheme;
    vectors outside it by a fixed-rate server at the region point maximizing
    sum_i lambda_i R_i. Each path gets a stability verdict and a drift regression.
    """

    scenario = "stability_probe"

    def _prepare(self, metrics: Metrics) -> None:
        config = self.config
        if config.slots < get_setting("MIN_VERDICT_SLOTS"):
            raise ConfigurationError(
                f"scenario.slots: the stability probe needs at least {get_setting('MIN_VERDICT_SLOTS')} slots"
            )
        self.oracle = RankOracle.for_fading(config.mac, config.fading())
        self.plans = [self._plan(case) for case in config.cases]
        self.horizon = config.drift_horizon or config.block_length

    def _arrivals(self, rates: np.ndarray) -> ArrivalProcess:
        config = self.config
        return ArrivalProcess(config.arrivals, tuple(rates), config.arrival_probability, config.arrival_spread)

    def _plan(self, case: ProbeCase) -> _ProbePlan:
        config = self.config
        if case.rates is not None:
            rates = np.asarray(case.rates, dtype=float)
        else:
            rates = case.load * vertex(self.oracle, range(config.num_users)).rates.as_array()

        slack = boundary_slack(self.oracle, rates)
        if abs(slack) <= get_setting("BOUNDARY_TOL"):
            raise ConfigurationError(
                f"scenario.cases.{case.name}: arrival vector {rates.tolist()} lies on the region boundary"
            )
        if slack > 0:
            epsilon = 0.5 * uniform_margin(self.oracle, rates)
            scheme = BlockScheme(
                config.block_length,
                RateVector.from_array(rates + epsilon),
                0.5 * required_error_bound(rates, epsilon),
            )
            constants = drift_constants(scheme, rates, self._arrivals(rates).second_moments)
            logger.info(
                f"Case '{case.name}': inside the region, block rates {np.round(rates + epsilon, 6).tolist()}, "
                f"P_e={scheme.error_prob:.4g}, queue bound {constants.queue_bound:.4g}."
            )
            return _ProbePlan(case, rates, True, scheme=scheme, queue_bound=constants.queue_bound)

        subset, excess = most_violated_subset(self.oracle, rates)
        server = maximize_linear(self.oracle, rates).as_array()
        logger.info(
            f"Case '{case.name}': outside the region, users {[i + 1 for i in sorted(subset)]} "
            f"exceed their sum-rate bound by {excess:.6g} nats/slot."
        )
        return _ProbePlan(
            case, rates, False, server=server, subset=tuple(sorted(subset)), growth_floor=excess
        )

    def _replicate(self, rep: int) -> List[ProbeRun]:
        config = self.config
        root = replication_seed(config.seed, rep)
        runs = []
        for index, plan in enumerate(self.plans):
            fading = config.fading(substream(root, index, 0))
            arrival_rng = np.random.default_rng(substream(root, index, 1))
            if plan.inside:
                decode_rng = np.random.default_rng(substream(root, index, 2))
                trace = self._block_path(plan, fading, arrival_rng, decode_rng)
            else:
                trace = self._fixed_rate_path(plan, fading, arrival_rng)
            subset = plan.subset or None
            verdict = stability_verdict(
                trace, subset, config.slope_threshold, get_setting("MIN_VERDICT_SLOTS")
            )
            drift = empirical_drift(trace, self.horizon, subset)
            runs.append(
                ProbeRun(
                    plan.case.name,
                    rep,
                    verdict,
                    drift,
                    plan.subset,
                    queue_bound=plan.queue_bound,
                    growth_floor=plan.growth_floor,
                )
            )
        return runs

    def _block_path(self, plan: _ProbePlan, fading, arrival_rng, decode_rng) -> RunTrace:
        config = self.config
        process = self._arrivals(plan.rates)
        n = plan.scheme.block_length
        trace = RunTrace(config.num_users)
        block_start = np.zeros(config.num_users)
        buffered = np.zeros(config.num_users)
        zeros = np.zeros(config.num_users)
        for slot in range(config.slots):
            arrivals = process.sample(arrival_rng)
            current = block_start + buffered
            buffered = buffered + arrivals
            if slot % n == n - 1:
                after = block_scheme_step(block_start, buffered, plan.scheme, decode_rng).as_array()
                trace.append(slot, fading.state_id, current, np.maximum(block_start + buffered - after, 0.0), arrivals)
                block_start = after
                buffered = np.zeros(config.num_users)
            else:
                trace.append(slot, fading.state_id, current, zeros, arrivals)
            fading.step()
        return trace

    def _fixed_rate_path(self, plan: _ProbePlan, fading, arrival_rng) -> RunTrace:
        config = self.config
        process = self._arrivals(plan.rates)
        trace = RunTrace(config.num_users)
        queues = np.zeros(config.num_users)
        for slot in range(config.slots):
            arrivals = process.sample(arrival_rng)
            served = np.minimum(queues + arrivals, plan.server)
            trace.append(slot, fading.state_id, queues, served, arrivals)
            queues = update_queues(queues, arrivals, plan.server)
            fading.step()
        return trace

    def _write(self, metrics: Metrics) -> None:
        with self._open_csv(self.csv_path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["case", "rep", "verdict", "growth_slope", "mean_sum_queue", "drift_slope"])
            for run in metrics.runs:
                writer.writerow(
                    [
                        run.case,
                        run.rep,
                        run.verdict.label,
                        run.verdict.growth_slope,
                        run.verdict.mean_sum_queue,
                        run.drift.slope,
                    ]
                )


RUNNERS: Dict[str, Callable[..., ScenarioRunner]] = {
    LimitedDurationRunner.scenario: LimitedDurationRunner,
    FileUploadRunner.scenario: FileUploadRunner,
    StabilityProbeRunner.scenario: StabilityProbeRunner,
}


def run_scenario(config: ScenarioConfig, out_dir: Union[Path, str], workers: int = 1) -> Metrics:
    return RUNNERS[config.scenario](config, out_dir, workers=workers).run()


def run_limited_duration(config: ScenarioConfig, out_dir: Union[Path, str], workers: int = 1) -> Metrics:
    return LimitedDurationRunner(config, out_dir, workers=workers).run()


def run_file_upload(config: ScenarioConfig, out_dir: Union[Path, str], workers: int = 1) -> Metrics:
    return FileUploadRunner(config, out_dir, workers=workers).run()


def run_stability_probe(config: ScenarioConfig, out_dir: Union[Path, str], workers: int = 1) -> Metrics:
    return StabilityProbeRunner(config, out_dir, workers=workers).run()
