"""Budgeted first-improvement local search.

The engine warms up by measuring the unpatched program (establishing the
fitness baseline every later measurement is divided by), then hill-climbs:
each step mutates the current patch by one neighbourhood move, pushes the
candidate through the fitness gates, and keeps it only on strict
improvement. Compiled artifacts are deduplicated through a byte-exact tabu
store, stagnation triggers a restart from the empty patch, and periodic
empty-patch sentinels expose measurement drift. The step budget defaults
to a coupon-collector bound: enough random draws to have sampled every
mutable line with the configured confidence.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import (
    FitnessRecord,
    GateOutcome,
    GateStatus,
    Ordering,
    compare_fitness,
    evaluate,
)
from .operators import UNIFORM_WEIGHTS, RngHandle, neighbor
from .source_model import Patch, apply_patch, format_patch

__all__ = [
    "SearchSetupError",
    "SearchConfig",
    "TabuStore",
    "WarmupReport",
    "StepRecord",
    "SearchResult",
    "coupon_budget",
    "warm_up",
    "local_search",
    "minify",
]

NEW = "new"
DUPLICATE = "duplicate"


class SearchSetupError(RuntimeError):
    """The target/suite/driver combination cannot support a search."""


def coupon_budget(n_items: int, confidence: float) -> int:
    """Number of uniform random draws needed to sample all ``n_items``
    coupons with probability ``confidence``: the inversion of the coverage
    law P(covered) ~ exp(-N * e^(-t/N)), never less than N."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    steps = math.ceil(n_items * math.log(n_items / math.log(1.0 / confidence)))
    return max(steps, n_items)


@dataclass
class SearchConfig:
    """Engine knobs. ``budget_steps`` overrides the derived coupon budget;
    ``sentinel_every`` = 0 disables drift probes; ``restart_after`` counts
    consecutive non-improving steps before the walk resets to the empty
    patch (the tabu store persists across restarts)."""

    budget_steps: int | None = None
    confidence: float = 0.99
    warmup_count: int = 11
    repeats: int = 11
    seed: int = 0
    restart_after: int = 100
    sentinel_every: int = 0
    drift_tolerance: float = 0.05
    operator_weights: tuple[float, float, float] = UNIFORM_WEIGHTS

    def __post_init__(self):
        if self.budget_steps is not None and self.budget_steps < 1:
            raise ValueError("budget_steps must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.warmup_count < 1:
            raise ValueError("warmup_count must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0.0 < self.drift_tolerance < 1.0:
            raise ValueError("drift_tolerance must be in (0, 1)")
        if self.restart_after < 0 or self.sentinel_every < 0:
            raise ValueError("restart_after and sentinel_every must be >= 0")


class TabuStore:
    """Byte-exact store of every compiled artifact seen so far.

    Candidates are compared only against stored artifacts of equal byte
    length; a byte-identical match is a duplicate and is rejected without
    fitness testing. Artifacts live on disk as <size-in-bytes>/<ordinal>.bin
    and are cached in memory for comparisons.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.duplicate_count = 0
        self._by_size: dict[int, list[bytes]] = {}
        for bucket_dir in sorted(self.root.iterdir()) if self.root.is_dir() else ():
            if bucket_dir.is_dir() and bucket_dir.name.isdigit():
                bucket = self._by_size.setdefault(int(bucket_dir.name), [])
                for entry in sorted(bucket_dir.iterdir()):
                    if entry.suffix == ".bin":
                        bucket.append(entry.read_bytes())

    @property
    def stored_count(self) -> int:
        return sum(len(bucket) for bucket in self._by_size.values())

    def register(self, data: bytes) -> str:
        """Returns ``"duplicate"`` iff a stored artifact of equal length is
        byte-identical; otherwise stores the artifact and returns ``"new"``."""
        bucket = self._by_size.setdefault(len(data), [])
        if any(data == known for known in bucket):
            self.duplicate_count += 1
            return DUPLICATE
        bucket_dir = self.root / str(len(data))
        bucket_dir.mkdir(parents=True, exist_ok=True)
        (bucket_dir / f"{len(bucket):06d}.bin").write_bytes(data)
        bucket.append(data)
        return NEW


@dataclass
class WarmupReport:
    baseline: float
    samples: list[float]

    def as_dict(self) -> dict:
        return {"baseline": self.baseline, "count": len(self.samples),
                "samples": self.samples}


def warm_up(roster, suite, driver, config: SearchConfig) -> WarmupReport:
    """Measure the empty patch ``warmup_count`` times and average the
    summarized metrics into the baseline all later fitness is relative to.
    The individual warm-up fitnesses are kept only in this report; any
    warm-up gate failure means the target itself does not pass its own
    tests, which is fatal."""
    sources = roster.serialize()
    samples = []
    for index in range(config.warmup_count):
        record = evaluate(sources, suite, driver, config.repeats, baseline=None, tabu=None)
        if not record.outcome.ok:
            raise SearchSetupError(
                f"warm-up evaluation {index + 1} failed gate "
                f"{record.outcome.status.value}: {record.outcome.detail} "
                "(the unpatched target must pass its own test suite)")
        samples.append(record.summarized_metric)
    baseline = statistics.fmean(samples)
    if baseline <= 0:
        raise SearchSetupError(
            "warm-up baseline is zero misses; there is nothing to optimize")
    return WarmupReport(baseline=baseline, samples=samples)


@dataclass
class StepRecord:
    step: int
    patch: str
    status: str
    metric: float | None
    rel_fitness: float | None
    elapsed_ms: float
    sentinel: bool

    def as_dict(self) -> dict:
        return {"step": self.step, "patch": self.patch, "status": self.status,
                "metric": self.metric, "rel_fitness": self.rel_fitness,
                "elapsed_ms": self.elapsed_ms, "sentinel": self.sentinel}


@dataclass
class SearchResult:
    best_patch: Patch
    best_fitness: FitnessRecord
    log: list[StepRecord]
    accounting: dict[str, int]
    budget_steps: int
    baseline: float
    sentinel_history: list[tuple[int, float]] = field(default_factory=list)


def _empty_record(baseline: float) -> FitnessRecord:
    # The unpatched program's relative fitness is 1.0 by construction.
    return FitnessRecord(GateOutcome(GateStatus.OK), None, baseline, 1.0)


def local_search(roster, suite, driver, config: SearchConfig, baseline: float,
                 tabu: TabuStore, on_record=None) -> SearchResult:
    """First-improvement hill climbing under a fixed evaluation budget.

    Requires a completed warm-up (its mean is ``baseline``). Every candidate
    is one neighbourhood move away from the current patch and must strictly
    improve on it to be adopted. Sentinel probes re-measure the empty patch
    every ``sentinel_every`` candidate evaluations; they are logged but not
    counted against the budget and never rescale fitness.
    """
    points = len(roster.mutable_points)
    budget = config.budget_steps or coupon_budget(points, config.confidence)
    rng = RngHandle(config.seed)
    empty = Patch.empty()
    empty_rec = _empty_record(baseline)

    # Seed the store with the unpatched artifact so that any candidate
    # compiling to it (interchangeable-line shuffles and friends) is caught.
    tabu.register(driver.compile_target(roster.serialize()).data)

    current_patch, current_rec = empty, empty_rec
    best_patch, best_rec = empty, empty_rec
    accounting = {status.value: 0 for status in GateStatus}
    log: list[StepRecord] = []
    sentinels: list[tuple[int, float]] = []
    stagnation = 0

    def push(record: StepRecord) -> None:
        log.append(record)
        if on_record is not None:
            on_record(record)

    for step in range(1, budget + 1):
        driver.set_search_step(step)
        candidate = neighbor(current_patch, roster, rng, config.operator_weights)
        started = time.perf_counter()
        record = evaluate(apply_patch(roster, candidate), suite, driver,
                          config.repeats, baseline, tabu)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        accounting[record.outcome.status.value] += 1
        push(StepRecord(step, format_patch(candidate, roster),
                        record.outcome.status.value, record.summarized_metric,
                        record.relative_fitness, elapsed_ms, False))

        if record.outcome.ok and record.relative_fitness < best_rec.relative_fitness:
            best_patch, best_rec = candidate, record
        if compare_fitness(record, current_rec) is Ordering.A_BETTER:
            current_patch, current_rec = candidate, record
            stagnation = 0
        else:
            stagnation += 1
            if config.restart_after and stagnation >= config.restart_after:
                current_patch, current_rec = empty, empty_rec
                stagnation = 0

        if config.sentinel_every and step % config.sentinel_every == 0:
            started = time.perf_counter()
            probe = evaluate(roster.serialize(), suite, driver,
                             config.repeats, baseline, tabu=None)
            elapsed_ms = (time.perf_counter() - started) * 1000.0
            push(StepRecord(step, "", probe.outcome.status.value,
                            probe.summarized_metric, probe.relative_fitness,
                            elapsed_ms, True))
            if probe.outcome.ok:
                sentinels.append((step, probe.summarized_metric))

    return SearchResult(best_patch=best_patch, best_fitness=best_rec, log=log,
                        accounting=accounting, budget_steps=budget,
                        baseline=baseline, sentinel_history=sentinels)


def minify(patch: Patch, roster, suite, driver, config: SearchConfig,
           baseline: float, slack: float = 0.0) -> Patch:
    """Greedy backward minification: drop each edit (last to first) and keep
    the removal iff the reduced patch still passes all gates and its
    relative fitness is no more than ``slack`` worse than the current
    working patch's. With the deterministic driver and the default slack of
    0.0 this strips exactly the edits that contribute nothing.

    Minification deliberately bypasses the tabu store: reduced variants may
    coincide with artifacts seen during search and must still be measured.
    """
    full = evaluate(apply_patch(roster, patch), suite, driver,
                    config.repeats, baseline, tabu=None)
    if not full.outcome.ok:
        raise ValueError(
            f"minify requires a patch that passes all gates; got "
            f"{full.outcome.status.value}: {full.outcome.detail}")
    kept = list(patch.edits)
    reference = full.relative_fitness
    for index in reversed(range(len(kept))):
        trial = kept[:index] + kept[index + 1:]
        record = evaluate(apply_patch(roster, Patch(tuple(trial))), suite, driver,
                          config.repeats, baseline, tabu=None)
        if record.outcome.ok and record.relative_fitness <= reference + slack:
            kept = trial
            reference = record.relative_fitness
    return Patch(tuple(kept))
