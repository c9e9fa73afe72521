"""Four-gate fitness evaluation.

A candidate must, in strict order: (1) compile; (1b) not duplicate a
previously compiled artifact (tabu); (2) run without crashing or timing
out on every test case; (3) reproduce the recorded output and exit status
of the original program on every case; and only then (4) earn a metric:
each case is re-run ``repeats`` times, each case's samples are summarized
by their first quartile, and the per-case quartiles are summed. Fitness is
reported relative to the warm-up baseline, lower is better.

Evaluation stops at the first failing case, so a failing candidate never
costs more runs than it needs to be rejected.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .drivers import CompileError
from .stats import quartile1

__all__ = [
    "GateStatus",
    "GateOutcome",
    "TestCase",
    "FitnessRecord",
    "Ordering",
    "SuiteError",
    "load_suite",
    "evaluate",
    "summarize_metric",
    "compare_fitness",
]


class GateStatus(str, Enum):
    COMPILE_ERROR = "compile_error"
    TABU_DUPLICATE = "duplicate"
    RUN_ERROR = "run_error"
    TIMEOUT = "timeout"
    OUTPUT_MISMATCH = "output_mismatch"
    OK = "ok"


@dataclass(frozen=True)
class GateOutcome:
    status: GateStatus
    detail: str = ""
    test_index: int | None = None  # first failing case, for OUTPUT_MISMATCH

    @property
    def ok(self) -> bool:
        return self.status is GateStatus.OK


@dataclass(frozen=True)
class TestCase:
    """One recorded behaviour of the original program. ``input`` is opaque
    to the engine and interpreted by the driver; expected output and exit
    status were recorded by running the original program."""

    id: str
    input: bytes
    expected_output: bytes
    expected_exit: int = 0


@dataclass(frozen=True)
class FitnessRecord:
    outcome: GateOutcome
    metric_samples: dict[str, list[int]] | None = None  # case id -> raw samples
    summarized_metric: float | None = None
    relative_fitness: float | None = None


class Ordering(Enum):
    A_BETTER = "a_better"
    B_BETTER = "b_better"
    EQUAL = "equal"


class SuiteError(ValueError):
    pass


def _decode_field(value, path, case_id, field_name) -> bytes:
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, dict) and set(value) == {"base64"}:
        try:
            return base64.b64decode(value["base64"], validate=True)
        except Exception as exc:
            raise SuiteError(
                f"{path}: case {case_id!r}: bad base64 in {field_name}: {exc}") from exc
    raise SuiteError(
        f"{path}: case {case_id!r}: {field_name} must be a string or {{\"base64\": ...}}")


def load_suite(path) -> list[TestCase]:
    """Load a test suite file: JSON with a ``cases`` list of records
    carrying id, input, expected_output (inline text or base64) and
    expected_exit."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SuiteError(f"cannot read suite file {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SuiteError(f"suite file {p} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("cases"), list):
        raise SuiteError(f"suite file {p} must be an object with a 'cases' list")
    cases = []
    seen = set()
    for record in raw["cases"]:
        case_id = record.get("id")
        if not isinstance(case_id, str) or not case_id:
            raise SuiteError(f"{p}: every case needs a non-empty string id")
        if case_id in seen:
            raise SuiteError(f"{p}: duplicate case id {case_id!r}")
        seen.add(case_id)
        cases.append(TestCase(
            id=case_id,
            input=_decode_field(record.get("input", ""), p, case_id, "input"),
            expected_output=_decode_field(
                record.get("expected_output", ""), p, case_id, "expected_output"),
            expected_exit=int(record.get("expected_exit", 0)),
        ))
    if not cases:
        raise SuiteError(f"suite file {p} has no cases")
    return cases


def summarize_metric(samples) -> float:
    """First quartile of one case's repeated measurements (nearest-rank)."""
    return quartile1(samples)


def evaluate(patched_source, suite, driver, repeats: int,
             baseline: float | None = None, tabu=None) -> FitnessRecord:
    """Run the full gate sequence for one candidate's patched source.

    ``patched_source`` is the per-file text from apply_patch. ``tabu``,
    when given, must expose register(bytes) -> "new" | "duplicate"; the
    check runs on the compiled artifact, before any test execution.
    ``baseline`` (the warm-up mean) turns the summarized metric into a
    relative fitness.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not suite:
        raise ValueError("test suite must be non-empty")

    try:
        artifact = driver.compile_target(patched_source)
    except CompileError as exc:
        return FitnessRecord(GateOutcome(GateStatus.COMPILE_ERROR, exc.detail))

    if tabu is not None and tabu.register(artifact.data) == "duplicate":
        return FitnessRecord(GateOutcome(
            GateStatus.TABU_DUPLICATE,
            "artifact byte-identical to a previously compiled candidate"))

    # Gates 2 and 3: one behaviour run per case, stop at the first failure.
    for index, case in enumerate(suite):
        result = driver.run_test(artifact, case, collect_metric=False)
        if result.timed_out:
            return FitnessRecord(GateOutcome(
                GateStatus.TIMEOUT, f"case {case.id}: {result.detail or 'run timed out'}"))
        if result.exit_status != case.expected_exit and case.expected_exit == 0:
            return FitnessRecord(GateOutcome(
                GateStatus.RUN_ERROR,
                f"case {case.id}: exit status {result.exit_status}"
                + (f" ({result.detail})" if result.detail else "")))
        if result.output != case.expected_output or result.exit_status != case.expected_exit:
            return FitnessRecord(GateOutcome(
                GateStatus.OUTPUT_MISMATCH, f"case {case.id}: output differs",
                test_index=index))

    # Gate 4: dedicated metric repeats. Error-path cases (expected_exit != 0)
    # produce no meaningful counter value and are excluded, mirroring how
    # holdout error cases are excluded from miss-count comparisons.
    samples: dict[str, list[int]] = {}
    for case in suite:
        if case.expected_exit != 0:
            continue
        case_samples = []
        for _ in range(repeats):
            result = driver.run_test(artifact, case, collect_metric=True)
            if result.timed_out:
                return FitnessRecord(GateOutcome(
                    GateStatus.TIMEOUT, f"case {case.id}: timed out collecting metric"))
            if result.metric is None:
                return FitnessRecord(GateOutcome(
                    GateStatus.RUN_ERROR,
                    f"case {case.id}: {result.detail or 'metric missing'}"))
            case_samples.append(result.metric)
        samples[case.id] = case_samples
    if not samples:
        raise ValueError("suite has no cases with expected_exit == 0; no metric to optimize")

    summarized = float(sum(summarize_metric(s) for s in samples.values()))
    relative = summarized / baseline if baseline else None
    return FitnessRecord(GateOutcome(GateStatus.OK), samples, summarized, relative)


def _fitness_key(record: FitnessRecord) -> float:
    if record.relative_fitness is not None:
        return record.relative_fitness
    return record.summarized_metric


def compare_fitness(a: FitnessRecord, b: FitnessRecord) -> Ordering:
    """Priority comparison: any success beats any failure, failures are
    mutually unranked, successes compare by fitness (lower is better)."""
    if a.outcome.ok and not b.outcome.ok:
        return Ordering.A_BETTER
    if b.outcome.ok and not a.outcome.ok:
        return Ordering.B_BETTER
    if not a.outcome.ok:
        return Ordering.EQUAL
    ka, kb = _fitness_key(a), _fitness_key(b)
    if ka < kb:
        return Ordering.A_BETTER
    if kb < ka:
        return Ordering.B_BETTER
    return Ordering.EQUAL
