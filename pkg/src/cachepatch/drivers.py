"""Measurement backends.

Two drivers share one informal interface (``compile_target``, ``run_test``,
``set_search_step``):

* ``SimDriver`` parses the bundled trace DSL ("compilation"), interprets it
  with a cold simulated cache per run, and reports the simulated L1D miss
  count as the metric. It is deterministic unless noise injection is
  configured, which makes the whole pipeline verifiable at desk scale.
* ``ExternalDriver`` wraps a real build/run/measure pipeline through
  subprocesses: a compile command producing an artifact file (whose bytes
  feed the tabu store), a run command executed per test case, and a
  hardware-counter listing parsed for the configured event name.

A driver instance serves one evaluation at a time; the engine owns exactly
one.
"""

from __future__ import annotations

import json
import os
import random
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .cachesim import CacheConfig, LRUCache, simulate_addresses
from .tracelang import (
    AccessLimitExceeded,
    TraceParseError,
    TraceRuntimeError,
    canonical_bytes,
    parse_trace_program,
    run_trace_program,
)

__all__ = [
    "CompileError",
    "CounterParseError",
    "Artifact",
    "RunResult",
    "NoiseConfig",
    "SimDriverConfig",
    "SimDriver",
    "ExternalDriverConfig",
    "ExternalDriver",
    "parse_counter_output",
]


class CompileError(Exception):
    """Candidate failed to compile (or, for the sim driver, to parse)."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class CounterParseError(ValueError):
    pass


@dataclass(frozen=True)
class Artifact:
    """Compiled form of a candidate. ``data`` is the byte string compared by
    the tabu store; ``handle`` is driver-private."""

    data: bytes
    handle: object = None


@dataclass(frozen=True)
class RunResult:
    """Facts about one run. The driver does not judge correctness; gate
    logic compares these fields against the test case's expectations."""

    output: bytes
    exit_status: int
    metric: int | None = None
    timed_out: bool = False
    detail: str = ""


# --- simulator driver --------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    """Optional measurement noise for robustness experiments: multiplicative
    jitter on every metric sample plus a step-keyed drift schedule (each
    entry (step, multiplier) applies from that search step onward)."""

    seed: int
    amplitude: float
    drift_schedule: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ValueError("noise amplitude must be in [0, 1)")
        steps = [step for step, _ in self.drift_schedule]
        if steps != sorted(steps):
            raise ValueError("drift schedule must be sorted by step")


@dataclass(frozen=True)
class SimDriverConfig:
    cache: CacheConfig = field(default_factory=CacheConfig)
    access_limit: int = 1_000_000
    noise: NoiseConfig | None = None

    def __post_init__(self):
        if self.access_limit < 1:
            raise ValueError("access_limit must be >= 1")


def serialize_output(emitted) -> bytes:
    """Observable output encoding: one emitted value per line."""
    if not emitted:
        return b""
    return ("\n".join(str(v) for v in emitted) + "\n").encode("ascii")


class SimDriver:
    """Deterministic measurement backend over the trace DSL.

    Per (artifact, case) the behaviour and the true miss count are
    memoized: a deterministic program re-run yields the same facts, so
    metric repeats replay the memoized ground truth, with noise (when
    configured) applied per sample on top.
    """

    def __init__(self, config: SimDriverConfig):
        self.config = config
        self._behaviour: dict[tuple[bytes, str], RunResult] = {}
        self._metric: dict[tuple[bytes, str], int | None] = {}
        self._search_step = 0
        self._noise_rng = random.Random(config.noise.seed) if config.noise else None

    def set_search_step(self, step: int) -> None:
        self._search_step = step

    def compile_target(self, sources) -> Artifact:
        """'Compilation' for the DSL: parse the concatenated sources; the
        canonical parse-tree serialization doubles as the artifact bytes."""
        chunks = []
        for _, text in sources:
            chunks.append(text if text.endswith("\n") or not text else text + "\n")
        try:
            program = parse_trace_program("".join(chunks))
        except TraceParseError as exc:
            raise CompileError(str(exc)) from exc
        return Artifact(data=canonical_bytes(program), handle=program)

    def run_test(self, artifact: Artifact, case, collect_metric: bool = False) -> RunResult:
        key = (artifact.data, case.id)
        base = self._behaviour.get(key)
        if base is None:
            base = self._execute(artifact, case, key)
        if not collect_metric:
            return base
        metric = self._metric.get(key)
        if metric is None or base.timed_out or base.exit_status != 0:
            return base
        return RunResult(base.output, base.exit_status, self._noisy(metric),
                         base.timed_out, base.detail)

    def _execute(self, artifact: Artifact, case, key) -> RunResult:
        try:
            bindings = json.loads(case.input.decode("utf-8")) if case.input.strip() else {}
            if not isinstance(bindings, dict):
                raise ValueError("input must be a JSON object of parameter bindings")
        except (ValueError, UnicodeDecodeError) as exc:
            result = RunResult(b"", 2, detail=f"bad test input: {exc}")
            self._behaviour[key] = result
            return result
        try:
            run = run_trace_program(artifact.handle, bindings, self.config.access_limit)
        except AccessLimitExceeded as exc:
            result = RunResult(b"", 124, timed_out=True, detail=str(exc))
        except TraceRuntimeError as exc:
            result = RunResult(serialize_output(exc.partial_emitted), 1, detail=str(exc))
        else:
            result = RunResult(serialize_output(run.emitted), 0)
            self._metric[key] = self._count_misses(run)
        self._behaviour[key] = result
        return result

    def _count_misses(self, run) -> int:
        # A fresh cold cache for every run: the simulation analogue of
        # clearing the L1 before each measured invocation.
        if run.access_count == 0:
            return 0
        if run.access_size:
            return simulate_addresses(self.config.cache, run.addresses,
                                      run.access_size).misses
        cache = LRUCache(self.config.cache)
        line_bytes = self.config.cache.line_bytes
        for addr, size in zip(run.addresses.tolist(), run.sizes.tolist()):
            first = addr // line_bytes
            last = (addr + size - 1) // line_bytes
            for line_id in range(first, last + 1):
                cache.touch_line(line_id)
        return cache.stats.misses

    def _noisy(self, true_metric: int) -> int:
        noise = self.config.noise
        if noise is None:
            return true_metric
        multiplier = 1.0
        for step, value in noise.drift_schedule:
            if self._search_step >= step:
                multiplier = value
        jitter = self._noise_rng.uniform(1.0 - noise.amplitude, 1.0 + noise.amplitude)
        return max(0, round(true_metric * multiplier * jitter))


# --- external driver ---------------------------------------------------------


@dataclass(frozen=True)
class ExternalDriverConfig:
    """Templates for a real pipeline. Placeholders: compile_cmd gets
    {src_dir} and {artifact}; run_cmd gets {artifact}, {input},
    {counter_file} and {cache_thrash}. The metric is read from the
    counter tool's machine-readable output: CSV-style lines
    ``value,unit,event,...`` (``perf_csv``, parsed from stderr) or a
    ``key=value`` file at {counter_file} (``key_value_file``)."""

    compile_cmd: str
    run_cmd: str
    metric_name: str
    counter_format: str = "perf_csv"
    timeout_ms: int = 10_000
    compile_timeout_ms: int = 60_000
    env_allow: tuple[str, ...] = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR")
    cache_thrash: bool = False

    def __post_init__(self):
        if self.counter_format not in ("perf_csv", "key_value_file"):
            raise ValueError("counter_format must be 'perf_csv' or 'key_value_file'")
        if self.timeout_ms < 1 or self.compile_timeout_ms < 1:
            raise ValueError("timeouts must be positive")


class ExternalDriver:
    """Subprocess pipeline driver. Every candidate compiles into a fresh
    scratch directory (work/<ordinal>/), so no state leaks between
    candidates; environment passthrough is allow-list only."""

    def __init__(self, config: ExternalDriverConfig, work_root):
        self.config = config
        self.work_root = Path(work_root)
        self.work_root.mkdir(parents=True, exist_ok=True)
        self._compile_counter = 0
        self._run_counter = 0

    def set_search_step(self, step: int) -> None:
        pass  # real hardware drifts on its own schedule

    def _env(self) -> dict[str, str]:
        env = {k: os.environ[k] for k in self.config.env_allow if k in os.environ}
        env["CACHEPATCH_CACHE_THRASH"] = "1" if self.config.cache_thrash else "0"
        return env

    def _format(self, template: str, **values) -> list[str]:
        try:
            return shlex.split(template.format(**values))
        except (KeyError, IndexError) as exc:
            raise CompileError(f"unknown placeholder in command template: {exc}") from exc

    def compile_target(self, sources) -> Artifact:
        self._compile_counter += 1
        scratch = self.work_root / f"{self._compile_counter:05d}"
        src_dir = scratch / "src"
        src_dir.mkdir(parents=True)
        for name, text in sources:
            rel = Path(name)
            if rel.is_absolute() or ".." in rel.parts:
                raise CompileError(f"unsafe source file name {name!r}")
            dest = src_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(text, encoding="utf-8")
        artifact_path = scratch / "artifact.bin"
        cmd = self._format(self.config.compile_cmd, src_dir=src_dir,
                           artifact=artifact_path,
                           cache_thrash="1" if self.config.cache_thrash else "0")
        try:
            proc = subprocess.run(cmd, cwd=scratch, capture_output=True,
                                  timeout=self.config.compile_timeout_ms / 1000.0,
                                  env=self._env())
        except subprocess.TimeoutExpired:
            raise CompileError("compile timed out") from None
        except OSError as exc:
            raise CompileError(f"cannot run compiler: {exc}") from exc
        if proc.returncode != 0:
            diagnostic = (proc.stderr or proc.stdout).decode("utf-8", "replace")
            first = next((ln for ln in diagnostic.splitlines() if ln.strip()), "compile failed")
            raise CompileError(first.strip())
        if not artifact_path.is_file():
            raise CompileError("compiler exited 0 but produced no artifact")
        return Artifact(data=artifact_path.read_bytes(),
                        handle=(scratch, artifact_path))

    def run_test(self, artifact: Artifact, case, collect_metric: bool = False) -> RunResult:
        scratch, artifact_path = artifact.handle
        self._run_counter += 1
        run_dir = scratch / f"run{self._run_counter:05d}"
        run_dir.mkdir(parents=True)
        input_path = run_dir / "input.bin"
        input_path.write_bytes(case.input)
        counter_path = run_dir / "counters.txt"
        cmd = self._format(self.config.run_cmd, artifact=artifact_path,
                           input=input_path, counter_file=counter_path,
                           cache_thrash="1" if self.config.cache_thrash else "0")
        try:
            proc = subprocess.run(cmd, cwd=run_dir, capture_output=True,
                                  timeout=self.config.timeout_ms / 1000.0,
                                  env=self._env())
        except subprocess.TimeoutExpired:
            return RunResult(b"", 124, timed_out=True, detail="run timed out")
        except OSError as exc:
            return RunResult(b"", 127, detail=f"cannot run command: {exc}")
        if not collect_metric:
            return RunResult(proc.stdout, proc.returncode)
        if self.config.counter_format == "key_value_file":
            if not counter_path.is_file():
                return RunResult(proc.stdout, proc.returncode,
                                 detail="counter parse: counter file missing")
            counter_text = counter_path.read_text(encoding="utf-8", errors="replace")
        else:
            counter_text = proc.stderr.decode("utf-8", "replace")
        try:
            metric = parse_counter_output(counter_text, self.config.counter_format,
                                          self.config.metric_name)
        except CounterParseError as exc:
            return RunResult(proc.stdout, proc.returncode, detail=f"counter parse: {exc}")
        return RunResult(proc.stdout, proc.returncode, metric=metric)


def parse_counter_output(text: str, counter_format: str, metric_name: str) -> int:
    """Extract one integer counter from machine-readable counter output."""
    if counter_format == "perf_csv":
        for line in text.splitlines():
            fields = line.split(",")
            if len(fields) >= 3 and fields[2].strip() == metric_name:
                value = fields[0].strip()
                try:
                    return int(value)
                except ValueError:
                    raise CounterParseError(
                        f"counter {metric_name!r} has non-numeric value {value!r}") from None
        raise CounterParseError(f"metric {metric_name!r} not found in counter output")
    if counter_format == "key_value_file":
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            if key.strip() == metric_name:
                try:
                    return int(value.strip())
                except ValueError:
                    raise CounterParseError(
                        f"counter {metric_name!r} has non-numeric value "
                        f"{value.strip()!r}") from None
        raise CounterParseError(f"metric {metric_name!r} not found in counter file")
    raise CounterParseError(f"unknown counter format {counter_format!r}")
