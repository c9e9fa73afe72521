"""Run configuration: one JSON file wires together target, driver, test
suites and search parameters.

Input paths (target sources, suites) resolve relative to the config file's
directory; ``output_dir`` resolves relative to the current working
directory so bundled configs can be run from anywhere.

Schema (sim driver shown; see ExternalDriverConfig for the external one)::

    {
      "target":   {"paths": ["prog.trace"], "strip_policy": "none"},
      "driver":   {"kind": "sim",
                   "cache": {"size_bytes": 32768, "line_bytes": 64,
                             "associativity": 8},
                   "access_limit": 200000,
                   "noise": {"seed": 1, "amplitude": 0.05,
                             "drift_schedule": [[51, 1.1]]}},
      "suite":    "train.json",
      "holdout":  "holdout.json",
      "search":   {"budget_steps": null, "confidence": 0.99,
                   "warmup_count": 11, "repeats": 11, "seed": 7,
                   "restart_after": 100, "sentinel_every": 25,
                   "drift_tolerance": 0.05},
      "operators": {"weights": [1.0, 1.0, 1.0]},
      "output_dir": "runs/demo"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .cachesim import CacheConfig
from .drivers import (
    ExternalDriver,
    ExternalDriverConfig,
    NoiseConfig,
    SimDriver,
    SimDriverConfig,
)
from .search import SearchConfig
from .source_model import SourceRoster, StripPolicy, ingest_source

__all__ = ["ConfigError", "RunConfig", "load_run_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    target_paths: list[Path]
    strip_policy: StripPolicy
    driver_kind: str  # "sim" or "external"
    sim: SimDriverConfig | None
    external: ExternalDriverConfig | None
    suite_path: Path
    holdout_path: Path | None
    search: SearchConfig
    output_dir: Path

    def build_roster(self) -> SourceRoster:
        return ingest_source(self.target_paths, self.strip_policy)

    def build_driver(self, work_root=None):
        if self.driver_kind == "sim":
            return SimDriver(self.sim)
        root = Path(work_root) if work_root is not None else self.output_dir / "work"
        return ExternalDriver(self.external, root)


def _require(mapping, key, context):
    if key not in mapping:
        raise ConfigError(f"missing config key {context}.{key}")
    return mapping[key]


def _sim_config(raw: dict) -> SimDriverConfig:
    cache_raw = raw.get("cache", {})
    try:
        cache = CacheConfig(
            size_bytes=int(cache_raw.get("size_bytes", 32768)),
            line_bytes=int(cache_raw.get("line_bytes", 64)),
            associativity=int(cache_raw.get("associativity", 8)),
        )
    except ValueError as exc:
        raise ConfigError(f"driver.cache: {exc}") from exc
    noise = None
    if raw.get("noise") is not None:
        noise_raw = raw["noise"]
        try:
            noise = NoiseConfig(
                seed=int(_require(noise_raw, "seed", "driver.noise")),
                amplitude=float(_require(noise_raw, "amplitude", "driver.noise")),
                drift_schedule=tuple(
                    (int(step), float(mult))
                    for step, mult in noise_raw.get("drift_schedule", [])),
            )
        except ValueError as exc:
            raise ConfigError(f"driver.noise: {exc}") from exc
    try:
        return SimDriverConfig(cache=cache,
                               access_limit=int(raw.get("access_limit", 1_000_000)),
                               noise=noise)
    except ValueError as exc:
        raise ConfigError(f"driver: {exc}") from exc


def _external_config(raw: dict) -> ExternalDriverConfig:
    try:
        return ExternalDriverConfig(
            compile_cmd=str(_require(raw, "compile_cmd", "driver")),
            run_cmd=str(_require(raw, "run_cmd", "driver")),
            metric_name=str(_require(raw, "metric_name", "driver")),
            counter_format=str(raw.get("counter_format", "perf_csv")),
            timeout_ms=int(raw.get("timeout_ms", 10_000)),
            compile_timeout_ms=int(raw.get("compile_timeout_ms", 60_000)),
            env_allow=tuple(raw.get("env_allow",
                                    ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR"))),
            cache_thrash=bool(raw.get("cache_thrash", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"driver: {exc}") from exc


def load_run_config(path) -> RunConfig:
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
    base = config_path.parent

    target_raw = _require(raw, "target", "config")
    paths = [base / p for p in _require(target_raw, "paths", "target")]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"target source file not found: {p}")
    try:
        strip = StripPolicy(target_raw.get("strip_policy", "none"))
    except ValueError:
        raise ConfigError(
            f"target.strip_policy must be one of "
            f"{[p.value for p in StripPolicy]}") from None

    driver_raw = _require(raw, "driver", "config")
    kind = _require(driver_raw, "kind", "driver")
    if kind == "sim":
        sim, external = _sim_config(driver_raw), None
    elif kind == "external":
        sim, external = None, _external_config(driver_raw)
    else:
        raise ConfigError("driver.kind must be 'sim' or 'external'")

    suite_path = base / _require(raw, "suite", "config")
    if not suite_path.is_file():
        raise ConfigError(f"suite file not found: {suite_path}")
    holdout_path = None
    if raw.get("holdout") is not None:
        holdout_path = base / raw["holdout"]
        if not holdout_path.is_file():
            raise ConfigError(f"holdout suite file not found: {holdout_path}")

    search_raw = dict(raw.get("search", {}))
    weights = raw.get("operators", {}).get("weights", (1.0, 1.0, 1.0))
    try:
        search = SearchConfig(
            budget_steps=(None if search_raw.get("budget_steps") is None
                          else int(search_raw["budget_steps"])),
            confidence=float(search_raw.get("confidence", 0.99)),
            warmup_count=int(search_raw.get("warmup_count", 11)),
            repeats=int(search_raw.get("repeats", 11)),
            seed=int(search_raw.get("seed", 0)),
            restart_after=int(search_raw.get("restart_after", 100)),
            sentinel_every=int(search_raw.get("sentinel_every", 0)),
            drift_tolerance=float(search_raw.get("drift_tolerance", 0.05)),
            operator_weights=tuple(float(w) for w in weights),
        )
    except ValueError as exc:
        raise ConfigError(f"search: {exc}") from exc

    return RunConfig(
        target_paths=paths,
        strip_policy=strip,
        driver_kind=kind,
        sim=sim,
        external=external,
        suite_path=suite_path,
        holdout_path=holdout_path,
        search=search,
        output_dir=Path(_require(raw, "output_dir", "config")),
    )
