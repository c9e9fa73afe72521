"""Command-line interface.

Subcommands: ``search`` (budgeted improvement run), ``validate`` (holdout
check of a found patch), ``budget`` (coupon-collector calculator),
``apply`` (write patched sources), ``minify`` (strip useless edits),
``report`` (re-render a run log) and ``simulate-trace`` (run a raw access
dump through the cache model). Reports are written both as plain text on
stdout and as structured JSON files.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from .cachesim import Access, CacheConfig, simulate
from .config import ConfigError, RunConfig, load_run_config
from .drivers import CompileError
from .evaluation import SuiteError, load_suite
from .search import (
    SearchSetupError,
    TabuStore,
    coupon_budget,
    local_search,
    minify,
    warm_up,
)
from .source_model import (
    IngestError,
    PatchApplicationError,
    PatchParseError,
    apply_patch,
    format_patch,
    parse_patch,
)
from .stats import coverage_probability, drift_check, mann_whitney, quartile1

USAGE_ERROR = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return USAGE_ERROR


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _accounting_lines(accounting: dict[str, int], total: int) -> list[str]:
    lines = []
    for status, count in accounting.items():
        pct = 100.0 * count / total if total else 0.0
        lines.append(f"  {status:<16} {count:>6}  {pct:5.1f}%")
    lines.append(f"  {'total':<16} {total:>6}  100.0%")
    return lines


def cmd_search(args) -> int:
    cfg = load_run_config(args.config)
    out_dir = Path(args.output_dir) if args.output_dir else cfg.output_dir
    if out_dir.exists() and any(out_dir.iterdir()):
        if not args.force:
            return _fail(f"output directory {out_dir} is not empty "
                         "(pass --force to overwrite)")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    roster = cfg.build_roster()
    driver = cfg.build_driver(out_dir / "work")
    suite = load_suite(cfg.suite_path)

    warmup = warm_up(roster, suite, driver, cfg.search)
    _write_json(out_dir / "warmup_report.json", warmup.as_dict())
    print(f"warm-up baseline: {warmup.baseline:.2f} "
          f"(mean of {len(warmup.samples)} empty-patch measurements)")

    tabu = TabuStore(out_dir / "tabu")
    log_path = out_dir / "run_log.jsonl"
    with log_path.open("w", encoding="utf-8") as log_file:
        def on_record(record):
            log_file.write(json.dumps(record.as_dict()) + "\n")
            log_file.flush()

        result = local_search(roster, suite, driver, cfg.search,
                              warmup.baseline, tabu, on_record)

    patch_text = format_patch(result.best_patch, roster)
    (out_dir / "best_patch.txt").write_text(patch_text + "\n", encoding="utf-8")

    drift_report = None
    if result.sentinel_history:
        drift_report = drift_check(result.sentinel_history, result.baseline,
                                   cfg.search.drift_tolerance)
        _write_json(out_dir / "drift.json", {
            "drifting": drift_report.drifting,
            "worst_ratio": drift_report.worst_ratio,
            "onset_step": drift_report.onset_step,
            "sentinels": result.sentinel_history,
        })

    summary = {
        "budget_steps": result.budget_steps,
        "baseline": result.baseline,
        "best": {
            "patch": patch_text,
            "relative_fitness": result.best_fitness.relative_fitness,
            "metric": result.best_fitness.summarized_metric,
            "edits": len(result.best_patch),
        },
        "accounting": result.accounting,
        "duplicates": tabu.duplicate_count,
        "sentinels": result.sentinel_history,
        "drift": None if drift_report is None else {
            "drifting": drift_report.drifting,
            "worst_ratio": drift_report.worst_ratio,
            "onset_step": drift_report.onset_step,
        },
    }
    _write_json(out_dir / "result.json", summary)

    print(f"budget: {result.budget_steps} steps")
    print("candidate accounting:")
    for line in _accounting_lines(result.accounting, result.budget_steps):
        print(line)
    print(f"best patch ({len(result.best_patch)} edits): "
          f"{patch_text or '<empty patch>'}")
    print(f"best relative fitness: {result.best_fitness.relative_fitness:.4f}")
    if drift_report is not None and drift_report.drifting:
        print(f"drift warning: sentinel ratio reached "
              f"{drift_report.worst_ratio:.3f} at step {drift_report.onset_step}")
    print(f"reports written to {out_dir}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.holdout_path is None:
        return _fail("config has no holdout suite configured")
    roster = cfg.build_roster()
    driver = cfg.build_driver()
    holdout = load_suite(cfg.holdout_path)
    repeats = args.repeats or cfg.search.repeats
    patch_text = Path(args.patch).read_text(encoding="utf-8").strip()
    patch = parse_patch(patch_text, roster)

    original = driver.compile_target(roster.serialize())
    patched = driver.compile_target(apply_patch(roster, patch))

    failures = []
    oracle_anomalies = []
    for case in holdout:
        base_run = driver.run_test(original, case, collect_metric=False)
        if (base_run.output, base_run.exit_status) != (case.expected_output,
                                                       case.expected_exit):
            oracle_anomalies.append(case.id)
        run = driver.run_test(patched, case, collect_metric=False)
        if run.timed_out:
            failures.append({"id": case.id, "reason": "timeout"})
        elif run.exit_status != case.expected_exit:
            failures.append({"id": case.id,
                             "reason": f"exit {run.exit_status} != {case.expected_exit}"})
        elif run.output != case.expected_output:
            failures.append({"id": case.id, "reason": "output differs"})

    metric_cases = [c for c in holdout if c.expected_exit == 0]
    original_samples: list[int] = []
    patched_samples: list[int] = []
    for case in metric_cases:
        for _ in range(repeats):
            result = driver.run_test(original, case, collect_metric=True)
            if result.metric is not None:
                original_samples.append(result.metric)
        for _ in range(repeats):
            result = driver.run_test(patched, case, collect_metric=True)
            if result.metric is not None:
                patched_samples.append(result.metric)

    mw = mann_whitney(original_samples, patched_samples)
    orig_q1, patch_q1 = quartile1(original_samples), quartile1(patched_samples)
    orig_mean = sum(original_samples) / len(original_samples)
    patch_mean = sum(patched_samples) / len(patched_samples)

    functional_ok = not failures
    improved = mw.p_two_sided < 0.05 and patch_q1 < orig_q1
    functional_verdict = (
        f"functionally generalises: {len(holdout) - len(failures)}/{len(holdout)} "
        "holdout cases pass" if functional_ok else
        f"functional generalisation FAILED on {len(failures)} of {len(holdout)} cases")
    cache_verdict = (
        "cache improvement generalises" if improved
        else "cache improvement does not generalise")

    report = {
        "patch": patch_text,
        "holdout_cases": len(holdout),
        "functional_passes": len(holdout) - len(failures),
        "failures": failures,
        "oracle_anomalies": oracle_anomalies,
        "repeats": repeats,
        "metric_cases": len(metric_cases),
        "original": {"q1": orig_q1, "mean": orig_mean, "samples": len(original_samples)},
        "patched": {"q1": patch_q1, "mean": patch_mean, "samples": len(patched_samples)},
        "delta_q1": patch_q1 - orig_q1,
        "delta_mean": patch_mean - orig_mean,
        "mann_whitney": {"U": mw.U, "p_two_sided": mw.p_two_sided, "method": mw.method},
        "verdict": {"functional": functional_verdict, "cache": cache_verdict},
    }
    report_path = Path(args.report) if args.report else cfg.output_dir / "validate_report.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report_path, report)

    print(f"holdout cases: {len(holdout)}, functional passes: "
          f"{len(holdout) - len(failures)}")
    for failure in failures:
        print(f"  FAIL {failure['id']}: {failure['reason']}")
    if oracle_anomalies:
        print(f"  warning: original program mismatched its recorded output on "
              f"{len(oracle_anomalies)} cases: {', '.join(oracle_anomalies[:5])}")
    print(f"misses (Q1): original {orig_q1} -> patched {patch_q1} "
          f"(delta {patch_q1 - orig_q1})")
    print(f"misses (mean): original {orig_mean:.1f} -> patched {patch_mean:.1f}")
    print(f"Mann-Whitney U={mw.U:.1f}, two-sided p={mw.p_two_sided:.3g} ({mw.method})")
    print(functional_verdict)
    print(cache_verdict)
    print(f"report written to {report_path}")
    return 0 if functional_ok else 1


def cmd_budget(args) -> int:
    budget = coupon_budget(args.lines, args.confidence)
    print(budget)
    print(f"coverage curve for N={args.lines} mutable lines:")
    for fraction in (0.25, 0.5, 0.75, 1.0, 1.25, 1.5):
        steps = round(budget * fraction)
        print(f"  t={steps:>8}  P(all lines sampled) = "
              f"{coverage_probability(args.lines, steps):.4f}")
    return 0


def cmd_apply(args) -> int:
    cfg = load_run_config(args.config)
    roster = cfg.build_roster()
    patch_text = Path(args.patch).read_text(encoding="utf-8").strip()
    patch = parse_patch(patch_text, roster)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in apply_patch(roster, patch):
        dest = out_dir / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(text, encoding="utf-8")
        print(f"wrote {dest}")
    return 0


def cmd_minify(args) -> int:
    cfg = load_run_config(args.config)
    roster = cfg.build_roster()
    driver = cfg.build_driver()
    suite = load_suite(cfg.suite_path)
    patch_text = Path(args.patch).read_text(encoding="utf-8").strip()
    patch = parse_patch(patch_text, roster)
    warmup = warm_up(roster, suite, driver, cfg.search)
    reduced = minify(patch, roster, suite, driver, cfg.search,
                     warmup.baseline, slack=args.slack)
    reduced_text = format_patch(reduced, roster)
    print(f"minified {len(patch)} edits down to {len(reduced)}")
    print(reduced_text or "<empty patch>")
    if args.out:
        Path(args.out).write_text(reduced_text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.log)
    try:
        records = [json.loads(line) for line in
                   path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read run log {path}: {exc}")
    candidates = [r for r in records if not r.get("sentinel")]
    if not candidates:
        return _fail(f"run log {path} has no candidate records")
    accounting: dict[str, int] = {}
    print(f"{'step':>6}  {'status':<16} {'rel_fitness':>12}  {'best_so_far':>12}")
    best = float("inf")
    for record in candidates:
        accounting[record["status"]] = accounting.get(record["status"], 0) + 1
        rel = record.get("rel_fitness")
        if rel is not None and rel < best:
            best = rel
        rel_text = f"{rel:.4f}" if rel is not None else "-"
        best_text = f"{best:.4f}" if best != float("inf") else "-"
        print(f"{record['step']:>6}  {record['status']:<16} {rel_text:>12}  {best_text:>12}")
    print("accounting:")
    for line in _accounting_lines(accounting, len(candidates)):
        print(line)
    return 0


def cmd_simulate_trace(args) -> int:
    config = CacheConfig(size_bytes=args.size_bytes, line_bytes=args.line_bytes,
                         associativity=args.associativity)
    accesses = []
    path = Path(args.trace)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        return _fail(f"cannot read trace dump {path}: {exc}")
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("R", "W"):
            return _fail(f"{path}:{number}: expected 'R|W <hex address> <size>'")
        try:
            accesses.append(Access(kind="read" if parts[0] == "R" else "write",
                                   address=int(parts[1], 16),
                                   size_bytes=int(parts[2])))
        except ValueError as exc:
            return _fail(f"{path}:{number}: {exc}")
    stats = simulate(config, accesses)
    print(f"accesses:  {stats.accesses}")
    print(f"misses:    {stats.misses}")
    print(f"evictions: {stats.evictions}")
    hit_rate = 100.0 * (1 - stats.misses / stats.accesses) if stats.accesses else 0.0
    print(f"hit rate:  {hit_rate:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cachepatch",
        description="Search-based line patching to reduce L1 data-cache misses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a budgeted improvement search")
    p.add_argument("config", help="run config JSON file")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate", help="check a patch against the holdout suite")
    p.add_argument("config")
    p.add_argument("patch", help="patch text file (as written by search)")
    p.add_argument("--repeats", type=int, default=None,
                   help="metric repetitions per case (default: config value)")
    p.add_argument("--report", help="where to write the JSON report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("budget", help="coupon-collector step budget for N lines")
    p.add_argument("lines", type=int)
    p.add_argument("confidence", type=float)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("apply", help="write patched sources to a directory")
    p.add_argument("config")
    p.add_argument("patch")
    p.add_argument("out")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("minify", help="drop edits that don't earn their keep")
    p.add_argument("config")
    p.add_argument("patch")
    p.add_argument("--slack", type=float, default=0.0,
                   help="tolerated relative-fitness worsening per removal")
    p.add_argument("--out", help="where to write the reduced patch")
    p.set_defaults(func=cmd_minify)

    p = sub.add_parser("report", help="re-render accounting and fitness trajectory")
    p.add_argument("log", help="run_log.jsonl from a search run")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate-trace", help="simulate a raw access dump")
    p.add_argument("trace", help="dump file: one 'R|W <hex address> <size>' per line")
    p.add_argument("--size-bytes", type=int, default=32768)
    p.add_argument("--line-bytes", type=int, default=64)
    p.add_argument("--associativity", type=int, default=8)
    p.set_defaults(func=cmd_simulate_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SuiteError, IngestError, PatchParseError,
            PatchApplicationError, SearchSetupError, CompileError) as exc:
        return _fail(str(exc))
    except ValueError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
