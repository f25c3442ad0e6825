""" Command-line interface

The subcommands follow the pipeline stages, each one reading only what the previous stage persisted:

```
simhra run|batch  ->  simhra report  ->  simhra validate  ->  simhra stats
```

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for infrastructure failures.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

from simhra.__version__ import __version__
from simhra.backends import BackendConfig, ConfigurationError, InfraFailure, PROMPT_VERSION, make_backend
from simhra.dialogue import TranscriptError, load_transcript
from simhra.engine.simulation import (RunConfig, Progress, COMPLETED, INFRA_FAIL, MANIFEST, run_simulation,
                                      run_batch, load_manifest, write_manifest)
from simhra.metrics import extract_metrics_rules, save_metrics, load_metrics
from simhra.moderator import load_note_log, intervention_stats
from simhra.report import Valid, JsonFail, extract_metrics_llm
from simhra.scenario import ScenarioError, NotFoundError, load_scenario
from simhra.stats import (JSON_FAIL, gate_run, summarize_batch, emit_radar_data, radar_csv, ipr_distribution,
                          ipr_distribution_csv, save_verdicts, load_verdicts, format_validity_table,
                          format_stats_report)
from simhra.utils import logger, write_atomic

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFRA = 2

VALID = "VALID"
INFRA = "INFRA"

VERDICTS = "verdicts.json"
SUMMARY = "summary.json"
RADAR = "radar.csv"
IPR_DISTRIBUTION = "ipr_distribution.csv"


def _llm_config(args) -> BackendConfig:
    return BackendConfig(kind="llm",
                         endpoint_base=args.api_base,
                         model_name=args.model,
                         max_retries=args.max_retries,
                         timeout=args.timeout)


def _backend_config(args, scenario_id: str) -> BackendConfig:
    if args.backend == "scripted":
        return BackendConfig(kind="scripted", script_path=args.script or scenario_id)
    return _llm_config(args)


def _run_dir(path) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"run directory not found: {path}")
    return path


def _scenario_of(manifest: dict, override: Optional[str] = None):
    return load_scenario(override or manifest.get("scenario_source") or manifest["scenario_id"])


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out)
    manifest = None
    if (out_dir / MANIFEST).exists():
        manifest = load_manifest(out_dir)
        if manifest["scenario_id"] != scenario.scenario_id:
            raise ConfigurationError(f"{out_dir} holds runs of {manifest['scenario_id']}, "
                                     f"not {scenario.scenario_id}")

    cfg = RunConfig(scenario_id=args.scenario,
                    backend=_backend_config(args, scenario.scenario_id),
                    seed=args.seed,
                    run_id=args.run_id,
                    output_dir=str(out_dir),
                    moderator_enabled=not args.no_moderator,
                    moderator_mode=args.moderator,
                    note_templates=args.note_templates)
    record = run_simulation(cfg, scenario=scenario, callbacks=[Progress()] if args.progress else [])

    if manifest is None:
        manifest = {"scenario_id": scenario.scenario_id,
                    "scenario_source": str(args.scenario),
                    "n_runs": 0,
                    "base_seed": args.seed,
                    "backend": record.backend_kind,
                    "moderator_enabled": cfg.moderator_enabled,
                    "moderator_mode": cfg.moderator_mode,
                    "prompt_version": PROMPT_VERSION,
                    "runs": []}
    runs = [r for r in manifest["runs"] if r["run_id"] != record.run_id] + [record.to_dict()]
    manifest.update(runs=runs, n_runs=len(runs))
    write_manifest(out_dir, manifest)

    print(f"{record.run_id}: {record.status} ({record.agent_turns} agent turns, {record.wall_time:.2f}s)")
    if record.status == COMPLETED:
        return EXIT_OK
    return EXIT_INFRA if record.status == INFRA_FAIL else EXIT_CONFIG


def cmd_batch(args) -> int:
    scenario = load_scenario(args.scenario)
    records = run_batch(args.scenario,
                        args.runs,
                        _backend_config(args, scenario.scenario_id),
                        base_seed=args.seed,
                        output_dir=args.out,
                        force=args.force,
                        moderator_enabled=not args.no_moderator,
                        moderator_mode=args.moderator,
                        max_workers=args.workers,
                        progress=args.progress)
    failed = [r for r in records if r.status != COMPLETED]
    print(f"{scenario.scenario_id}: {len(records) - len(failed)}/{len(records)} runs completed")
    for record in failed:
        print(f"{record.run_id}: {record.status} {record.error or ''}".rstrip(), file=sys.stderr)
    return EXIT_INFRA if failed else EXIT_OK


def cmd_report(args) -> int:
    run_dir = _run_dir(args.runs)
    manifest = load_manifest(run_dir)
    scenario = _scenario_of(manifest, args.scenario)
    backend = None
    if args.extractor == "llm":
        backend = make_backend(_llm_config(args))

    counts = {VALID: 0, JSON_FAIL: 0, INFRA: 0}
    for run in manifest["runs"]:
        if run["status"] != COMPLETED:
            logger.info(f"skipping {run['run_id']}: {run['status']}")
            continue
        transcript = load_transcript(run_dir / run["transcript_path"])
        metrics_name = f"{run['run_id']}.metrics.json"
        run.pop("extraction_reason", None)
        if backend is None:
            outcome = Valid(extract_metrics_rules(transcript, scenario, run["run_id"]))
        else:
            try:
                outcome = extract_metrics_llm(transcript, backend, scenario, run["run_id"])
            except InfraFailure as e:
                logger.warning(f"report for {run['run_id']} failed: {e}")
                run.update(extraction=INFRA, metrics_path=None)
                counts[INFRA] += 1
                continue

        if isinstance(outcome, Valid):
            save_metrics(outcome.metrics, run_dir / metrics_name)
            run.update(extraction=VALID, metrics_path=metrics_name)
            counts[VALID] += 1
        else:
            run.update(extraction=JSON_FAIL, metrics_path=None, extraction_reason=outcome.reason)
            counts[JSON_FAIL] += 1

    manifest["extractor"] = args.extractor
    write_manifest(run_dir, manifest)
    print(f"{manifest['scenario_id']}: {counts[VALID]} valid, {counts[JSON_FAIL]} JSON_FAIL, "
          f"{counts[INFRA]} infra failures")
    return EXIT_INFRA if counts[INFRA] else EXIT_OK


def collect_outcomes(run_dir: Path, manifest: dict) -> list:
    """ extraction outcomes of the runs in a manifest, in run order

    Runs without an extraction, or whose extraction hit an infrastructure failure, are left out.
    """
    outcomes = []
    for run in manifest["runs"]:
        extraction = run.get("extraction")
        if extraction == VALID:
            outcomes.append(load_metrics(run_dir / run["metrics_path"]))
        elif extraction == JSON_FAIL:
            outcomes.append(JsonFail(run.get("extraction_reason") or "unknown", run["run_id"]))
        else:
            logger.info(f"{run['run_id']} has no extraction outcome, left out")
    return outcomes


def _outcomes_or_fail(run_dir, manifest):
    outcomes = collect_outcomes(run_dir, manifest)
    if not outcomes:
        raise ValueError(f"no extracted runs in {run_dir}, run the report stage first")
    return outcomes


def cmd_validate(args) -> int:
    run_dir = _run_dir(args.runs)
    manifest = load_manifest(run_dir)
    scenario = _scenario_of(manifest, args.scenario)
    outcomes = _outcomes_or_fail(run_dir, manifest)

    verdicts = [gate_run(o, scenario.criteria) for o in outcomes]
    save_verdicts(verdicts, run_dir / VERDICTS)
    summary = summarize_batch(outcomes, scenario, verdicts)

    if args.format == "machine":
        row = dict(zip(("scenario_id", "n_total", "n_valid", "n_json_fail", "json_fail_rate", "n_pass", "pass_rate"),
                       (summary.scenario_id, summary.n_total, summary.n_valid, summary.n_json_fail,
                        summary.json_fail_rate, summary.n_pass, summary.pass_rate)))
        row["verdicts"] = [v.to_dict() for v in verdicts]
        print(json.dumps(row, indent=2))
    else:
        print(format_validity_table([summary]))
    return EXIT_OK


def cmd_stats(args) -> int:
    run_dir = _run_dir(args.runs)
    manifest = load_manifest(run_dir)
    scenario = _scenario_of(manifest, args.scenario)
    outcomes = _outcomes_or_fail(run_dir, manifest)

    verdicts = None
    if (run_dir / VERDICTS).is_file():
        verdicts = load_verdicts(run_dir / VERDICTS)
        if [v.run_id for v in verdicts] != [o.run_id for o in outcomes]:
            logger.warning(f"{VERDICTS} is out of date, gating the runs again")
            verdicts = None
    if verdicts is None:
        verdicts = [gate_run(o, scenario.criteria) for o in outcomes]

    summary = summarize_batch(outcomes, scenario, verdicts)
    radar = emit_radar_data(summary, scenario.baseline)
    write_atomic(run_dir / SUMMARY, json.dumps(summary.to_dict(), indent=2) + "\n")
    write_atomic(run_dir / RADAR, radar_csv(radar))
    write_atomic(run_dir / IPR_DISTRIBUTION,
                 ipr_distribution_csv(ipr_distribution(outcomes, verdicts, scenario.criteria)))

    interventions = None
    completed = [r for r in manifest["runs"] if r["status"] == COMPLETED and r.get("note_log_path")]
    agent_turns = sum(r.get("agent_turns", 0) for r in completed)
    if manifest.get("moderator_enabled", True) and agent_turns > 0:
        logs = [load_note_log(run_dir / r["note_log_path"]) for r in completed]
        interventions = intervention_stats(logs, agent_turns, scenario.scenario_id)

    if args.format == "machine":
        doc = {"summary": summary.to_dict(),
               "radar": [asdict(row) for row in radar],
               "interventions": interventions.to_dict() if interventions else None}
        print(json.dumps(doc, indent=2))
    else:
        print(format_stats_report(summary, scenario.baseline, interventions))
    return EXIT_OK


def _add_backend_args(parser):
    parser.add_argument("--backend", choices=("scripted", "llm"), default="scripted")
    parser.add_argument("--script", default=None, help="replay script file or builtin id (defaults to the scenario id)")
    _add_endpoint_args(parser)


def _add_endpoint_args(parser):
    parser.add_argument("--api-base", default=None, help="OpenAI-compatible base URL (overrides SIMHRA_API_BASE)")
    parser.add_argument("--model", default=None, help="model name (overrides SIMHRA_MODEL)")
    parser.add_argument("--max-retries", type=int, default=3)
    parser.add_argument("--timeout", type=float, default=60.0)


def _add_simulation_args(parser):
    parser.add_argument("--scenario", required=True, help="builtin scenario id or scenario file")
    _add_backend_args(parser)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--no-moderator", action="store_true")
    parser.add_argument("--moderator", choices=("rules", "llm"), default="rules")
    parser.add_argument("--progress", action="store_true", help="progress bar (needs the tqdm extra)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simhra", description="multi-agent control-room HRA simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one run")
    _add_simulation_args(run)
    run.add_argument("--run-id", default=None)
    run.add_argument("--note-templates", default=None, help="YAML file overriding the moderator note templates")
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="simulate a batch of seeded runs")
    _add_simulation_args(batch)
    batch.add_argument("--runs", type=int, required=True)
    batch.add_argument("--workers", type=int, default=None)
    batch.add_argument("--force", action="store_true", help="overwrite an existing batch")
    batch.set_defaults(func=cmd_batch)

    report = sub.add_parser("report", help="extract metrics from the stored transcripts")
    report.add_argument("--runs", required=True, help="run directory")
    report.add_argument("--extractor", choices=("rules", "llm"), default="rules")
    report.add_argument("--scenario", default=None, help="overrides the scenario recorded in the manifest")
    _add_endpoint_args(report)
    report.set_defaults(func=cmd_report)

    for name, func, text in (("validate", cmd_validate, "gate the extracted runs"),
                             ("stats", cmd_stats, "batch statistics and radar data")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--runs", required=True, help="run directory")
        p.add_argument("--scenario", default=None, help="overrides the scenario recorded in the manifest")
        p.add_argument("--format", choices=("table", "machine"), default="table")
        p.set_defaults(func=func)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfraFailure as e:
        print(f"infrastructure failure: {e}", file=sys.stderr)
        return EXIT_INFRA
    except (ScenarioError, NotFoundError, ConfigurationError, TranscriptError,
            FileNotFoundError, FileExistsError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
