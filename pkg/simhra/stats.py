""" Face-validity gating and batch statistics

A run passes only when every applicable acceptance criterion of its scenario holds at once. Batches are then
summarized with the historical alignment error

$$
\\delta_{m,s} = \\frac{|\\bar{x}_{m,s} - h_{m,s}|}{h_{m,s}} \\times 100
$$

the coefficient of variation $CV_{m,s} = \\sigma_{m,s} / \\bar{x}_{m,s}$ and the failure attribution rate
$\\rho_{m,s}$, the share of failed runs violating the criterion for metric $m$.
"""
import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tabulate import tabulate

from simhra.metrics import MetricSet, FLI_MAX, APC_MAX_DEPTH
from simhra.moderator import InterventionStats
from simhra.report import Valid, JsonFail
from simhra.scenario import AcceptanceCriteria, HistoricalBaseline, Scenario, NO_RECOVERY, NOT_APPLICABLE
from simhra.utils import write_atomic

PASS = "PASS"
FAIL = "FAIL"
JSON_FAIL = "JSON_FAIL"

METRICS = ("DDT", "IPR", "CSR", "APC", "FLI")

ABOVE = "above"
BELOW = "below"
MISMATCH = "mismatch"

Outcome = Union[MetricSet, Valid, JsonFail]


@dataclass(frozen=True)
class Violation:
    metric: str
    direction: str
    detail: str


@dataclass(frozen=True)
class ValidityVerdict:
    """ ValidityVerdict

    Attributes:
        run_id (str): run the verdict is about
        status (str): `PASS`, `FAIL` or `JSON_FAIL`
        violated_criteria (Tuple[str]): metric names of the violated criteria, empty unless `FAIL`
        violations (Tuple[Violation]): one entry per violated criterion with its direction and detail
        reason (str): screening failure reason for `JSON_FAIL` verdicts
    """
    run_id: str
    status: str
    violated_criteria: Tuple[str, ...] = ()
    violations: Tuple[Violation, ...] = ()
    reason: Optional[str] = None

    @property
    def details(self) -> Tuple[str, ...]:
        return tuple(v.detail for v in self.violations)

    def to_dict(self):
        return {"run_id": self.run_id,
                "status": self.status,
                "violated_criteria": list(self.violated_criteria),
                "violations": [asdict(v) for v in self.violations],
                "reason": self.reason}

    @staticmethod
    def from_dict(data: dict) -> "ValidityVerdict":
        return ValidityVerdict(run_id=data["run_id"],
                               status=data["status"],
                               violated_criteria=tuple(data.get("violated_criteria", ())),
                               violations=tuple(Violation(**v) for v in data.get("violations", ())),
                               reason=data.get("reason"))


def as_metrics(outcome: Outcome) -> Optional[MetricSet]:
    """ the metric set of a valid outcome, `None` for a JSON failure """
    if isinstance(outcome, Valid):
        return outcome.metrics
    if isinstance(outcome, MetricSet):
        return outcome
    if isinstance(outcome, JsonFail):
        return None
    raise TypeError(f"expected a MetricSet, Valid or JsonFail outcome, {type(outcome).__name__} found")


def metric_value(metrics: MetricSet, metric: str) -> Optional[float]:
    """ numeric value of one of the five metrics, `None` for the sentinels

    The APC value is the cascade depth.
    """
    if metric == "DDT":
        value = metrics.ddt
    elif metric == "IPR":
        value = metrics.ipr
    elif metric == "CSR":
        value = metrics.csr
    elif metric == "FLI":
        value = metrics.fli
    elif metric == "APC":
        value = metrics.apc_depth
    else:
        raise KeyError(f"unknown metric {metric}, expected one of {METRICS}")
    if value in (NO_RECOVERY, NOT_APPLICABLE):
        return None
    return float(value)


def _check_interval(metric, value, lo, hi, unit=""):
    if value < lo:
        return Violation(metric, BELOW, f"{metric} {value:.1f}{unit} < {lo:.1f}{unit}")
    if value > hi:
        return Violation(metric, ABOVE, f"{metric} {value:.1f}{unit} > {hi:.1f}{unit}")
    return None


def criterion_violations(metrics: MetricSet, criteria: AcceptanceCriteria) -> List[Violation]:
    """ checks every applicable criterion and lists the violated ones

    A flagged IPR (no procedure decisions) is checked at its 0% value.
    """
    violations = []

    if metrics.csr == NOT_APPLICABLE:
        violations.append(Violation("CSR", MISMATCH, f"CSR NOT_APPLICABLE, ≥ {criteria.csr_min:.1f} required"))
    elif metrics.csr < criteria.csr_min:
        violations.append(Violation("CSR", BELOW, f"CSR {metrics.csr:.1f} < {criteria.csr_min:.1f}"))

    if criteria.requires_no_recovery:
        if metrics.ddt != NO_RECOVERY:
            violations.append(Violation("DDT", MISMATCH, f"DDT {metrics.ddt:.1f} min, NO_RECOVERY required"))
    else:
        lo, hi = criteria.ddt_rule
        if metrics.ddt == NO_RECOVERY:
            violations.append(Violation("DDT", MISMATCH, f"DDT NO_RECOVERY, [{lo:.1f}, {hi:.1f}] min required"))
        else:
            violation = _check_interval("DDT", metrics.ddt, lo, hi, " min")
            if violation:
                violations.append(violation)

    lo, hi = criteria.ipr_rule
    violation = _check_interval("IPR", metrics.ipr, lo, hi)
    if violation:
        violations.append(violation)

    if criteria.fli_min is not None:
        if metrics.fli == NOT_APPLICABLE:
            violations.append(Violation("FLI", MISMATCH, f"FLI NOT_APPLICABLE, ≥ {criteria.fli_min} required"))
        elif metrics.fli < criteria.fli_min:
            violations.append(Violation("FLI", BELOW, f"FLI {metrics.fli} < {criteria.fli_min}"))

    if criteria.apc_cascade_required is not None and metrics.apc_presence != criteria.apc_cascade_required:
        violations.append(Violation("APC", MISMATCH,
                                    f"APC presence {metrics.apc_presence}, {criteria.apc_cascade_required} required"))
    return violations


def gate_run(outcome: Outcome, criteria: AcceptanceCriteria) -> ValidityVerdict:
    """ conjunctive face-validity gate

    Partial satisfaction is not credited: the run passes only if no applicable criterion is violated.

    Args:
        outcome: a `MetricSet`, `Valid(MetricSet)` or `JsonFail`
        criteria (AcceptanceCriteria): the acceptance criteria of the run's scenario

    Returns:
        verdict (ValidityVerdict): `JSON_FAIL` for screening failures, `PASS` or `FAIL` otherwise
    """
    metrics = as_metrics(outcome)
    if metrics is None:
        return ValidityVerdict(run_id=outcome.run_id, status=JSON_FAIL, reason=outcome.reason)

    violations = criterion_violations(metrics, criteria)
    if not violations:
        return ValidityVerdict(run_id=metrics.run_id, status=PASS)
    return ValidityVerdict(run_id=metrics.run_id,
                           status=FAIL,
                           violated_criteria=tuple(v.metric for v in violations),
                           violations=tuple(violations))


def alignment_error(mean: float, reference: float) -> float:
    """ historical alignment error δ in percent

    Raises:
        ValueError: if the historical reference is 0
    """
    if reference == 0:
        raise ValueError("alignment error is undefined for a historical reference value of 0")
    return abs(mean - reference) / abs(reference) * 100


def coefficient_of_variation(values: Sequence[float]) -> float:
    """ sample standard deviation (n - 1 denominator) over the mean, as a ratio

    Raises:
        ValueError: with fewer than 2 values or a zero mean
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError(f"coefficient of variation needs at least 2 values, {values.size} found")
    mean = values.mean()
    if mean == 0:
        raise ValueError("coefficient of variation is undefined for a zero mean")
    return float(values.std(ddof=1) / mean)


def failure_attribution(verdicts: Sequence[ValidityVerdict]) -> Dict[str, float]:
    """ failure attribution rate ρ per metric

    Criteria violated jointly count towards each violated metric, so rates can add up to more than 1.

    Returns:
        rates (Dict[str,float]): ratio in `[0, 1]` for each of the five metrics

    Raises:
        ValueError: if there are no `FAIL` verdicts
    """
    failed = [v for v in verdicts if v.status == FAIL]
    if not failed:
        raise ValueError("failure attribution is undefined without FAIL runs")
    return {m: sum(1 for v in failed if m in v.violated_criteria) / len(failed) for m in METRICS}


def failure_directions(verdicts: Sequence[ValidityVerdict]) -> Dict[str, int]:
    """ number of failed runs per violated metric and direction, keyed `"IPR above"` etc. """
    counts = {}
    for verdict in verdicts:
        if verdict.status != FAIL:
            continue
        for v in verdict.violations:
            key = f"{v.metric} {v.direction}"
            counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


@dataclass(frozen=True)
class Descriptive:
    n: int
    mean: Optional[float] = None
    std: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None


def describe(values: Sequence[float]) -> Descriptive:
    """ mean, sample std, min and max; std needs 2 values, the rest 1 """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return Descriptive(n=0)
    std = float(values.std(ddof=1)) if values.size > 1 else None
    return Descriptive(n=int(values.size),
                       mean=float(values.mean()),
                       std=std,
                       min=float(values.min()),
                       max=float(values.max()))


def describe_metrics(runs: Sequence[MetricSet]) -> Dict[str, Descriptive]:
    stats = {}
    for m in METRICS:
        values = [metric_value(run, m) for run in runs]
        stats[m] = describe([x for x in values if x is not None])
    return stats


def _rate(count, total) -> Optional[float]:
    return count / total if total else None


def baseline_value(baseline: HistoricalBaseline, metric: str) -> Optional[float]:
    """ numeric historical reference for a metric, `None` when absent or `NO_RECOVERY` """
    value = {"DDT": baseline.ddt,
             "IPR": baseline.ipr,
             "CSR": baseline.csr,
             "FLI": baseline.fli,
             "APC": baseline.apc_depth}[metric]
    if value is None or value == NO_RECOVERY:
        return None
    return float(value)


@dataclass(frozen=True)
class BatchSummary:
    """ BatchSummary

    Rates are ratios in `[0, 1]`, or `None` when their denominator is 0. Alignment errors are percentages.
    DDT statistics only cover runs with a numeric DDT; the share of `NO_RECOVERY` runs is reported apart.

    Attributes:
        valid_stats (Dict[str,Descriptive]): per-metric statistics over the valid runs
        pass_stats (Dict[str,Descriptive]): per-metric statistics over the PASS runs
        fail_stats (Dict[str,Descriptive]): per-metric statistics over the FAIL runs
        alignment (Dict[str,float]): δ of the PASS-run mean against the historical value
        cv (Dict[str,float]): coefficient of variation over the PASS runs
        cv_valid (Dict[str,float]): coefficient of variation over the valid runs
        categorical_alignment (Dict[str,float]): share of PASS runs reproducing the historical recovery outcome
            (`DDT`) and cascade presence (`APC`)
        attribution (Dict[str,float]): ρ per metric, `None` without FAIL runs
        fail_directions (Dict[str,int]): failed runs per violated metric and direction
    """
    scenario_id: str
    n_total: int
    n_valid: int
    n_json_fail: int
    n_pass: int
    n_fail: int
    json_fail_rate: Optional[float]
    pass_rate: Optional[float]
    total_duration: float
    valid_stats: Dict[str, Descriptive] = field(default_factory=dict)
    pass_stats: Dict[str, Descriptive] = field(default_factory=dict)
    fail_stats: Dict[str, Descriptive] = field(default_factory=dict)
    alignment: Dict[str, Optional[float]] = field(default_factory=dict)
    cv: Dict[str, Optional[float]] = field(default_factory=dict)
    cv_valid: Dict[str, Optional[float]] = field(default_factory=dict)
    no_recovery_rate: Optional[float] = None
    pass_no_recovery_rate: Optional[float] = None
    apc_presence_rate: Optional[float] = None
    pass_apc_presence_rate: Optional[float] = None
    categorical_alignment: Dict[str, Optional[float]] = field(default_factory=dict)
    attribution: Optional[Dict[str, float]] = None
    fail_directions: Dict[str, int] = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _cv_or_none(values):
    try:
        return coefficient_of_variation(values)
    except ValueError:
        return None


def summarize_batch(outcomes: Sequence[Outcome],
                    scenario: Scenario,
                    verdicts: Optional[Sequence[ValidityVerdict]] = None) -> BatchSummary:
    """ aggregates the outcomes of one scenario's batch

    Args:
        outcomes: one `MetricSet`, `Valid` or `JsonFail` per run
        scenario (Scenario): the scenario all runs simulated
        verdicts: verdicts in the same order as `outcomes`, gated against the scenario criteria if not given

    Returns:
        summary (BatchSummary): validity counts, descriptive statistics, δ, CV and ρ

    Raises:
        ValueError: if there are no outcomes, or the verdicts don't match the outcomes
    """
    if not outcomes:
        raise ValueError("cannot summarize an empty batch")
    if verdicts is None:
        verdicts = [gate_run(o, scenario.criteria) for o in outcomes]
    if len(verdicts) != len(outcomes):
        raise ValueError(f"outcomes and verdicts don't match:\n"
                         f"\t{len(outcomes)} outcomes, {len(verdicts)} verdicts")

    valid, passed, failed = [], [], []
    for outcome, verdict in zip(outcomes, verdicts):
        metrics = as_metrics(outcome)
        if metrics is None:
            if verdict.status != JSON_FAIL:
                raise ValueError(f"run {verdict.run_id}: JSON failure with a {verdict.status} verdict")
            continue
        valid.append(metrics)
        if verdict.status == PASS:
            passed.append(metrics)
        elif verdict.status == FAIL:
            failed.append(metrics)
        else:
            raise ValueError(f"run {verdict.run_id}: valid metrics with a {verdict.status} verdict")

    n_total = len(outcomes)
    n_valid = len(valid)
    valid_stats = describe_metrics(valid)
    pass_stats = describe_metrics(passed)
    baseline = scenario.baseline

    alignment, cv, cv_valid = {}, {}, {}
    for m in METRICS:
        reference = baseline_value(baseline, m)
        mean = pass_stats[m].mean
        alignment[m] = alignment_error(mean, reference) if mean is not None and reference else None
        cv[m] = _cv_or_none([x for x in (metric_value(r, m) for r in passed) if x is not None])
        cv_valid[m] = _cv_or_none([x for x in (metric_value(r, m) for r in valid) if x is not None])

    historical_recovery = baseline.ddt != NO_RECOVERY
    categorical = {"DDT": _rate(sum(1 for r in passed if r.recovered == historical_recovery), len(passed)),
                   "APC": None}
    if baseline.apc_presence is not None:
        categorical["APC"] = _rate(sum(1 for r in passed if r.apc_presence == baseline.apc_presence), len(passed))

    fails = [v for v in verdicts if v.status == FAIL]
    return BatchSummary(scenario_id=scenario.scenario_id,
                        n_total=n_total,
                        n_valid=n_valid,
                        n_json_fail=n_total - n_valid,
                        n_pass=len(passed),
                        n_fail=len(failed),
                        json_fail_rate=_rate(n_total - n_valid, n_total),
                        pass_rate=_rate(len(passed), n_valid),
                        total_duration=scenario.total_duration,
                        valid_stats=valid_stats,
                        pass_stats=pass_stats,
                        fail_stats=describe_metrics(failed),
                        alignment=alignment,
                        cv=cv,
                        cv_valid=cv_valid,
                        no_recovery_rate=_rate(sum(1 for r in valid if not r.recovered), n_valid),
                        pass_no_recovery_rate=_rate(sum(1 for r in passed if not r.recovered), len(passed)),
                        apc_presence_rate=_rate(sum(1 for r in valid if r.apc_presence), n_valid),
                        pass_apc_presence_rate=_rate(sum(1 for r in passed if r.apc_presence), len(passed)),
                        categorical_alignment=categorical,
                        attribution=failure_attribution(fails) if fails else None,
                        fail_directions=failure_directions(verdicts))


@dataclass(frozen=True)
class RadarRow:
    metric: str
    sim_norm: float
    hist_norm: float


def emit_radar_data(summary: BatchSummary, baseline: HistoricalBaseline) -> List[RadarRow]:
    """ simulated and historical values normalized to `[0, 1]` per metric

    Axis maxima are the total simulated duration for DDT, 100 for the percentages, 10 for FLI and 2 for the
    cascade depth. The simulated value is the PASS-run mean, or the valid-run mean when no run passed.
    `NO_RECOVERY` normalizes to 1.0; a metric without a historical value gets 0.0.
    """
    stats, pool = (summary.pass_stats, summary.n_pass) if summary.n_pass > 0 else \
        (summary.valid_stats, summary.n_valid)
    axes = {"DDT": summary.total_duration, "IPR": 100.0, "CSR": 100.0, "APC": float(APC_MAX_DEPTH),
            "FLI": float(FLI_MAX)}

    rows = []
    for m in METRICS:
        mean = stats[m].mean if m in stats else None
        if mean is not None:
            sim = mean / axes[m]
        elif m == "DDT" and pool > 0:
            sim = 1.0
        else:
            sim = 0.0

        if m == "DDT" and baseline.ddt == NO_RECOVERY:
            hist = 1.0
        else:
            reference = baseline_value(baseline, m)
            hist = reference / axes[m] if reference is not None else 0.0
        rows.append(RadarRow(m, float(np.clip(sim, 0.0, 1.0)), float(np.clip(hist, 0.0, 1.0))))
    return rows


def radar_csv(rows: Sequence[RadarRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", "sim_norm", "hist_norm"])
    for row in rows:
        writer.writerow([row.metric, f"{row.sim_norm:.4f}", f"{row.hist_norm:.4f}"])
    return out.getvalue()


IPR_DISTRIBUTION_FIELDS = ("run_id", "status", "ipr", "ddt", "ipr_lo", "ipr_hi")


def ipr_distribution(outcomes: Sequence[Outcome],
                     verdicts: Sequence[ValidityVerdict],
                     criteria: AcceptanceCriteria) -> List[dict]:
    """ per-run IPR against the acceptance band, for every valid run """
    lo, hi = criteria.ipr_rule
    rows = []
    for outcome, verdict in zip(outcomes, verdicts):
        metrics = as_metrics(outcome)
        if metrics is None:
            continue
        rows.append({"run_id": metrics.run_id,
                     "status": verdict.status,
                     "ipr": metrics.ipr,
                     "ddt": metrics.ddt,
                     "ipr_lo": lo,
                     "ipr_hi": hi})
    return rows


def ipr_distribution_csv(rows: Sequence[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=IPR_DISTRIBUTION_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return out.getvalue()


def save_verdicts(verdicts: Sequence[ValidityVerdict], path: Union[str, Path]):
    write_atomic(path, json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n")


def load_verdicts(path: Union[str, Path]) -> List[ValidityVerdict]:
    return [ValidityVerdict.from_dict(v) for v in json.loads(Path(path).read_text(encoding="utf-8"))]


def pct(rate: Optional[float]) -> str:
    """ formats a ratio as a percentage with one decimal """
    return "n/a" if rate is None else f"{rate * 100:.1f}%"


def _num(value: Optional[float], digits=1) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


VALIDITY_HEADERS = ("Scenario", "Runs", "Valid", "JSON_FAIL", "JSON_FAIL rate", "PASS", "PASS rate")


def validity_row(summary: BatchSummary) -> list:
    return [summary.scenario_id, summary.n_total, summary.n_valid, summary.n_json_fail,
            pct(summary.json_fail_rate), summary.n_pass, pct(summary.pass_rate)]


def format_validity_table(summaries: Sequence[BatchSummary]) -> str:
    return tabulate([validity_row(s) for s in summaries], headers=VALIDITY_HEADERS, tablefmt="simple")


def format_comparison_table(summary: BatchSummary, baseline: HistoricalBaseline) -> str:
    """ PASS-run means against the historical values, with δ """
    rows = []
    for m in METRICS:
        s = summary.pass_stats[m]
        sim = "n/a" if s.mean is None else f"{s.mean:.1f} ± {_num(s.std)}"
        if m == "DDT" and baseline.ddt == NO_RECOVERY:
            hist = NO_RECOVERY
            sim = f"{sim} ({pct(summary.pass_no_recovery_rate)} {NO_RECOVERY})"
        else:
            hist = _num(baseline_value(baseline, m))
        delta = summary.alignment.get(m)
        rows.append([m, sim, hist, "n/a" if delta is None else f"{delta:.1f}%"])
    return tabulate(rows, headers=("Metric", "Simulated (PASS)", "Historical", "δ"), tablefmt="simple")


def format_descriptive_table(summary: BatchSummary, runs: str = "valid") -> str:
    """ descriptive statistics over the `valid`, `pass` or `fail` runs """
    stats = {"valid": summary.valid_stats, "pass": summary.pass_stats, "fail": summary.fail_stats}[runs]
    cvs = summary.cv_valid if runs == "valid" else summary.cv if runs == "pass" else {}
    rows = []
    for m in METRICS:
        s = stats[m]
        rows.append([m, s.n, _num(s.mean), _num(s.std), _num(s.min), _num(s.max), pct(cvs.get(m))])
    return tabulate(rows, headers=("Metric", "n", "Mean", "Std", "Min", "Max", "CV"), tablefmt="simple")


def format_attribution_table(summary: BatchSummary) -> str:
    if summary.attribution is None:
        return "no FAIL runs, failure attribution undefined"
    rows = [[m, round(summary.attribution[m] * summary.n_fail), pct(summary.attribution[m])] for m in METRICS]
    table = tabulate(rows, headers=("Metric", "FAIL runs violating", "ρ"), tablefmt="simple")
    directions = tabulate(list(summary.fail_directions.items()), headers=("Violation", "Runs"), tablefmt="simple")
    return f"{table}\n\n{directions}"


def format_intervention_table(stats: InterventionStats) -> str:
    rows = []
    for drift in stats.by_type.values():
        lo_hi = drift.primary_round_range
        rounds = "n/a" if lo_hi is None else f"R{lo_hi[0]}-R{lo_hi[1]}"
        rows.append([drift.drift_type.value, drift.intervention_count, drift.denominator, pct(drift.rate), rounds])
    return tabulate(rows, headers=("Drift type", "Interventions", "Agent turns", "Rate", "Rounds"),
                    tablefmt="simple")


def format_stats_report(summary: BatchSummary,
                        baseline: HistoricalBaseline,
                        interventions: Optional[InterventionStats] = None) -> str:
    sections = [f"{summary.scenario_id}: historical alignment",
                format_comparison_table(summary, baseline),
                f"{summary.scenario_id}: valid runs",
                format_descriptive_table(summary, "valid"),
                f"{summary.scenario_id}: failed runs",
                format_descriptive_table(summary, "fail"),
                f"{summary.scenario_id}: failure attribution",
                format_attribution_table(summary)]
    if interventions is not None:
        sections += [f"{summary.scenario_id}: moderator interventions", format_intervention_table(interventions)]
    return "\n\n".join(sections)


__all__ = [
    "PASS",
    "FAIL",
    "JSON_FAIL",
    "METRICS",
    "ABOVE",
    "BELOW",
    "MISMATCH",
    "Outcome",
    "Violation",
    "ValidityVerdict",
    "as_metrics",
    "metric_value",
    "criterion_violations",
    "gate_run",
    "alignment_error",
    "coefficient_of_variation",
    "failure_attribution",
    "failure_directions",
    "Descriptive",
    "describe",
    "describe_metrics",
    "baseline_value",
    "BatchSummary",
    "summarize_batch",
    "RadarRow",
    "emit_radar_data",
    "radar_csv",
    "IPR_DISTRIBUTION_FIELDS",
    "ipr_distribution",
    "ipr_distribution_csv",
    "save_verdicts",
    "load_verdicts",
    "pct",
    "VALIDITY_HEADERS",
    "validity_row",
    "format_validity_table",
    "format_comparison_table",
    "format_descriptive_table",
    "format_attribution_table",
    "format_intervention_table",
    "format_stats_report"
]
