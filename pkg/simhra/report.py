""" LLM report extraction

The report agent reads the raw interaction log and answers with a JSON document holding the five metrics.
Responses are screened strictly against `MetricDocument`: anything empty, unparseable, incomplete, non-finite or
out of range is recorded as a `JsonFail` with the reason, which the face-validity gate counts separately from
failed runs.
"""
import json
import math
from dataclasses import dataclass
from typing import Any, Union, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, ValidationInfo, field_validator, model_validator
from pydantic_core import PydanticCustomError

from simhra.backends import Backend, EVALUATION, PROMPT_VERSION, load_prompt
from simhra.dialogue import DialogueBuffer, render_context
from simhra.metrics import MetricSet, FLI_MAX, APC_MAX_DEPTH
from simhra.scenario import Scenario, NO_RECOVERY, NOT_APPLICABLE
from simhra.utils import logger, strip_fence

REQUIRED_FIELDS = ("ddt", "ipr", "csr", "apc_presence", "apc_depth", "fli")


@dataclass(frozen=True)
class Valid:
    metrics: MetricSet


@dataclass(frozen=True)
class JsonFail:
    reason: str
    run_id: str = ""


ExtractionOutcome = Union[Valid, JsonFail]


def _rejected(reason: str):
    return PydanticCustomError("metric_value", reason)


def _number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _ordinal(value):
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


class MetricDocument(BaseModel):
    """ MetricDocument

    Schema of the report agent's answer. Values arrive as parsed JSON and each field validator coerces or rejects
    one of them, the first rejection becomes the `JsonFail` reason. The run's total duration is passed as
    validation context (`{"total_duration": minutes}`) and bounds a numeric `ddt`.
    """
    model_config = ConfigDict(extra="ignore")

    ddt: Any
    ipr: Any
    no_procedure_decisions: Any = False
    csr: Any
    apc_presence: Any
    apc_depth: Any
    fli: Any

    @model_validator(mode="before")
    @classmethod
    def required_present(cls, doc):
        if not isinstance(doc, dict):
            raise _rejected("expected a JSON object")
        for name in REQUIRED_FIELDS:
            if doc.get(name) is None:
                raise _rejected(f"missing field {name}")
        return doc

    @field_validator("ddt", mode="before")
    @classmethod
    def ddt_minutes(cls, ddt, info: ValidationInfo):
        if ddt == NO_RECOVERY:
            return ddt
        if not _number(ddt):
            raise _rejected("ddt must be a number of minutes or NO_RECOVERY")
        total_duration = (info.context or {}).get("total_duration")
        if ddt < 0 or (total_duration is not None and ddt > total_duration):
            raise _rejected("ddt out of range")
        return float(ddt)

    @field_validator("ipr", mode="before")
    @classmethod
    def ipr_percent(cls, ipr):
        if not _number(ipr):
            raise _rejected("ipr must be a number")
        if not 0 <= ipr <= 100:
            raise _rejected("ipr out of range")
        return float(ipr)

    @field_validator("no_procedure_decisions", mode="before")
    @classmethod
    def flag(cls, value):
        if not isinstance(value, bool):
            raise _rejected("no_procedure_decisions must be a boolean")
        return value

    @field_validator("csr", mode="before")
    @classmethod
    def csr_percent(cls, csr):
        if csr == NOT_APPLICABLE:
            return csr
        if not _number(csr):
            raise _rejected("csr must be a number or NOT_APPLICABLE")
        if not 0 <= csr <= 100:
            raise _rejected("csr out of range")
        return float(csr)

    @field_validator("apc_presence", mode="before")
    @classmethod
    def presence(cls, value):
        if not isinstance(value, bool):
            raise _rejected("apc_presence must be a boolean")
        return value

    @field_validator("apc_depth", mode="before")
    @classmethod
    def depth(cls, value):
        depth = _ordinal(value)
        if depth is None:
            raise _rejected("apc_depth must be an integer")
        if not 0 <= depth <= APC_MAX_DEPTH:
            raise _rejected("apc_depth out of range")
        return depth

    @field_validator("fli", mode="before")
    @classmethod
    def fli_level(cls, value):
        if value == NOT_APPLICABLE:
            return value
        fli = _ordinal(value)
        if fli is None:
            raise _rejected("fli must be an integer or NOT_APPLICABLE")
        if not 0 <= fli <= FLI_MAX:
            raise _rejected("fli out of range")
        return fli

    @model_validator(mode="after")
    def cascade_consistent(self):
        if self.apc_presence != (self.apc_depth >= 1):
            raise _rejected("apc_presence inconsistent with apc_depth")
        return self

    def to_metrics(self, run_id: str) -> MetricSet:
        return MetricSet(run_id=run_id,
                         ddt=self.ddt,
                         ipr=self.ipr,
                         no_procedure_decisions=self.no_procedure_decisions,
                         csr=self.csr,
                         apc_presence=self.apc_presence,
                         apc_depth=self.apc_depth,
                         fli=self.fli,
                         extractor="llm",
                         prompt_version=PROMPT_VERSION)


def parse_metric_json(text: Optional[str],
                      run_id: str = "",
                      total_duration: Optional[float] = None) -> ExtractionOutcome:
    """ screens a report response against `MetricDocument`

    A markdown code fence around the document is tolerated, everything else must be exactly one JSON object with
    the fields `ddt`, `ipr`, `csr`, `apc_presence`, `apc_depth` and `fli` (`no_procedure_decisions` optional).
    `NaN` and `Infinity` literals are rejected like any other non-number.

    Args:
        text (str): raw response text
        run_id (str): run id stamped on the resulting metrics
        total_duration (float): optional upper bound for a numeric `ddt`, in minutes

    Returns:
        outcome: `Valid(MetricSet)` or `JsonFail(reason)`, never raises
    """
    if text is None or not text.strip():
        return JsonFail("empty response", run_id)
    try:
        doc = json.loads(strip_fence(text))
    except json.JSONDecodeError as e:
        return JsonFail(f"malformed JSON: {e.msg}", run_id)
    try:
        document = MetricDocument.model_validate(doc, context={"total_duration": total_duration})
    except ValidationError as e:
        return JsonFail(e.errors()[0]["msg"], run_id)
    return Valid(document.to_metrics(run_id))


def report_messages(transcript: DialogueBuffer, scenario: Scenario):
    t = scenario.temporal
    prompt = load_prompt("report.txt").format(scenario_id=scenario.scenario_id,
                                              onset_round=t.onset_round,
                                              minutes_per_round=f"{t.minutes_per_round:g}",
                                              total_rounds=t.total_rounds,
                                              total_duration=f"{t.total_duration:g}",
                                              transcript=render_context(transcript))
    return [{"role": "user", "content": prompt}]


def extract_metrics_llm(transcript: DialogueBuffer, backend: Backend, scenario: Scenario,
                        run_id: Optional[str] = None) -> ExtractionOutcome:
    """ asks the evaluation model for the five metrics and screens its answer

    The request uses the evaluation decoding parameters (temperature 0.2).

    Returns:
        outcome: `Valid(MetricSet)` or `JsonFail(reason)`

    Raises:
        InfraFailure: if the endpoint can't be reached, which is not a JSON failure
    """
    if run_id is None:
        run_id = transcript[0].run_id if len(transcript) > 0 else ""
    response = backend.complete(report_messages(transcript, scenario), EVALUATION)
    outcome = parse_metric_json(response, run_id=run_id, total_duration=scenario.total_duration)
    if isinstance(outcome, JsonFail):
        logger.warning(f"report for {run_id} rejected: {outcome.reason}")
    return outcome


__all__ = [
    "REQUIRED_FIELDS",
    "MetricDocument",
    "Valid",
    "JsonFail",
    "ExtractionOutcome",
    "parse_metric_json",
    "report_messages",
    "extract_metrics_llm"
]
