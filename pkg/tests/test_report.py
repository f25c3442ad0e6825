import json
import logging
from pathlib import Path

import pytest
from simhra.backends import InfraFailure, PROMPT_VERSION
from simhra.dialogue import load_transcript
from simhra.metrics import extract_metrics_rules
from simhra.report import *
from simhra.scenario import load_scenario, NO_RECOVERY, NOT_APPLICABLE

DATA = Path(__file__).parent / "data"

GOOD = {"ddt": 136.7, "ipr": 33.3, "csr": 100, "apc_presence": True, "apc_depth": 1, "fli": 5}


def _doc(**changes):
    doc = dict(GOOD)
    for name, value in changes.items():
        if value is ...:
            del doc[name]
        else:
            doc[name] = value
    return json.dumps(doc)


class FakeReporter:
    def __init__(self, reply=None, error=None):
        self.reply = reply
        self.error = error
        self.calls = []

    def complete(self, messages, decoding=None, seed=None):
        self.calls.append((messages, decoding))
        if self.error is not None:
            raise self.error
        return self.reply


def test_valid_document():
    outcome = parse_metric_json(_doc(), run_id="r1", total_duration=150.0)
    assert isinstance(outcome, Valid)
    m = outcome.metrics
    assert m.run_id == "r1"
    assert m.ddt == pytest.approx(136.7)
    assert m.ipr == pytest.approx(33.3)
    assert m.csr == 100.0
    assert (m.apc_presence, m.apc_depth, m.fli) == (True, 1, 5)
    assert m.extractor == "llm"
    assert m.prompt_version == PROMPT_VERSION
    assert not m.no_procedure_decisions


def test_sentinels():
    outcome = parse_metric_json(_doc(ddt=NO_RECOVERY, csr=NOT_APPLICABLE, fli=NOT_APPLICABLE,
                                     ipr=0, no_procedure_decisions=True))
    assert isinstance(outcome, Valid)
    assert outcome.metrics.ddt == NO_RECOVERY
    assert outcome.metrics.csr == NOT_APPLICABLE
    assert outcome.metrics.fli == NOT_APPLICABLE
    assert outcome.metrics.no_procedure_decisions


def test_fenced_document():
    text = "```json\n" + _doc() + "\n```"
    assert isinstance(parse_metric_json(text), Valid)
    assert isinstance(parse_metric_json("```\n" + _doc() + "\n```"), Valid)
    # integral floats are accepted for ordinals
    assert parse_metric_json(_doc(apc_depth=1.0, fli=5.0)).metrics.fli == 5


@pytest.mark.parametrize("text, reason", [
    (None, "empty response"),
    ("   ", "empty response"),
    ("The metrics are DDT 136 and IPR 33.", "malformed JSON"),
    ('{"ddt": 136.7, "ipr": 33.3', "malformed JSON"),
    ("[1, 2, 3]", "expected a JSON object"),
    ("Here you go: " + _doc(), "malformed JSON"),
    (_doc(fli=...), "missing field fli"),
    (_doc(csr=None), "missing field csr"),
    (_doc(ddt="soon"), "ddt must be a number"),
    (_doc(ddt=-5), "ddt out of range"),
    (_doc(ddt=151), "ddt out of range"),
    (_doc(ipr=120), "ipr out of range"),
    (_doc(ipr="33%"), "ipr must be a number"),
    (_doc(ipr=True), "ipr must be a number"),
    (_doc(csr=-1), "csr out of range"),
    (_doc(apc_presence="yes"), "apc_presence must be a boolean"),
    (_doc(apc_depth=1.5), "apc_depth must be an integer"),
    (_doc(apc_depth=3), "apc_depth out of range"),
    (_doc(apc_presence=False), "apc_presence inconsistent with apc_depth"),
    (_doc(fli=11), "fli out of range"),
    (_doc(fli="high"), "fli must be an integer"),
    (_doc(no_procedure_decisions="no"), "no_procedure_decisions must be a boolean"),
    (_doc(ddt=float("inf")), "ddt must be a number"),
    (_doc(ipr=float("nan")), "ipr must be a number"),
    (_doc(csr=float("-inf")), "csr must be a number"),
    (_doc(fli=float("inf")), "fli must be an integer"),
    ('{"ddt": NaN, "ipr": 33.3, "csr": 100, "apc_presence": true, "apc_depth": 1, "fli": 5}', "ddt must be a number"),
])
def test_json_fail(text, reason):
    outcome = parse_metric_json(text, run_id="r", total_duration=150.0)
    assert isinstance(outcome, JsonFail)
    assert outcome.reason.startswith(reason)
    assert outcome.run_id == "r"


def test_metric_document_duration_context():
    doc = json.loads(_doc(ddt=151))
    assert MetricDocument.model_validate(doc).ddt == 151.0
    with pytest.raises(ValueError, match="ddt out of range"):
        MetricDocument.model_validate(doc, context={"total_duration": 150.0})


def test_extract_metrics_llm():
    s = load_scenario("tmi1979")
    transcript = load_transcript(DATA / "tmi1979.golden.jsonl")
    reporter = FakeReporter(_doc(ddt=136.67, ipr=33.33))

    outcome = extract_metrics_llm(transcript, reporter, s)
    assert isinstance(outcome, Valid)
    assert outcome.metrics.run_id == "tmi1979-s0"

    messages, decoding = reporter.calls[0]
    assert decoding.temperature == 0.2
    assert "R14.2 [Coordinator]" in messages[0]["content"]

    rules = extract_metrics_rules(transcript, s)
    assert outcome.metrics.ddt == pytest.approx(rules.ddt, abs=0.01)
    assert outcome.metrics.fli == rules.fli


def test_extract_metrics_llm_json_fail(caplog):
    s = load_scenario("chernobyl1986")
    transcript = load_transcript(DATA / "chernobyl1986.golden.jsonl")
    # chernobyl runs last 24 minutes
    reporter = FakeReporter(_doc(ddt=60))
    with caplog.at_level(logging.WARNING, logger="simhra"):
        outcome = extract_metrics_llm(transcript, reporter, s, run_id="c-001")
    assert outcome == JsonFail("ddt out of range", "c-001")
    assert "c-001" in caplog.text


def test_extract_metrics_llm_infra_failure():
    s = load_scenario("tmi1979")
    transcript = load_transcript(DATA / "tmi1979.golden.jsonl")
    with pytest.raises(InfraFailure):
        extract_metrics_llm(transcript, FakeReporter(error=InfraFailure("down")), s)
