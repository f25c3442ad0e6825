import logging
from pathlib import Path

import pytest
from simhra.dialogue import DialogueBuffer, AnnotationSet, Utterance, TranscriptError, load_transcript
from simhra.moderator import *
from simhra.scenario import load_scenario

DATA = Path(__file__).parent / "data"


def _golden(scenario_id):
    return load_transcript(DATA / f"{scenario_id}.golden.jsonl")


def _with_annotation(buffer, round_n, speaker, **changes):
    """ copy of a transcript with some annotation fields of one utterance replaced """
    out = DialogueBuffer()
    for u in buffer:
        if u.round == round_n and u.speaker == speaker:
            fields = vars(u.annotations).copy() if u.annotations else {}
            fields.update(changes)
            u = u.annotated(AnnotationSet(**fields))
        out.append(u)
    return out


def _with_text(buffer, round_n, speaker, text):
    out = DialogueBuffer()
    for u in buffer:
        if u.round == round_n and u.speaker == speaker:
            u = Utterance(u.run_id, u.round, u.turn_index, u.speaker, text, u.annotations)
        out.append(u)
    return out


class FakeEvaluator:
    def __init__(self, reply):
        self.reply = reply
        self.calls = []

    def complete(self, messages, decoding=None, seed=None):
        self.calls.append((messages, decoding))
        return self.reply


def test_golden_tmi_has_no_drift():
    s = load_scenario("tmi1979")
    buffer = _golden("tmi1979")
    for r in buffer.rounds():
        assert evaluate_round(s, buffer, r) == []


def test_premature_escalation():
    s = load_scenario("tmi1979")
    buffer = _with_annotation(_golden("tmi1979"), 5, "Authority", recovery_identification=True)

    findings = evaluate_round(s, buffer, 5)
    assert len(findings) == 1
    finding = findings[0]
    assert finding.drift_type == DriftType.PREMATURE_ESCALATION
    assert finding.criterion == Criterion.STAGE_APPROPRIATENESS
    assert finding.agent == "Authority"
    assert finding.round == 5
    assert finding.evidence.round == 5


def test_recovery_after_earliest_round_is_not_drift():
    s = load_scenario("tmi1979")
    buffer = _with_annotation(_golden("tmi1979"), 12, "Operator", recovery_identification=True)
    assert evaluate_round(s, buffer, 12) == []


def test_rational_override():
    s = load_scenario("tmi1979")
    buffer = _with_annotation(_golden("tmi1979"), 6, "Operator", frame_reference=True, frame_reinforcement=False)
    findings = evaluate_round(s, buffer, 6)
    assert [f.drift_type for f in findings] == [DriftType.RATIONAL_OVERRIDE]
    assert findings[0].criterion == Criterion.HISTORICAL_PLAUSIBILITY

    # keyword match, case insensitive
    buffer = _with_text(_golden("tmi1979"), 8, "Coordinator", "Maybe the PORV is STUCK OPEN after all.")
    findings = evaluate_round(s, buffer, 8)
    assert [(f.agent, f.drift_type) for f in findings] == [("Coordinator", DriftType.RATIONAL_OVERRIDE)]

    # after the frame release round abandoning the frame is plausible
    buffer = _with_text(_golden("tmi1979"), 13, "Coordinator", "The valve is stuck open.")
    assert evaluate_round(s, buffer, 13) == []


def test_authority_inversion_needs_strict_hierarchy():
    tmi = load_scenario("tmi1979")
    buffer = _golden("tmi1979")
    challenge = [u for u in buffer.in_round(10) if u.annotations and u.annotations.assertive_challenge_to]
    assert challenge
    assert evaluate_round(tmi, buffer, 10) == []

    chernobyl = load_scenario("chernobyl1986")
    findings = evaluate_round(chernobyl, _golden("chernobyl1986"), 7)
    assert [(f.agent, f.drift_type) for f in findings] == [("Operator", DriftType.AUTHORITY_INVERSION)]
    assert findings[0].criterion == Criterion.ROLE_CONSISTENCY


def test_issue_notes():
    s = load_scenario("chernobyl1986")
    findings = evaluate_round(s, _golden("chernobyl1986"), 7)
    notes = issue_notes(findings, s)
    assert len(notes) == 1
    note = notes[0]
    assert note.target_agent == "Operator"
    assert (note.round_issued, note.round_applies) == (7, 8)
    assert "Toptunov" in note.text

    final = [DriftFinding(f.run_id, 12, f.agent, f.drift_type, f.evidence, f.criterion) for f in findings]
    assert issue_notes(final, s) == []


def test_guidance_expires_after_one_round():
    s = load_scenario("chernobyl1986")
    moderator = Moderator(s)
    buffer = _golden("chernobyl1986")
    for r in range(1, 8):
        moderator.moderate(buffer, r)

    assert len(moderator.notes) == 1
    assert moderator.guidance_for("Operator", 8) == (moderator.notes[0].text,)
    assert moderator.guidance_for("Operator", 9) == ()
    assert moderator.guidance_for("Authority", 8) == ()
    assert moderator.guidance_for("Operator", 7) == ()


def test_custom_templates(tmp_path):
    path = tmp_path / "notes.yaml"
    path.write_text("PrematureEscalation: 'PE {person}'\nRationalOverride: 'RO {round}'\n"
                    "AuthorityInversion: 'AI {role_name}'\n")
    templates = load_note_templates(path)
    assert templates[DriftType.AUTHORITY_INVERSION] == "AI {role_name}"

    s = load_scenario("chernobyl1986")
    moderator = Moderator(s, templates=templates)
    notes = moderator.moderate(_golden("chernobyl1986"), 7)
    assert [n.text for n in notes] == ["AI Operator"]

    path.write_text("PrematureEscalation: x\n")
    with pytest.raises(ValueError, match="RationalOverride"):
        load_note_templates(path)


def test_llm_moderator():
    s = load_scenario("chernobyl1986")
    buffer = _golden("chernobyl1986")
    evaluator = FakeEvaluator('[{"agent": "Operator", "drift_type": "AuthorityInversion", "turn_index": 3}]')
    moderator = Moderator(s, mode="llm", backend=evaluator)

    notes = moderator.moderate(buffer, 7)
    assert [(n.target_agent, n.drift_type) for n in notes] == [("Operator", DriftType.AUTHORITY_INVERSION)]
    messages, decoding = evaluator.calls[0]
    assert decoding.temperature == 0.2
    assert "R7.3 [Operator]" in messages[0]["content"]
    assert "R7.0 [WORLD]" not in messages[0]["content"]


@pytest.mark.parametrize("reply", [
    "```json\n[{\"agent\": \"Operator\", \"drift_type\": \"AuthorityInversion\", \"turn_index\": 3}]\n```",
    "```\n[{\"agent\": \"Operator\", \"drift_type\": \"AuthorityInversion\", \"turn_index\": 3}]\n```\n",
])
def test_llm_moderator_fenced_reply(reply, caplog):
    s = load_scenario("chernobyl1986")
    moderator = Moderator(s, mode="llm", backend=FakeEvaluator(reply))
    with caplog.at_level(logging.WARNING, logger="simhra"):
        notes = moderator.moderate(_golden("chernobyl1986"), 7)
    assert [(n.target_agent, n.drift_type) for n in notes] == [("Operator", DriftType.AUTHORITY_INVERSION)]
    assert "invalid findings" not in caplog.text


def test_llm_moderator_invalid_output(caplog):
    s = load_scenario("tmi1979")
    buffer = _golden("tmi1979")
    for reply in (None, "no drift found", '{"agent": "Operator"}', '[{"agent": "Nobody", "drift_type": "x"}]',
                  '[{"agent": "Operator", "drift_type": "AuthorityInversion", "turn_index": 7}]'):
        moderator = Moderator(s, mode="llm", backend=FakeEvaluator(reply))
        with caplog.at_level(logging.WARNING, logger="simhra"):
            assert moderator.moderate(buffer, 3) == []
    assert "invalid findings" in caplog.text


def test_moderator_modes():
    s = load_scenario("tmi1979")
    with pytest.raises(ValueError):
        Moderator(s, mode="human")
    with pytest.raises(ValueError):
        Moderator(s, mode="llm")


def test_note_log(tmp_path):
    notes = [ModeratorNote("Operator", 7, 8, DriftType.AUTHORITY_INVERSION, "keep to the chain of command"),
             ModeratorNote("Authority", 2, 3, DriftType.PREMATURE_ESCALATION, "too early")]
    path = tmp_path / "run.jsonl.moderator"
    save_note_log(notes, path)
    assert load_note_log(path) == notes

    save_note_log([], path)
    assert load_note_log(path) == []

    path.write_text(note_to_json(notes[0]) + "\n" + '{"target_agent": "Operator"}\n')
    with pytest.raises(TranscriptError) as e:
        load_note_log(path)
    assert e.value.index == 1

    path.write_text(note_to_json(notes[0]).replace("AuthorityInversion", "Daydreaming") + "\n")
    with pytest.raises(TranscriptError):
        load_note_log(path)


def test_intervention_stats():
    note = ModeratorNote("Operator", 3, 4, DriftType.PREMATURE_ESCALATION, "x")
    logs = [[note] * 100, [note] * 63]
    stats = intervention_stats(logs, 900, "tmi1979")

    pe = stats[DriftType.PREMATURE_ESCALATION]
    assert pe.intervention_count == 163
    assert round(pe.rate * 100, 1) == 18.1
    assert pe.primary_round_range == (3, 3)
    assert stats[DriftType.RATIONAL_OVERRIDE].intervention_count == 0
    assert stats[DriftType.RATIONAL_OVERRIDE].primary_round_range is None
    assert stats.to_dict()["drift_types"]["PrematureEscalation"]["intervention_count"] == 163


def test_intervention_round_range():
    notes = [ModeratorNote("Authority", r, r + 1, DriftType.RATIONAL_OVERRIDE, "x") for r in (4, 9, 6)]
    stats = intervention_stats([notes], 45)
    assert stats[DriftType.RATIONAL_OVERRIDE].primary_round_range == (4, 9)
    assert stats[DriftType.RATIONAL_OVERRIDE].rate == pytest.approx(3 / 45)


def test_intervention_stats_errors():
    with pytest.raises(ValueError):
        intervention_stats([], 0)
    note = ModeratorNote("Operator", 3, 4, DriftType.PREMATURE_ESCALATION, "x")
    with pytest.raises(ValueError):
        intervention_stats([[note] * 5], 4)
