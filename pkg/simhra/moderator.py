""" End-of-round moderation

The moderator inspects the agent utterances of each round for behavioral drift and answers with hidden
corrective notes that reach the drifting agent's private context in the next round only. Notes are kept in a
sidecar log next to the transcript and never enter the public dialogue.
"""
import json
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
from typing import List, Optional, Iterable, Dict, Tuple, Union

import yaml

from simhra.backends import EVALUATION, load_prompt
from simhra.dialogue import DialogueBuffer, Utterance, TranscriptError, authority_rank
from simhra.scenario import Scenario, ROLES
from simhra.utils import logger, strip_fence, write_atomic

NOTE_SUFFIX = ".moderator"


class DriftType(Enum):
    PREMATURE_ESCALATION = "PrematureEscalation"
    RATIONAL_OVERRIDE = "RationalOverride"
    AUTHORITY_INVERSION = "AuthorityInversion"


class Criterion(Enum):
    ROLE_CONSISTENCY = "RoleConsistency"
    HISTORICAL_PLAUSIBILITY = "HistoricalPlausibility"
    STAGE_APPROPRIATENESS = "StageAppropriateness"


CRITERIA = {DriftType.PREMATURE_ESCALATION: Criterion.STAGE_APPROPRIATENESS,
            DriftType.RATIONAL_OVERRIDE: Criterion.HISTORICAL_PLAUSIBILITY,
            DriftType.AUTHORITY_INVERSION: Criterion.ROLE_CONSISTENCY}


@dataclass(frozen=True)
class DriftFinding:
    """ Drift detected in one utterance

    Attributes:
        evidence (Utterance): the buffer entry that triggered the finding
    """
    run_id: str
    round: int
    agent: str
    drift_type: DriftType
    evidence: Utterance
    criterion: Criterion


@dataclass(frozen=True)
class ModeratorNote:
    target_agent: str
    round_issued: int
    round_applies: int
    drift_type: DriftType
    text: str


def mentions_abandonment(text: str, keywords: Iterable[str]) -> bool:
    text = text.lower()
    return any(keyword.lower() in text for keyword in keywords)


def evaluate_round(scenario: Scenario, buffer: DialogueBuffer, round_n: int) -> List[DriftFinding]:
    """ rule-based drift detection over the agent utterances of one round

    Rules:
        * PrematureEscalation: `recovery_identification` before `drift.earliest_plausible_recovery_round`
        * RationalOverride: the locked frame is abandoned (a frame-referencing utterance that doesn't reinforce
          it, or one of `drift.frame_abandon_keywords`) before `drift.frame_release_round`
        * AuthorityInversion: an assertive challenge to a higher-authority role under a strict hierarchy

    Returns:
        findings (`List[DriftFinding]`): findings in buffer order
    """
    drift = scenario.drift
    findings = []
    for u in buffer.in_round(round_n):
        if not u.is_agent:
            continue
        a = u.annotations
        detected = []
        if a is not None and a.recovery_identification and round_n < drift.earliest_plausible_recovery_round:
            detected.append(DriftType.PREMATURE_ESCALATION)
        if round_n < drift.frame_release_round:
            abandons = a is not None and a.abandons_frame
            if abandons or mentions_abandonment(u.text, drift.frame_abandon_keywords):
                detected.append(DriftType.RATIONAL_OVERRIDE)
        if a is not None and a.assertive_challenge_to is not None and drift.strict_hierarchy:
            if authority_rank(a.assertive_challenge_to) > authority_rank(u.speaker):
                detected.append(DriftType.AUTHORITY_INVERSION)

        for drift_type in detected:
            logger.debug(f"R{u.round}.{u.turn_index} {u.speaker}: {drift_type.value}")
            findings.append(DriftFinding(run_id=u.run_id,
                                         round=round_n,
                                         agent=u.speaker,
                                         drift_type=drift_type,
                                         evidence=u,
                                         criterion=CRITERIA[drift_type]))
    return findings


def load_note_templates(path: Optional[Union[str, Path]] = None) -> Dict[DriftType, str]:
    path = Path(path) if path is not None else Path(__file__).parent / "prompts" / "notes.yaml"
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    missing = [t.value for t in DriftType if t.value not in data]
    if missing:
        raise ValueError(f"note templates {path} missing drift types: {missing}")
    return {t: data[t.value] for t in DriftType}


def issue_notes(findings: Iterable[DriftFinding],
                scenario: Scenario,
                templates: Optional[Dict[DriftType, str]] = None) -> List[ModeratorNote]:
    """ one hidden note per finding, delivered to the finding's agent in the next round

    Findings in the final round produce no note.
    """
    templates = templates if templates is not None else load_note_templates()
    notes = []
    for finding in findings:
        if finding.round >= scenario.total_rounds:
            continue
        role = scenario.role(finding.agent)
        text = templates[finding.drift_type].format(person=role.historical_person,
                                                    role_name=role.role_name,
                                                    round=finding.round,
                                                    locked_frame=scenario.drift.locked_frame_description)
        notes.append(ModeratorNote(target_agent=finding.agent,
                                   round_issued=finding.round,
                                   round_applies=finding.round + 1,
                                   drift_type=finding.drift_type,
                                   text=text))
    return notes


class Moderator:
    """ Moderator

    Per-run moderation state: evaluates each round, keeps the issued notes and serves them to agents.

    Args:
        scenario (Scenario): the scenario being simulated
        mode (str): `rules` (reference detectors) or `llm` (judged by the evaluation model)
        backend: backend with a `complete` method, required for the `llm` mode
        templates (dict): optional note templates per `DriftType`

    Attributes:
        notes (List[ModeratorNote]): every note issued so far, in issue order
        findings (List[DriftFinding]): every finding so far
    """

    def __init__(self, scenario: Scenario, mode="rules", backend=None, templates=None):
        if mode not in ("rules", "llm"):
            raise ValueError(f"unknown moderator mode {mode!r}\n"
                             f"\texpected rules or llm")
        if mode == "llm" and backend is None:
            raise ValueError("the llm moderator mode requires a backend")
        self.scenario = scenario
        self.mode = mode
        self.backend = backend
        self.templates = templates if templates is not None else load_note_templates()
        self.notes: List[ModeratorNote] = []
        self.findings: List[DriftFinding] = []

    def evaluate_round(self, buffer: DialogueBuffer, round_n: int) -> List[DriftFinding]:
        if self.mode == "rules":
            return evaluate_round(self.scenario, buffer, round_n)
        return self._evaluate_llm(buffer, round_n)

    def _evaluate_llm(self, buffer, round_n) -> List[DriftFinding]:
        drift = self.scenario.drift
        utterances = [u for u in buffer.in_round(round_n) if u.is_agent]
        prompt = load_prompt("moderator.txt").format(
            scenario_id=self.scenario.scenario_id,
            round=round_n,
            locked_frame=drift.locked_frame_description,
            earliest_recovery=drift.earliest_plausible_recovery_round,
            frame_release=drift.frame_release_round,
            strict_hierarchy="yes" if drift.strict_hierarchy else "no",
            utterances="\n".join(f"R{u.round}.{u.turn_index} [{u.speaker}]: {u.text}" for u in utterances))
        text = self.backend.complete([{"role": "user", "content": prompt}], EVALUATION)

        by_turn = {(u.speaker, u.turn_index): u for u in utterances}
        try:
            items = json.loads(strip_fence(text or ""))
            if not isinstance(items, list):
                raise ValueError("expected a JSON list")
            findings = []
            for item in items:
                drift_type = DriftType(item["drift_type"])
                evidence = by_turn[(item["agent"], item["turn_index"])]
                findings.append(DriftFinding(run_id=evidence.run_id,
                                             round=round_n,
                                             agent=evidence.speaker,
                                             drift_type=drift_type,
                                             evidence=evidence,
                                             criterion=CRITERIA[drift_type]))
            return findings
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"moderator response for round {round_n} ignored, invalid findings: {e}")
            return []

    def moderate(self, buffer: DialogueBuffer, round_n: int) -> List[ModeratorNote]:
        """ evaluates a completed round and issues the notes for the next one """
        findings = self.evaluate_round(buffer, round_n)
        notes = issue_notes(findings, self.scenario, self.templates)
        self.findings.extend(findings)
        self.notes.extend(notes)
        if notes:
            logger.info(f"round {round_n}: {len(notes)} moderator note(s) issued to "
                        f"{', '.join(sorted({n.target_agent for n in notes}))}")
        return notes

    def guidance_for(self, agent: str, round_n: int) -> Tuple[str, ...]:
        """ texts of the notes delivered to `agent` in `round_n`, notes from earlier rounds have expired """
        return tuple(note.text for note in self.notes
                     if note.target_agent == agent and note.round_applies == round_n)


# ----------------------------------------------------------------------------------------------------------------
# note logs
# ----------------------------------------------------------------------------------------------------------------

def note_to_json(note: ModeratorNote) -> str:
    record = asdict(note)
    record["drift_type"] = note.drift_type.value
    return json.dumps(record, ensure_ascii=False)


def note_log_text(notes: Iterable[ModeratorNote]) -> str:
    return "".join(note_to_json(note) + "\n" for note in notes)


def save_note_log(notes: Iterable[ModeratorNote], path: Union[str, Path]):
    write_atomic(path, note_log_text(notes))


def load_note_log(path: Union[str, Path]) -> List[ModeratorNote]:
    """
    Raises:
        TranscriptError: with the index of the malformed record
    """
    notes = []
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    for i, line in enumerate(lines):
        try:
            record = json.loads(line)
            note = ModeratorNote(target_agent=record["target_agent"],
                                 round_issued=int(record["round_issued"]),
                                 round_applies=int(record["round_applies"]),
                                 drift_type=DriftType(record["drift_type"]),
                                 text=record["text"])
        except json.JSONDecodeError as e:
            raise TranscriptError(f"malformed JSON: {e.msg}", index=i)
        except KeyError as e:
            raise TranscriptError(f"missing field {e.args[0]}", index=i)
        except (TypeError, ValueError) as e:
            raise TranscriptError(str(e), index=i)
        if note.target_agent not in ROLES:
            raise TranscriptError(f"invalid target_agent {note.target_agent!r}", index=i)
        notes.append(note)
    return notes


# ----------------------------------------------------------------------------------------------------------------
# intervention statistics
# ----------------------------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftStats:
    drift_type: DriftType
    intervention_count: int
    denominator: int
    rate: float
    primary_round_range: Optional[Tuple[int, int]]


@dataclass(frozen=True)
class InterventionStats:
    """ Moderator intervention statistics

    Rates use the total number of agent turns across all runs as denominator.
    """
    scenario_id: str
    denominator: int
    by_type: Dict[DriftType, DriftStats]

    def __getitem__(self, drift_type: DriftType) -> DriftStats:
        return self.by_type[drift_type]

    def to_dict(self):
        return {"scenario_id": self.scenario_id,
                "denominator": self.denominator,
                "drift_types": {t.value: {"intervention_count": s.intervention_count,
                                          "rate": s.rate,
                                          "primary_round_range": list(s.primary_round_range)
                                          if s.primary_round_range else None}
                                for t, s in self.by_type.items()}}


def intervention_stats(note_logs: Iterable[Iterable[ModeratorNote]],
                       total_agent_turns: int,
                       scenario_id: str = "") -> InterventionStats:
    """ intervention counts, rates and round ranges per drift type

    Args:
        note_logs: the note log of each run
        total_agent_turns (int): number of agent turns across the same runs

    Raises:
        ValueError: if `total_agent_turns` is zero or smaller than the number of notes
    """
    if total_agent_turns <= 0:
        raise ValueError(f"intervention rate undefined:\n"
                         f"\ttotal agent turns must be positive, got {total_agent_turns}")
    rounds = {t: [] for t in DriftType}
    for notes in note_logs:
        for note in notes:
            rounds[note.drift_type].append(note.round_issued)
    total = sum(len(r) for r in rounds.values())
    if total > total_agent_turns:
        raise ValueError(f"inconsistent note logs:\n"
                         f"\t{total} notes for only {total_agent_turns} agent turns")

    by_type = {t: DriftStats(drift_type=t,
                             intervention_count=len(r),
                             denominator=total_agent_turns,
                             rate=len(r) / total_agent_turns,
                             primary_round_range=(min(r), max(r)) if r else None)
               for t, r in rounds.items()}
    return InterventionStats(scenario_id=scenario_id, denominator=total_agent_turns, by_type=by_type)


__all__ = [
    "NOTE_SUFFIX",
    "DriftType",
    "Criterion",
    "CRITERIA",
    "DriftFinding",
    "ModeratorNote",
    "mentions_abandonment",
    "evaluate_round",
    "load_note_templates",
    "issue_notes",
    "Moderator",
    "note_to_json",
    "note_log_text",
    "save_note_log",
    "load_note_log",
    "DriftStats",
    "InterventionStats",
    "intervention_stats"
]
