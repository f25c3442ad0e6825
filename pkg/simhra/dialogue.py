""" Shared dialogue state

The public record of a run: an append-only buffer of agent utterances and injected WORLD events, its rendering as
the history every agent reads, and its persistence as line-delimited JSON transcripts.
"""
import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Optional, List, Union, Iterable

from simhra.scenario import ROLES
from simhra.utils import write_atomic

WORLD = "WORLD"
SPEAKERS = ROLES + (WORLD,)

PROCEDURE_DECISIONS = ("none", "correct", "incorrect")
CRITICAL_CONCERNS = ("voiced_engaged", "voiced_dismissed", "unvoiced_warranted")
SUPPRESSED_CONCERNS = ("voiced_dismissed", "unvoiced_warranted")


class OrderingError(ValueError):
    """ utterance appended out of (round, turn_index) order """
    pass


class TranscriptError(ValueError):
    """ malformed transcript record

    Attributes:
        index (int): 0-based index of the offending record
    """

    def __init__(self, msg, index=None):
        self.index = index
        prefix = f"record {index}: " if index is not None else ""
        super().__init__(f"{prefix}{msg}")


def authority_rank(role_name) -> int:
    """ rank of a role in the fixed hierarchy, 2 for Authority down to 0 for Operator """
    return len(ROLES) - 1 - ROLES.index(role_name)


@dataclass(frozen=True)
class AnnotationSet:
    """ Behavioral annotations of one utterance

    Attributes:
        recovery_identification (bool): the utterance correctly identifies the recovery path
        procedure_decision (str): one of `none`, `correct` or `incorrect`
        critical_concern (Optional[str]): `voiced_engaged`, `voiced_dismissed`, `unvoiced_warranted` or `None`
        directive_pressure_to (Optional[str]): role receiving directive pressure, must rank below the speaker
        frame_reinforcement (bool): the utterance reaffirms the locked diagnostic frame
        assertive_challenge_to (Optional[str]): role being challenged, must rank above the speaker
        frame_reference (bool): the utterance explicitly addresses the locked diagnostic frame
    """
    recovery_identification: bool = False
    procedure_decision: str = "none"
    critical_concern: Optional[str] = None
    directive_pressure_to: Optional[str] = None
    frame_reinforcement: bool = False
    assertive_challenge_to: Optional[str] = None
    frame_reference: bool = False

    def __post_init__(self):
        if self.procedure_decision not in PROCEDURE_DECISIONS:
            raise ValueError(f"invalid procedure_decision: {self.procedure_decision!r}\n"
                             f"\texpected one of {PROCEDURE_DECISIONS}")
        if self.critical_concern is not None and self.critical_concern not in CRITICAL_CONCERNS:
            raise ValueError(f"invalid critical_concern: {self.critical_concern!r}\n"
                             f"\texpected one of {CRITICAL_CONCERNS}")
        for target in (self.directive_pressure_to, self.assertive_challenge_to):
            if target is not None and target not in ROLES:
                raise ValueError(f"invalid annotation target role: {target!r}")

    @property
    def abandons_frame(self) -> bool:
        return self.frame_reference and not self.frame_reinforcement


@dataclass(frozen=True)
class Utterance:
    """ Utterance

    One entry of the public dialogue. WORLD entries carry the plant developments of a round and use
    `turn_index = 0`, agent turns use `1..3` in authority order.
    """
    run_id: str
    round: int
    turn_index: int
    speaker: str
    text: str
    annotations: Optional[AnnotationSet] = None

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"invalid speaker {self.speaker!r}\n"
                             f"\texpected one of {SPEAKERS}")
        if self.round < 1:
            raise ValueError(f"round must be positive, got {self.round}")
        if self.speaker == WORLD and self.turn_index != 0:
            raise ValueError(f"WORLD entries use turn_index 0, got {self.turn_index}")
        if self.speaker != WORLD and self.turn_index < 1:
            raise ValueError(f"agent turn_index must be positive, got {self.turn_index}")

        a = self.annotations
        if a is not None and self.speaker != WORLD:
            rank = authority_rank(self.speaker)
            if a.directive_pressure_to is not None and authority_rank(a.directive_pressure_to) >= rank:
                raise ValueError(f"{self.speaker} can't exert directive pressure on {a.directive_pressure_to}:\n"
                                 f"\ttarget must have lower authority than the speaker")
            if a.assertive_challenge_to is not None and authority_rank(a.assertive_challenge_to) <= rank:
                raise ValueError(f"{self.speaker} can't assertively challenge {a.assertive_challenge_to}:\n"
                                 f"\ttarget must have higher authority than the speaker")

    @property
    def is_agent(self) -> bool:
        return self.speaker != WORLD

    @property
    def position(self):
        return self.round, self.turn_index

    def annotated(self, annotations: Optional[AnnotationSet]) -> "Utterance":
        """ copy of this utterance with different annotations, the original is left untouched """
        return Utterance(self.run_id, self.round, self.turn_index, self.speaker, self.text, annotations)


class DialogueBuffer:
    """ DialogueBuffer

    Append-only ordered record of a run's public dialogue. Entries are never removed or edited, and
    `(round, turn_index)` is strictly increasing in buffer order.

    Args:
        utterances: optional initial entries, appended in order

    Attributes:
        current_round (int): round of the last appended entry, `0` for an empty buffer
    """

    def __init__(self, utterances: Iterable[Utterance] = ()):
        self._entries: List[Utterance] = []
        self.current_round = 0
        for u in utterances:
            self.append(u)

    def append(self, u: Utterance) -> "DialogueBuffer":
        """ appends an utterance to the buffer

        Raises:
            OrderingError: if `u` doesn't come strictly after the last entry
        """
        if u.round < self.current_round:
            raise OrderingError(f"out-of-order utterance:\n"
                                f"\tbuffer is at round {self.current_round}, utterance is tagged round {u.round}")
        if self._entries and u.position <= self._entries[-1].position:
            last = self._entries[-1]
            raise OrderingError(f"out-of-order utterance:\n"
                                f"\tR{u.round}.{u.turn_index} does not come after R{last.round}.{last.turn_index}")
        self._entries.append(u)
        self.current_round = u.round
        return self

    @property
    def utterances(self):
        return tuple(self._entries)

    def agent_utterances(self) -> List[Utterance]:
        return [u for u in self._entries if u.is_agent]

    def in_round(self, round_n) -> List[Utterance]:
        return [u for u in self._entries if u.round == round_n]

    def rounds(self) -> List[int]:
        return sorted({u.round for u in self._entries})

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, item):
        return self._entries[item]

    def __eq__(self, other):
        if not isinstance(other, DialogueBuffer):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self):
        return f"DialogueBuffer({len(self)} entries, round {self.current_round})"


def render_context(buffer: DialogueBuffer) -> str:
    """ linearizes the public dialogue, one `R{round}.{turn} [{speaker}]: {text}` line per entry """
    return "\n".join(f"R{u.round}.{u.turn_index} [{u.speaker}]: {u.text}" for u in buffer)


def utterance_to_json(u: Utterance) -> str:
    return json.dumps(asdict(u), ensure_ascii=False)


def utterance_from_dict(record: dict) -> Utterance:
    """ builds an `Utterance` from a transcript record

    Raises:
        KeyError: missing field
        ValueError: invalid field value
        TypeError: wrong field type
    """
    if not isinstance(record, dict):
        raise TypeError(f"expected a JSON object, got {type(record).__name__}")
    missing = [f.name for f in fields(Utterance) if f.name not in record and f.name != "annotations"]
    if missing:
        raise KeyError(f"missing field {missing[0]}")

    annotations = record.get("annotations")
    if annotations is not None:
        if not isinstance(annotations, dict):
            raise TypeError("annotations must be a JSON object or null")
        known = {f.name for f in fields(AnnotationSet)}
        unknown = set(annotations) - known
        if unknown:
            raise ValueError(f"unknown annotation fields: {sorted(unknown)}")
        annotations = AnnotationSet(**annotations)

    for name in ("round", "turn_index"):
        if isinstance(record[name], bool) or not isinstance(record[name], int):
            raise TypeError(f"{name} must be an integer")
    for name in ("run_id", "speaker", "text"):
        if not isinstance(record[name], str):
            raise TypeError(f"{name} must be a string")

    return Utterance(run_id=record["run_id"],
                     round=record["round"],
                     turn_index=record["turn_index"],
                     speaker=record["speaker"],
                     text=record["text"],
                     annotations=annotations)


def transcript_text(buffer: DialogueBuffer) -> str:
    return "".join(utterance_to_json(u) + "\n" for u in buffer)


def save_transcript(buffer: DialogueBuffer, path: Union[str, Path]):
    """ writes the buffer as a line-delimited JSON transcript (one utterance per line), atomically """
    write_atomic(path, transcript_text(buffer))


def parse_transcript(text: str) -> DialogueBuffer:
    """ parses line-delimited JSON transcript text

    Raises:
        TranscriptError: with the index of the first malformed or out-of-order record
    """
    buffer = DialogueBuffer()
    index = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            u = utterance_from_dict(json.loads(line))
            buffer.append(u)
        except json.JSONDecodeError as e:
            raise TranscriptError(f"malformed JSON: {e.msg}", index=index)
        except KeyError as e:
            raise TranscriptError(e.args[0], index=index)
        except (TypeError, ValueError) as e:
            raise TranscriptError(str(e), index=index)
        index += 1
    return buffer


def load_transcript(path: Union[str, Path]) -> DialogueBuffer:
    """ loads a transcript written by `save_transcript`

    Raises:
        TranscriptError: with the index of the offending record
    """
    return parse_transcript(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "WORLD",
    "SPEAKERS",
    "PROCEDURE_DECISIONS",
    "CRITICAL_CONCERNS",
    "SUPPRESSED_CONCERNS",
    "OrderingError",
    "TranscriptError",
    "authority_rank",
    "AnnotationSet",
    "Utterance",
    "DialogueBuffer",
    "render_context",
    "utterance_to_json",
    "utterance_from_dict",
    "transcript_text",
    "save_transcript",
    "parse_transcript",
    "load_transcript"
]
