""" Team-level HRA metrics

Rule-based extraction of the five team-level indicators from an annotated transcript: decision delay time
(DDT), incorrect procedure rate (IPR), communication suppression rate (CSR), authority pressure cascade (APC)
and frame lock index (FLI). Every function here is a pure function of its inputs.
"""
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Union, Tuple, Optional

from simhra.dialogue import DialogueBuffer, SUPPRESSED_CONCERNS
from simhra.scenario import Scenario, ROLES, NO_RECOVERY, NOT_APPLICABLE
from simhra.utils import Graph, write_atomic

TURNS_PER_ROUND = 3
FLI_MAX = 10
APC_MAX_DEPTH = len(ROLES) - 1

@dataclass(frozen=True)
class MetricSet:
    """ MetricSet

    Attributes:
        run_id (str): run the metrics were extracted from
        ddt: decision delay time in minutes, or `NO_RECOVERY`
        ipr (float): incorrect procedure rate in percent
        no_procedure_decisions (bool): `True` if `ipr` is 0 because there were no procedure decisions
        csr: communication suppression rate in percent, or `NOT_APPLICABLE`
        apc_presence (bool): authority pressure cascade presence, always `apc_depth ≥ 1`
        apc_depth (int): number of hierarchy levels directive pressure propagated through (0, 1 or 2)
        fli: frame lock index in `[0, 10]`, or `NOT_APPLICABLE`
        extractor (str): `rules` or `llm`
        prompt_version (str): version of the prompt assets an `llm` extraction used, `None` for rules
    """
    run_id: str
    ddt: Union[float, str]
    ipr: float
    no_procedure_decisions: bool
    csr: Union[float, str]
    apc_presence: bool
    apc_depth: int
    fli: Union[int, str]
    extractor: str = "rules"
    prompt_version: Optional[str] = None

    def __post_init__(self):
        if self.apc_presence != (self.apc_depth >= 1):
            raise ValueError(f"apc_presence must equal apc_depth ≥ 1:\n"
                             f"\tapc_presence={self.apc_presence}, apc_depth={self.apc_depth}")

    @property
    def recovered(self) -> bool:
        return self.ddt != NO_RECOVERY

    def to_dict(self):
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "MetricSet":
        return MetricSet(**data)


def save_metrics(metrics: MetricSet, path: Union[str, Path]):
    write_atomic(path, json.dumps(metrics.to_dict(), indent=2) + "\n")


def load_metrics(path: Union[str, Path]) -> MetricSet:
    return MetricSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_ddt(transcript: DialogueBuffer, scenario: Scenario) -> Union[float, str]:
    """ decision delay time

    Elapsed scenario time from the onset to the first utterance at or after the onset round identifying the
    recovery path $u$, interpolated by the position of the turn within its round:

    $$
    DDT = \\left((r_u - r_{onset}) + \\frac{t_u}{3}\\right) \\tau
    $$

    Returns:
        ddt: minutes, or `NO_RECOVERY` if no utterance identifies the recovery path
    """
    temporal = scenario.temporal
    for u in transcript:
        if u.round < temporal.onset_round:
            continue
        if u.is_agent and u.annotations is not None and u.annotations.recovery_identification:
            rounds = (u.round - temporal.onset_round) + u.turn_index / TURNS_PER_ROUND
            return rounds * temporal.minutes_per_round
    return NO_RECOVERY


def compute_ipr(transcript: DialogueBuffer) -> Tuple[float, bool]:
    """ incorrect procedure rate

    Returns:
        (ipr, no_procedure_decisions): percentage of incorrect decisions among annotated procedure decisions, and
        a flag set when there are none (in which case the rate is 0)
    """
    correct = incorrect = 0
    for u in transcript:
        if u.annotations is None:
            continue
        if u.annotations.procedure_decision == "correct":
            correct += 1
        elif u.annotations.procedure_decision == "incorrect":
            incorrect += 1
    total = correct + incorrect
    if total == 0:
        return 0.0, True
    return incorrect / total * 100, False


def compute_csr(transcript: DialogueBuffer) -> Union[float, str]:
    """ communication suppression rate

    Percentage of critical-concern opportunities that were left unvoiced or voiced and dismissed.

    Returns:
        csr: percentage, or `NOT_APPLICABLE` when the transcript has no critical-concern opportunity
    """
    concerns = [u.annotations.critical_concern for u in transcript
                if u.annotations is not None and u.annotations.critical_concern is not None]
    if not concerns:
        return NOT_APPLICABLE
    suppressed = sum(1 for concern in concerns if concern in SUPPRESSED_CONCERNS)
    return suppressed / len(concerns) * 100


def pressure_graph(transcript: DialogueBuffer) -> Graph:
    """ graph with an edge from each speaker to every role it exerted directive pressure on """
    graph = Graph()
    for u in transcript:
        if u.annotations is not None and u.annotations.directive_pressure_to is not None:
            graph.add_edge(u.speaker, u.annotations.directive_pressure_to)
    return graph


def compute_apc(transcript: DialogueBuffer) -> Tuple[bool, int]:
    """ authority pressure cascade

    The cascade depth counts the links of the Authority → Coordinator → Operator chain carrying directive
    pressure, starting from the Authority: a Coordinator → Operator edge alone doesn't start a cascade.

    Returns:
        (presence, depth): `presence` is `depth ≥ 1`
    """
    depth = pressure_graph(transcript).chain_depth(ROLES)
    return depth >= 1, depth


def compute_fli(transcript: DialogueBuffer, scenario: Scenario) -> Union[int, str]:
    """ frame lock index

    Number of distinct rounds with at least one utterance reinforcing the locked frame, counted from the round of
    the first disconfirming cue of the scenario on, clamped to 10.

    Returns:
        fli: ordinal in `[0, 10]`, or `NOT_APPLICABLE` when the scenario has no disconfirming cue
    """
    first_cue = scenario.first_cue("disconfirming")
    if first_cue is None:
        return NOT_APPLICABLE
    rounds = {u.round for u in transcript
              if u.is_agent and u.round >= first_cue
              and u.annotations is not None and u.annotations.frame_reinforcement}
    return min(len(rounds), FLI_MAX)


def extract_metrics_rules(transcript: DialogueBuffer, scenario: Scenario, run_id: Optional[str] = None) -> MetricSet:
    """ extracts the five metrics from the transcript annotations

    Args:
        transcript (DialogueBuffer): annotated transcript of a run
        scenario (Scenario): the scenario the run simulated
        run_id (str): defaults to the run id of the transcript entries

    Returns:
        metrics (MetricSet): metrics with `extractor = "rules"`
    """
    if run_id is None:
        run_id = transcript[0].run_id if len(transcript) > 0 else ""
    ipr, no_decisions = compute_ipr(transcript)
    presence, depth = compute_apc(transcript)
    return MetricSet(run_id=run_id,
                     ddt=compute_ddt(transcript, scenario),
                     ipr=ipr,
                     no_procedure_decisions=no_decisions,
                     csr=compute_csr(transcript),
                     apc_presence=presence,
                     apc_depth=depth,
                     fli=compute_fli(transcript, scenario),
                     extractor="rules")


__all__ = [
    "TURNS_PER_ROUND",
    "FLI_MAX",
    "APC_MAX_DEPTH",
    "MetricSet",
    "save_metrics",
    "load_metrics",
    "compute_ddt",
    "compute_ipr",
    "compute_csr",
    "pressure_graph",
    "compute_apc",
    "compute_fli",
    "extract_metrics_rules"
]
