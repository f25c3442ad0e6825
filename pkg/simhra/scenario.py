""" Declarative accident scenarios

A scenario bundles everything a simulated run needs to know about one accident: the crew roster, the timeline of
plant developments, the temporal resolution of a round, the face-validity acceptance criteria, the historical
baseline the metrics are compared against, and the parameters the moderator uses to detect behavioral drift.

Scenarios are YAML documents, checked for structure and types by the `ScenarioDocument` model and then for the
scenario invariants by `validate_scenario`. The builtin scenarios live in `simhra/scenarios/` and go through the
same loader as user files.
"""
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Tuple, Optional, Union, List, Dict, Any

import yaml
from pydantic import (BaseModel, BeforeValidator, ConfigDict, StrictBool, StrictInt, StrictStr, ValidationError,
                      field_validator, model_validator)
from typing_extensions import Annotated

from simhra.utils import logger

AUTHORITY = "Authority"
COORDINATOR = "Coordinator"
OPERATOR = "Operator"

# authority-descending order, also the turn order within a round
ROLES = (AUTHORITY, COORDINATOR, OPERATOR)
AUTHORITY_LEVELS = {"High": 2, "Medium": 1, "Low": 0}
LEVEL_NAMES = {v: k for k, v in AUTHORITY_LEVELS.items()}

CUE_CLASSES = ("neutral", "disconfirming", "escalating")

NO_RECOVERY = "NO_RECOVERY"
REQUIRE_NO_RECOVERY = "REQUIRE_NO_RECOVERY"
NOT_APPLICABLE = "NOT_APPLICABLE"

BUILTIN_DIR = Path(__file__).parent / "scenarios"

_AUTHORITY_POSITION = {
    2: "High. You hold directive primacy over the crew, set the diagnostic frame and commit the team to decisions.",
    1: "Medium. You relay instructions between the authority and operational levels and filter information "
       "passed upward.",
    0: "Low. You work the plant interface directly and answer to the crew members above you.",
}


class ScenarioError(ValueError):
    """ raised when a scenario document is malformed or violates a scenario invariant

    Attributes:
        field (str): path of the offending field (e.g. `roster[1].role_name`)
        line (int): 1-based line in the source document, if known
    """

    def __init__(self, msg, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field {field}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{msg}")


class NotFoundError(KeyError):
    """ unknown builtin identifier """

    def __str__(self):
        return str(self.args[0]) if self.args else ""


def authority_position(level: int) -> str:
    return _AUTHORITY_POSITION.get(level, "")


def assemble_role_prompt(role_name, historical_person, authority_level, knowledge_boundary,
                         operational_responsibility, behavioral_tendencies):
    """ builds the role prompt from the four role dimensions

    Returns:
        prompt (`str`): a system prompt containing the knowledge boundary, operational responsibility, authority
        position and stress-conditioned behavioral tendencies of the role
    """
    return (f"You are {historical_person}, the {role_name} Agent of a nuclear power plant control room crew.\n"
            f"Authority position: {authority_position(authority_level)}\n"
            f"Knowledge boundary: {knowledge_boundary}\n"
            f"Operational responsibility: {operational_responsibility}\n"
            f"Behavioral tendencies under stress: {behavioral_tendencies}\n"
            f"Stay in character and speak only as {historical_person}.")


@dataclass(frozen=True)
class RoleSpec:
    role_name: str
    historical_person: str
    authority_level: int
    knowledge_boundary: str
    operational_responsibility: str
    behavioral_tendencies: str
    role_prompt: str = ""

    def __post_init__(self):
        if not self.role_prompt:
            prompt = assemble_role_prompt(self.role_name,
                                          self.historical_person,
                                          self.authority_level,
                                          self.knowledge_boundary,
                                          self.operational_responsibility,
                                          self.behavioral_tendencies)
            object.__setattr__(self, "role_prompt", prompt)


@dataclass(frozen=True)
class TemporalConfig:
    """ Temporal configuration

    Attributes:
        total_rounds (int): number of rounds in a run
        minutes_per_round (float): simulated minutes per round (τ)
        onset_round (int): round at which the abnormal event begins
        declared_duration (float): total simulated duration the scenario claims to cover, in minutes
    """
    total_rounds: int
    minutes_per_round: float
    onset_round: int = 1
    declared_duration: Optional[float] = None

    @property
    def total_duration(self) -> float:
        return self.total_rounds * self.minutes_per_round


@dataclass(frozen=True)
class TimelineEvent:
    round: int
    description: str
    cue_class: str = "neutral"


@dataclass(frozen=True)
class AcceptanceCriteria:
    """ Face-validity acceptance criteria

    One-sided bounds are stored as intervals with 0 or 100 as the missing bound.

    Attributes:
        csr_min (float): minimum communication suppression rate (percent)
        ddt_rule: either a `(lo, hi)` interval in minutes or `REQUIRE_NO_RECOVERY`
        ipr_rule (Tuple[float,float]): incorrect procedure rate interval (percent)
        fli_min (Optional[int]): minimum frame lock index, `None` if not applicable
        apc_cascade_required (Optional[bool]): required authority pressure cascade presence, `None` if not applicable
    """
    csr_min: float
    ddt_rule: Union[Tuple[float, float], str]
    ipr_rule: Tuple[float, float] = (0.0, 100.0)
    fli_min: Optional[int] = None
    apc_cascade_required: Optional[bool] = None

    @property
    def requires_no_recovery(self) -> bool:
        return self.ddt_rule == REQUIRE_NO_RECOVERY


@dataclass(frozen=True)
class HistoricalBaseline:
    ddt: Union[float, str]
    ipr: float
    csr: float
    fli: Optional[float] = None
    apc_presence: Optional[bool] = None
    apc_depth: Optional[int] = None
    ipr_range: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class DriftParams:
    earliest_plausible_recovery_round: int
    locked_frame_description: str
    frame_release_round: int
    strict_hierarchy: bool = False
    frame_abandon_keywords: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    """ Scenario

    Full description of one accident simulation. Scenario values are immutable and can be shared across
    concurrent runs.
    """
    scenario_id: str
    roster: Tuple[RoleSpec, ...]
    temporal: TemporalConfig
    timeline: Tuple[TimelineEvent, ...]
    criteria: AcceptanceCriteria
    baseline: HistoricalBaseline
    drift: DriftParams
    title: str = ""

    def role(self, role_name) -> RoleSpec:
        for spec in self.roster:
            if spec.role_name == role_name:
                return spec
        raise KeyError(f"scenario {self.scenario_id} has no {role_name} role")

    def events_at(self, round_n) -> List[TimelineEvent]:
        return [event for event in self.timeline if event.round == round_n]

    def first_cue(self, cue_class) -> Optional[int]:
        """ earliest round with an event of the given cue class, `None` if there's none """
        rounds = [event.round for event in self.timeline if event.cue_class == cue_class]
        return min(rounds) if rounds else None

    @property
    def total_rounds(self) -> int:
        return self.temporal.total_rounds

    @property
    def total_duration(self) -> float:
        return self.temporal.total_duration


# ----------------------------------------------------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------------------------------------------------

def _index_lines(node, path=(), lines=None):
    """ maps field paths to 1-based source lines using the YAML node tree """
    if lines is None:
        lines = {}
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (key_node.value,)
            _index_lines(value_node, key_path, lines)
            lines[key_path] = key_node.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _index_lines(item, path + (i,), lines)
    return lines


def _path_str(path):
    out = ""
    for part in path:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out


def _line_of(lines, path):
    path = tuple(path)
    while path not in lines and path:
        path = path[:-1]
    return lines.get(path)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _number(value):
    if not _is_number(value):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _interval(value):
    if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(_is_number(v) for v in value):
        raise ValueError(f"expected an interval [lo, hi], got {value!r}")
    return float(value[0]), float(value[1])


Number = Annotated[float, BeforeValidator(_number)]
Interval = Annotated[Tuple[float, float], BeforeValidator(_interval)]


class _Document(BaseModel):
    """ document section, unknown keys are rejected and `null` values count as absent """
    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def drop_nulls(cls, data):
        if isinstance(data, dict):
            return {key: value for key, value in data.items() if value is not None}
        return data


class RoleDocument(_Document):
    role_name: StrictStr
    historical_person: StrictStr
    authority_level: StrictInt
    knowledge_boundary: StrictStr
    operational_responsibility: StrictStr
    behavioral_tendencies: StrictStr
    role_prompt: StrictStr = ""

    @field_validator("authority_level", mode="before")
    @classmethod
    def level_from_name(cls, value):
        if isinstance(value, str):
            if value not in AUTHORITY_LEVELS:
                raise ValueError(f"authority_level must be one of {list(AUTHORITY_LEVELS)}, got {value!r}")
            return AUTHORITY_LEVELS[value]
        if _is_number(value) and value not in LEVEL_NAMES:
            raise ValueError(f"authority_level must be 0, 1 or 2, got {value}")
        return value


class TemporalDocument(_Document):
    total_rounds: StrictInt
    minutes_per_round: Number
    onset_round: StrictInt = 1
    declared_duration: Optional[Number] = None


class EventDocument(_Document):
    round: StrictInt
    description: StrictStr
    cue_class: StrictStr = "neutral"


class CriteriaDocument(_Document):
    csr_min: Number
    ddt_rule: Any
    ipr_rule: Interval = (0.0, 100.0)
    fli_min: Optional[StrictInt] = None
    apc_cascade_required: Optional[StrictBool] = None

    @field_validator("ddt_rule", mode="before")
    @classmethod
    def interval_or_no_recovery(cls, value):
        return value if value == REQUIRE_NO_RECOVERY else _interval(value)


class BaselineDocument(_Document):
    ddt: Any
    ipr: Number
    csr: Number
    fli: Optional[Number] = None
    apc_presence: Optional[StrictBool] = None
    apc_depth: Optional[StrictInt] = None
    ipr_range: Optional[Interval] = None

    @field_validator("ddt", mode="before")
    @classmethod
    def minutes_or_no_recovery(cls, value):
        return value if value == NO_RECOVERY else _number(value)


class DriftDocument(_Document):
    earliest_plausible_recovery_round: StrictInt
    locked_frame_description: StrictStr
    frame_release_round: StrictInt
    strict_hierarchy: StrictBool = False
    frame_abandon_keywords: List[StrictStr] = []


class ScenarioDocument(_Document):
    """ ScenarioDocument

    Schema of a scenario YAML document. It checks structure and field types only, scenario invariants are checked
    on the resulting `Scenario` by `validate_scenario`.
    """
    scenario_id: StrictStr
    title: StrictStr = ""
    roster: List[RoleDocument]
    temporal: TemporalDocument
    timeline: List[EventDocument]
    criteria: CriteriaDocument
    baseline: BaselineDocument
    drift: DriftDocument

    def to_scenario(self) -> Scenario:
        drift = self.drift.model_dump()
        drift["frame_abandon_keywords"] = tuple(drift["frame_abandon_keywords"])
        return Scenario(scenario_id=self.scenario_id,
                        roster=tuple(RoleSpec(**role.model_dump()) for role in self.roster),
                        temporal=TemporalConfig(**self.temporal.model_dump()),
                        timeline=tuple(TimelineEvent(**event.model_dump()) for event in self.timeline),
                        criteria=AcceptanceCriteria(**self.criteria.model_dump()),
                        baseline=HistoricalBaseline(**self.baseline.model_dump()),
                        drift=DriftParams(**drift),
                        title=self.title)


def _scenario_error(error: ValidationError, lines) -> ScenarioError:
    errors = error.errors()
    first = errors[0]
    path = tuple(first["loc"])
    msg = "missing required field" if first["type"] == "missing" else first["msg"]
    if len(errors) > 1:
        msg += f" (and {len(errors) - 1} more)"
    return ScenarioError(msg, field=_path_str(path), line=_line_of(lines, path))


def scenario_from_dict(data: Dict[str, Any], lines=None) -> Scenario:
    """ builds a `Scenario` from a plain dictionary (as loaded from YAML)

    Only structure and types are checked here, invariants are checked by `validate_scenario`.

    Args:
        data (dict): scenario document
        lines (dict): optional map from field paths to source lines, used to locate errors

    Raises:
        ScenarioError: if a field is missing, unknown or has the wrong type
    """
    lines = lines or {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping", line=lines.get(()))
    try:
        document = ScenarioDocument.model_validate(data)
    except ValidationError as e:
        raise _scenario_error(e, lines) from None
    return document.to_scenario()


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """ parses and validates a scenario document

    Args:
        text (`str`): YAML scenario document
        source (`str`): name of the document source, used in log messages

    Returns:
        scenario (`Scenario`): a scenario for which `validate_scenario` returns an empty report

    Raises:
        ScenarioError: with the offending field and line if the document is malformed or invalid
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"malformed scenario document {source}: {getattr(e, 'problem', e)}", line=line)

    lines = _index_lines(node) if node is not None else {}
    scenario = scenario_from_dict(data, lines)
    violations = validate_scenario(scenario)
    if violations:
        violation_str = "\n\t".join(violations)
        raise ScenarioError(f"invalid scenario {source}:\n\t{violation_str}", field=None)
    logger.debug(f"loaded scenario {scenario.scenario_id} from {source}")
    return scenario


def builtin_scenarios() -> List[str]:
    return sorted(path.stem for path in BUILTIN_DIR.glob("*.yaml"))


def load_scenario(source: Union[str, Path]) -> Scenario:
    """ loads a scenario from a file or a builtin identifier

    Args:
        source: path to a YAML scenario file, or a builtin id such as `"tmi1979"` or `"chernobyl1986"`

    Returns:
        scenario (`Scenario`): a valid scenario

    Raises:
        NotFoundError: if `source` is neither an existing file nor a builtin id
        ScenarioError: if the document is malformed or invalid
    """
    path = Path(source)
    if not path.is_file():
        builtin = BUILTIN_DIR / f"{source}.yaml"
        if isinstance(source, str) and builtin.is_file():
            path = builtin
        else:
            raise NotFoundError(f"scenario not found: {source}\n"
                                f"\tbuiltin scenarios: {', '.join(builtin_scenarios())}")
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))


def _states_authority(spec: RoleSpec) -> bool:
    """ a role prompt states the authority position by the level name or by the assembled position sentence """
    name = LEVEL_NAMES.get(spec.authority_level)
    return (name is not None and re.search(rf"\b{name}\b", spec.role_prompt) is not None) or \
        authority_position(spec.authority_level) in spec.role_prompt


def validate_scenario(s: Scenario) -> List[str]:
    """ checks every scenario invariant

    Violations are returned as data, this function never raises on an invalid scenario.

    Returns:
        violations (`List[str]`): list of violation messages, empty if the scenario is valid
    """
    violations = []

    # roster
    names = [spec.role_name for spec in s.roster]
    for spec in s.roster:
        if spec.role_name not in ROLES:
            violations.append(f"roster: unknown role_name {spec.role_name!r}")
        if spec.authority_level not in LEVEL_NAMES:
            violations.append(f"roster: {spec.role_name} authority_level must be 0, 1 or 2")
    for role in ROLES:
        count = names.count(role)
        if count == 0:
            violations.append(f"roster: missing {role} role")
        elif count > 1:
            violations.append(f"roster: duplicate {role} role")
    if len(s.roster) != len(ROLES):
        violations.append(f"roster: expected {len(ROLES)} roles, found {len(s.roster)}")
    if not any("duplicate" in v or "missing" in v for v in violations):
        levels = [s.role(role).authority_level for role in ROLES]
        if not all(a > b for a, b in zip(levels, levels[1:])):
            violations.append("roster: authority_level must be strictly decreasing Authority > Coordinator > Operator")
    for spec in s.roster:
        dims = (spec.knowledge_boundary, spec.operational_responsibility, spec.behavioral_tendencies)
        if not spec.role_prompt.strip():
            violations.append(f"roster: {spec.role_name} role_prompt is empty")
        elif not all(dim in spec.role_prompt for dim in dims) or not _states_authority(spec):
            violations.append(f"roster: {spec.role_name} role_prompt must contain all four role dimensions")

    # temporal
    t = s.temporal
    if t.total_rounds < 1:
        violations.append("temporal: total_rounds must be positive")
    if t.minutes_per_round <= 0:
        violations.append("temporal: minutes_per_round must be positive")
    if not 1 <= t.onset_round <= max(t.total_rounds, 1):
        violations.append("temporal: onset_round must be in [1, total_rounds]")
    if t.declared_duration is not None and t.minutes_per_round > 0:
        if abs(t.total_duration - t.declared_duration) > t.minutes_per_round:
            violations.append(f"temporal: total_rounds x minutes_per_round = {t.total_duration:g} min differs "
                              f"from declared_duration {t.declared_duration:g} min by more than one round")

    # timeline
    for event in s.timeline:
        if not 1 <= event.round <= t.total_rounds:
            violations.append(f"timeline: event round {event.round} outside [1, {t.total_rounds}]")
        if event.cue_class not in CUE_CLASSES:
            violations.append(f"timeline: unknown cue_class {event.cue_class!r}")
    if not any(event.round == 1 for event in s.timeline):
        violations.append("timeline: no event at round 1")

    # criteria
    c = s.criteria
    if not 0 <= c.csr_min <= 100:
        violations.append("criteria: csr_min must be a percentage")
    if c.ddt_rule != REQUIRE_NO_RECOVERY:
        lo, hi = c.ddt_rule
        if lo > hi:
            violations.append("criteria: ddt_rule interval must satisfy lo ≤ hi")
    lo, hi = c.ipr_rule
    if lo > hi:
        violations.append("criteria: ipr_rule interval must satisfy lo ≤ hi")
    if lo < 0 or hi > 100:
        violations.append("criteria: ipr_rule bounds must be within [0, 100]")

    # baseline covers every metric used by the criteria
    b = s.baseline
    if c.requires_no_recovery and b.ddt != NO_RECOVERY:
        violations.append("baseline: ddt must be NO_RECOVERY when criteria require no recovery")
    if c.fli_min is not None and b.fli is None:
        violations.append("baseline: missing fli entry referenced by criteria")
    if c.apc_cascade_required is not None and b.apc_presence is None:
        violations.append("baseline: missing apc_presence entry referenced by criteria")
    if b.ipr_range is not None and b.ipr_range[0] > b.ipr_range[1]:
        violations.append("baseline: ipr_range interval must satisfy lo ≤ hi")

    # drift
    d = s.drift
    if not 1 <= d.earliest_plausible_recovery_round <= d.frame_release_round <= t.total_rounds:
        violations.append("drift: must satisfy 1 ≤ earliest_plausible_recovery_round ≤ frame_release_round "
                          "≤ total_rounds")

    return violations


# ----------------------------------------------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> Dict[str, Any]:
    def interval(value):
        return list(value) if isinstance(value, tuple) else value

    roster = []
    for spec in s.roster:
        role = asdict(spec)
        role["authority_level"] = LEVEL_NAMES[spec.authority_level]
        roster.append(role)

    temporal = asdict(s.temporal)
    if temporal["declared_duration"] is None:
        del temporal["declared_duration"]

    criteria = asdict(s.criteria)
    criteria["ddt_rule"] = interval(s.criteria.ddt_rule)
    criteria["ipr_rule"] = interval(s.criteria.ipr_rule)
    criteria = {k: v for k, v in criteria.items() if v is not None}

    baseline = asdict(s.baseline)
    baseline["ipr_range"] = interval(s.baseline.ipr_range)
    baseline = {k: v for k, v in baseline.items() if v is not None}

    drift = asdict(s.drift)
    drift["frame_abandon_keywords"] = list(s.drift.frame_abandon_keywords)

    data = {"scenario_id": s.scenario_id}
    if s.title:
        data["title"] = s.title
    data.update({"roster": roster,
                 "temporal": temporal,
                 "timeline": [asdict(event) for event in s.timeline],
                 "criteria": criteria,
                 "baseline": baseline,
                 "drift": drift})
    return data


def dump_scenario(s: Scenario) -> str:
    """ serializes a scenario to a YAML document that `parse_scenario` reads back into an equal scenario """
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, allow_unicode=True, width=120)


__all__ = [
    "AUTHORITY",
    "COORDINATOR",
    "OPERATOR",
    "ROLES",
    "AUTHORITY_LEVELS",
    "LEVEL_NAMES",
    "CUE_CLASSES",
    "NO_RECOVERY",
    "REQUIRE_NO_RECOVERY",
    "NOT_APPLICABLE",
    "BUILTIN_DIR",
    "ScenarioError",
    "NotFoundError",
    "authority_position",
    "assemble_role_prompt",
    "RoleSpec",
    "TemporalConfig",
    "TimelineEvent",
    "AcceptanceCriteria",
    "HistoricalBaseline",
    "DriftParams",
    "Scenario",
    "ScenarioDocument",
    "scenario_from_dict",
    "parse_scenario",
    "builtin_scenarios",
    "load_scenario",
    "validate_scenario",
    "scenario_to_dict",
    "dump_scenario"
]
