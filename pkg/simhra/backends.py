""" Agent backends

Turn generation behind one contract: `generate_turn(request) -> Utterance`. `LLMBackend` talks to any
OpenAI-compatible chat-completions endpoint, `ScriptedBackend` replays a script keyed by round and role so runs
are deterministic and carry annotations for rule-based extraction.
"""
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, List, Dict, Union

import backoff
import openai
import yaml
from openai import OpenAI

from simhra.dialogue import Utterance, AnnotationSet
from simhra.scenario import RoleSpec, Scenario, ROLES, NotFoundError
from simhra.utils import logger

PROMPT_DIR = Path(__file__).parent / "prompts"
SCRIPT_DIR = Path(__file__).parent / "scripts"
PROMPT_VERSION = "1"

API_KEY_ENV = "SIMHRA_API_KEY"
API_BASE_ENV = "SIMHRA_API_BASE"
MODEL_ENV = "SIMHRA_MODEL"

BACKEND_KINDS = ("llm", "scripted")


class ConfigurationError(ValueError):
    """ invalid backend configuration, incomplete script or missing credentials """
    pass


class TransportError(RuntimeError):
    """ a single failed request to the LLM endpoint, retried by the backend """
    pass


class InfraFailure(RuntimeError):
    """ the LLM endpoint stayed unreachable after the whole retry budget """
    pass


def load_prompt(name: str) -> str:
    """ reads a prompt template shipped in `simhra/prompts` """
    return (PROMPT_DIR / name).read_text(encoding="utf-8").rstrip("\n")


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.7
    max_tokens_per_turn: int = 800

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be ≥ 0, got {self.temperature}")
        if self.max_tokens_per_turn < 1:
            raise ValueError(f"max_tokens_per_turn must be positive, got {self.max_tokens_per_turn}")


ROLE_PLAY = DecodingParams(temperature=0.7, max_tokens_per_turn=800)
EVALUATION = DecodingParams(temperature=0.2, max_tokens_per_turn=800)


@dataclass(frozen=True)
class TurnRequest:
    """ Everything an agent sees when it takes a turn

    Attributes:
        role (RoleSpec): the agent taking the turn
        history_rendering (str): public dialogue rendered by `render_context`
        hidden_guidance (Tuple[str]): texts of the moderator notes delivered to this agent for this round
        round (int): current round
        decoding (DecodingParams): sampling parameters
        scenario_id (str): scenario being simulated
        run_id (str): run the utterance belongs to
        turn_index (int): position of the turn within the round (1..3)
        seed (Optional[int]): request-level seed, forwarded to endpoints that support it
        total_rounds (int): number of rounds in the run
        minutes_per_round (float): simulated minutes per round
    """
    role: RoleSpec
    history_rendering: str
    round: int
    hidden_guidance: Tuple[str, ...] = ()
    decoding: DecodingParams = ROLE_PLAY
    scenario_id: str = ""
    run_id: str = ""
    turn_index: int = 1
    seed: Optional[int] = None
    total_rounds: int = 0
    minutes_per_round: float = 0.0


def assemble_prompt(req: TurnRequest) -> List[Dict[str, str]]:
    """ builds the chat messages for one agent turn

    Hidden guidance only ever goes into the system message, the user message holds the public history and the
    round instruction.

    Returns:
        messages (`List[Dict]`): `[{"role": "system", ...}, {"role": "user", ...}]`
    """
    system = req.role.role_prompt
    if req.hidden_guidance:
        notes = "\n".join(f"- {text}" for text in req.hidden_guidance)
        system = f"{system}\n\n{load_prompt('guidance.txt')}\n{notes}"

    instruction = load_prompt("turn_instruction.txt").format(round=req.round,
                                                             total_rounds=req.total_rounds,
                                                             minutes=f"{(req.round - 1) * req.minutes_per_round:g}",
                                                             person=req.role.historical_person,
                                                             role_name=req.role.role_name)
    user = f"{req.history_rendering}\n\n{instruction}" if req.history_rendering else instruction
    return [{"role": "system", "content": system},
            {"role": "user", "content": user}]


@dataclass(frozen=True)
class BackendConfig:
    """ Backend configuration

    Attributes:
        kind (str): `llm` or `scripted`
        endpoint_base (Optional[str]): base URL of the OpenAI-compatible endpoint
        api_key_source (str): name of the environment variable holding the API key
        model_name (Optional[str]): model identifier sent with each request
        script_path (Optional[str]): script file or builtin script id (scripted backends)
        timeout (float): per-request timeout in seconds
        max_retries (int): attempts per request before giving up with `InfraFailure`
        retry_backoff (float): wait before the first retry in seconds, doubled on each retry
        max_in_flight (int): maximum number of concurrent requests
    """
    kind: str
    endpoint_base: Optional[str] = None
    api_key_source: str = API_KEY_ENV
    model_name: Optional[str] = None
    script_path: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0
    max_in_flight: int = 4

    def resolve(self) -> "BackendConfig":
        """ fills endpoint and model from `SIMHRA_API_BASE` and `SIMHRA_MODEL` when they're not set """
        if self.kind != "llm":
            return self
        return replace(self,
                       endpoint_base=self.endpoint_base or os.environ.get(API_BASE_ENV) or None,
                       model_name=self.model_name or os.environ.get(MODEL_ENV) or None)

    def validate(self):
        """
        Raises:
            ConfigurationError: if the configuration breaks an invariant of its backend kind
        """
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}\n"
                                     f"\texpected one of {BACKEND_KINDS}")
        if self.kind == "llm":
            if not self.endpoint_base:
                raise ConfigurationError(f"llm backend requires an endpoint base URL (set {API_BASE_ENV})")
            if not self.model_name:
                raise ConfigurationError(f"llm backend requires a model name (set {MODEL_ENV})")
            if self.max_retries < 1 or self.max_in_flight < 1:
                raise ConfigurationError("max_retries and max_in_flight must be positive")
        elif not self.script_path:
            raise ConfigurationError("scripted backend requires a script path or builtin script id")
        return self


class Backend:
    """ Backend

    Base class of turn generators. Backends are shared by concurrent runs, `generate_turn` calls are independent.
    """
    kind = None
    supports_completions = False

    def check(self, scenario: Scenario):
        """ verifies, before a run starts, that the backend can serve every turn of the scenario """
        pass

    def generate_turn(self, req: TurnRequest) -> Utterance:
        raise NotImplementedError

    def complete(self, messages: List[Dict[str, str]], decoding: DecodingParams = EVALUATION, seed=None) -> str:
        """ free-form completion, used by the report and moderator evaluators """
        raise ConfigurationError(f"{type(self).__name__} does not support free-form completions")


# ----------------------------------------------------------------------------------------------------------------
# scripted replay
# ----------------------------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptEntry:
    text: str
    annotations: AnnotationSet = field(default_factory=AnnotationSet)


@dataclass(frozen=True)
class Script:
    """ Replay script

    Attributes:
        scenario_id (str): scenario the script was written for
        entries (dict): maps `(round, role_name)` to a `ScriptEntry`
    """
    scenario_id: str
    entries: Dict[Tuple[int, str], ScriptEntry]

    @property
    def rounds(self) -> int:
        return max((r for r, _ in self.entries), default=0)


def builtin_scripts() -> List[str]:
    return sorted(path.stem for path in SCRIPT_DIR.glob("*.yaml"))


def load_script(source: Union[str, Path]) -> Script:
    """ loads a replay script from a YAML file or a builtin script id

    Raises:
        NotFoundError: if the source is neither a file nor a builtin script id
        ConfigurationError: if the script is malformed
    """
    path = Path(source)
    if not path.is_file():
        builtin = SCRIPT_DIR / f"{source}.yaml"
        if not builtin.is_file():
            raise NotFoundError(f"script not found: {source}\n"
                                f"\tbuiltin scripts: {', '.join(builtin_scripts())}")
        path = builtin

    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed script {path}: {e}")
    if not isinstance(data, dict) or "scenario_id" not in data or not isinstance(data.get("rounds"), dict):
        raise ConfigurationError(f"malformed script {path}:\n"
                                 f"\texpected top-level keys scenario_id and rounds")

    entries = {}
    for round_n, turns in data["rounds"].items():
        if not isinstance(round_n, int) or not isinstance(turns, dict):
            raise ConfigurationError(f"malformed script {path}: round {round_n!r} must map roles to entries")
        for role_name, entry in turns.items():
            if role_name not in ROLES:
                raise ConfigurationError(f"malformed script {path}: unknown role {role_name!r} in round {round_n}")
            if not isinstance(entry, dict) or not isinstance(entry.get("text"), str) or not entry["text"]:
                raise ConfigurationError(f"malformed script {path}: {role_name} in round {round_n} has no text")
            try:
                annotations = AnnotationSet(**(entry.get("annotations") or {}))
            except (TypeError, ValueError) as e:
                raise ConfigurationError(f"malformed script {path}: {role_name} in round {round_n}: {e}")
            entries[(round_n, role_name)] = ScriptEntry(entry["text"], annotations)

    return Script(scenario_id=str(data["scenario_id"]), entries=entries)


class ScriptedBackend(Backend):
    """ ScriptedBackend

    Replays the script entry for `(round, role)`. The same request always yields the same utterance, seeds are
    ignored.

    Args:
        script: a `Script`, a script file path or a builtin script id
    """
    kind = "scripted"

    def __init__(self, script: Union[Script, str, Path]):
        self.script = script if isinstance(script, Script) else load_script(script)

    @staticmethod
    def from_config(config: BackendConfig) -> "ScriptedBackend":
        config.validate()
        return ScriptedBackend(config.script_path)

    def _entry(self, scenario_id, round_n, role_name) -> ScriptEntry:
        if scenario_id and scenario_id != self.script.scenario_id:
            raise ConfigurationError(f"script was written for {self.script.scenario_id}, not {scenario_id}")
        entry = self.script.entries.get((round_n, role_name))
        if entry is None:
            raise ConfigurationError(f"script {self.script.scenario_id} has no entry for {role_name} "
                                     f"in round {round_n}")
        return entry

    def check(self, scenario: Scenario):
        for round_n in range(1, scenario.total_rounds + 1):
            for role_name in ROLES:
                self._entry(scenario.scenario_id, round_n, role_name)

    def generate_turn(self, req: TurnRequest) -> Utterance:
        entry = self._entry(req.scenario_id, req.round, req.role.role_name)
        return Utterance(run_id=req.run_id,
                         round=req.round,
                         turn_index=req.turn_index,
                         speaker=req.role.role_name,
                         text=entry.text,
                         annotations=entry.annotations)


# ----------------------------------------------------------------------------------------------------------------
# OpenAI-compatible endpoint
# ----------------------------------------------------------------------------------------------------------------

def _log_retry(details):
    logger.warning(f"LLM request failed, retry {details['tries']} in {details['wait']:.1f}s: "
                   f"{details.get('exception')}")


class LLMBackend(Backend):
    """ LLMBackend

    Sends chat-completion requests to an OpenAI-compatible endpoint. Failed requests are retried with exponential
    backoff (`retry_backoff`, doubled each time) up to `max_retries` attempts, after which `InfraFailure` is
    raised. At most `max_in_flight` requests are sent concurrently.

    Args:
        config (BackendConfig): an `llm` configuration
        client: optional client object exposing `chat.completions.create`, defaults to an `openai.OpenAI` client

    Raises:
        ConfigurationError: if the configuration is invalid or the API key variable is not set
    """
    kind = "llm"
    supports_completions = True

    def __init__(self, config: BackendConfig, client=None):
        self.config = config.resolve().validate()
        if self.config.kind != "llm":
            raise ConfigurationError(f"LLMBackend requires an llm configuration, got {self.config.kind}")
        if client is None:
            api_key = os.environ.get(self.config.api_key_source)
            if not api_key:
                raise ConfigurationError(f"API key not found:\n"
                                         f"\tset the {self.config.api_key_source} environment variable")
            client = OpenAI(api_key=api_key,
                            base_url=self.config.endpoint_base,
                            timeout=self.config.timeout,
                            max_retries=0)
        self.client = client
        self._slots = threading.BoundedSemaphore(self.config.max_in_flight)

        self._send_with_retry = backoff.on_exception(backoff.expo,
                                                     TransportError,
                                                     max_tries=self.config.max_retries,
                                                     jitter=None,
                                                     factor=self.config.retry_backoff,
                                                     on_backoff=_log_retry)(self._send)

    def _send(self, request) -> str:
        with self._slots:
            try:
                response = self.client.chat.completions.create(**request)
            except openai.OpenAIError as e:
                raise TransportError(f"{type(e).__name__}: {e}") from e
        try:
            text = response.choices[0].message.content
        except (AttributeError, IndexError, TypeError) as e:
            raise TransportError(f"unexpected response shape: {e}") from e
        return text or ""

    def complete(self, messages, decoding: DecodingParams = EVALUATION, seed=None) -> str:
        """ sends one chat-completion request

        Raises:
            InfraFailure: if every attempt failed
        """
        request = dict(model=self.config.model_name,
                       messages=messages,
                       temperature=decoding.temperature,
                       max_tokens=decoding.max_tokens_per_turn,
                       stream=False)
        if seed is not None:
            request["seed"] = seed
        try:
            return self._send_with_retry(request)
        except TransportError as e:
            raise InfraFailure(f"LLM endpoint {self.config.endpoint_base} failed after "
                               f"{self.config.max_retries} attempts: {e}") from e

    def generate_turn(self, req: TurnRequest) -> Utterance:
        messages = assemble_prompt(req)
        logger.debug(f"R{req.round}.{req.turn_index} {req.role.role_name} prompt:\n{messages}")
        text = self.complete(messages, req.decoding, seed=req.seed).strip()
        if not text:
            text = "..."
        return Utterance(run_id=req.run_id,
                         round=req.round,
                         turn_index=req.turn_index,
                         speaker=req.role.role_name,
                         text=text)


def make_backend(config: BackendConfig) -> Backend:
    """ creates the backend described by `config`

    Raises:
        ConfigurationError: invalid configuration or missing API key
        NotFoundError: unknown builtin script id
    """
    config = config.resolve().validate()
    if config.kind == "scripted":
        return ScriptedBackend.from_config(config)
    return LLMBackend(config)


__all__ = [
    "PROMPT_DIR",
    "SCRIPT_DIR",
    "PROMPT_VERSION",
    "API_KEY_ENV",
    "API_BASE_ENV",
    "MODEL_ENV",
    "BACKEND_KINDS",
    "ConfigurationError",
    "TransportError",
    "InfraFailure",
    "load_prompt",
    "DecodingParams",
    "ROLE_PLAY",
    "EVALUATION",
    "TurnRequest",
    "assemble_prompt",
    "BackendConfig",
    "Backend",
    "ScriptEntry",
    "Script",
    "builtin_scripts",
    "load_script",
    "ScriptedBackend",
    "LLMBackend",
    "make_backend"
]
