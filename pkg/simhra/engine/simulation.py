import json
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, List, Union

from simhra.backends import (Backend, BackendConfig, TurnRequest, ConfigurationError, InfraFailure, ROLE_PLAY,
                             PROMPT_VERSION, make_backend, load_prompt)
from simhra.dialogue import DialogueBuffer, Utterance, WORLD, render_context, utterance_to_json
from simhra.engine.callbacks import *
from simhra.moderator import Moderator, NOTE_SUFFIX, save_note_log, load_note_templates
from simhra.scenario import Scenario, ROLES, load_scenario
from simhra.utils import logger, as_list, ensure_writable, write_atomic

COMPLETED = "COMPLETED"
INFRA_FAIL = "INFRA_FAIL"
STOPPED = "STOPPED"
ERROR = "ERROR"

PARTIAL_SUFFIX = ".partial"
MANIFEST = "manifest.json"


class StopSimulation(Exception):
    """ raised by callbacks to end a run early, the run is kept as a partial transcript """
    pass


class Simulation:
    """ Simulation

    Runs the round loop of one simulated accident: at each round the plant developments are injected as a WORLD
    entry, the three agents speak once each in authority order, and the moderator reviews the round.

    The loop state is exposed to callbacks as properties: `round`, `turn` (agent turns so far), `speaker`,
    `turn_request`, `last_utterance` and the static `total_rounds`. Callbacks are scheduled on `OnLoop`,
    `OnRound`/`OnEveryRound`, `OnTurn`/`OnEveryTurn` and `OnValueChange` events.

    Args:
        scenario (Scenario): scenario to simulate
        backend (Backend): turn generator shared by the three agents
        run_id (str): identifier stamped on every utterance
        seed (Optional[int]): request-level seed forwarded to the backend
        moderator (Optional[Moderator]): end-of-round moderator, `None` disables moderation

    Attributes:
        buffer (DialogueBuffer): the public dialogue of the run
        stopped (bool): `True` if a callback ended the run early with `StopSimulation`
    """

    def __init__(self, scenario: Scenario, backend: Backend, run_id: str, seed=None, moderator=None,
                 decoding=ROLE_PLAY):
        self.scenario = scenario
        self.backend = backend
        self.run_id = run_id
        self.seed = seed
        self.moderator = moderator
        self.decoding = decoding
        self.buffer = DialogueBuffer()
        self.stopped = False
        self.world_template = load_prompt("world_event.txt")

    def world_utterance(self, round_n) -> Optional[Utterance]:
        """ all timeline events of a round merged into one WORLD entry, `None` for rounds without events """
        events = self.scenario.events_at(round_n)
        if not events:
            return None
        minutes = (round_n - 1) * self.scenario.temporal.minutes_per_round
        text = self.world_template.format(minutes=f"{minutes:g}",
                                          events=" ".join(event.description for event in events))
        return Utterance(run_id=self.run_id, round=round_n, turn_index=0, speaker=WORLD, text=text)

    def turn_request(self, role_name, round_n, turn_index) -> TurnRequest:
        guidance = self.moderator.guidance_for(role_name, round_n) if self.moderator is not None else ()
        return TurnRequest(role=self.scenario.role(role_name),
                           history_rendering=render_context(self.buffer),
                           round=round_n,
                           hidden_guidance=guidance,
                           decoding=self.decoding,
                           scenario_id=self.scenario.scenario_id,
                           run_id=self.run_id,
                           turn_index=turn_index,
                           seed=self.seed,
                           total_rounds=self.scenario.total_rounds,
                           minutes_per_round=self.scenario.temporal.minutes_per_round)

    def run(self, callbacks=()) -> DialogueBuffer:
        """ Main simulation loop

        Args:
            callbacks: ``Callback`` objects scheduled during the run

        Returns:
            buffer (DialogueBuffer): the public dialogue, complete unless the run was stopped

        Raises:
            InfraFailure: if the backend exhausts its retry budget
        """
        # loop properties
        round_n = Property("round", 0)
        turn = Property("turn", 0)
        speaker = Property("speaker", None)
        turn_request = Property("turn_request", None)
        last_utterance = Property("last_utterance", None)
        total_rounds = StaticProperty("total_rounds", value=self.scenario.total_rounds)

        scheduler = Scheduler(simulation=self,
                              properties=[round_n, turn, speaker, turn_request, last_utterance, total_rounds])

        if self.moderator is not None:
            scheduler.register(Moderate(self.moderator, priority=-1))
        for callback in as_list(callbacks):
            scheduler.register(callback)

        # MAIN SIMULATION LOOP
        scheduler.trigger(OnLoop(AT.START))
        try:
            while round_n.value < self.scenario.total_rounds:
                # ROUND START
                round_n.value += 1
                scheduler.trigger(OnRound(round_n.value, AT.START))

                world = self.world_utterance(round_n.value)
                if world is not None:
                    self.buffer.append(world)
                    last_utterance.value = world

                for turn_index, role_name in enumerate(ROLES, start=1):
                    turn.value += 1
                    speaker.value = role_name
                    turn_request.value = self.turn_request(role_name, round_n.value, turn_index)
                    scheduler.trigger(OnTurn(turn.value, AT.START))

                    u = self.backend.generate_turn(turn_request.value)
                    if (u.speaker, u.round, u.turn_index) != (role_name, round_n.value, turn_index):
                        raise ValueError(f"backend returned an utterance for the wrong turn:\n"
                                         f"\texpected {role_name} R{round_n.value}.{turn_index}\n"
                                         f"\tgot {u.speaker} R{u.round}.{u.turn_index}")
                    self.buffer.append(u)
                    last_utterance.value = u
                    logger.debug(f"R{u.round}.{u.turn_index} [{u.speaker}]: {u.text}")

                    scheduler.trigger(OnTurn(turn.value, AT.END))

                # ROUND END
                scheduler.trigger(OnRound(round_n.value, AT.END))
        except StopSimulation as e:
            self.stopped = True
            logger.info(f"run {self.run_id} stopped at round {round_n.value}: {e}")
        finally:
            scheduler.trigger(OnLoop(AT.END))

        return self.buffer


class Moderate(Callback):
    """ Moderate Callback

    Runs the moderator over each completed round, the notes it issues are served to the agents in the next round.
    """

    def __init__(self, moderator: Moderator, trigger=OnEveryRound(at=AT.END), priority=1):
        self.moderator = moderator

        def moderate(simulation, properties):
            self.moderator.moderate(simulation.buffer, properties["round"].value)

        super().__init__(trigger_dict={trigger: moderate}, priority=priority)


class TranscriptLogger(Callback):
    """ TranscriptLogger Callback

    Appends every new dialogue entry to a line-delimited JSON file as soon as it's produced, so an interrupted
    run leaves the transcript up to the last completed turn.

    Args:
        out_filename: path of the transcript file
    """

    def __init__(self, out_filename, priority=1):
        self.out_filename = out_filename
        self.out_file = None

        def log_init(simulation, properties):
            self.out_file = open(self.out_filename, "w", encoding="utf-8", newline="\n")

        def log(simulation, properties):
            self.out_file.write(utterance_to_json(properties["last_utterance"].value) + "\n")
            self.out_file.flush()

        def log_clean(simulation, properties):
            if self.out_file is not None:
                self.out_file.close()

        super().__init__(trigger_dict={OnLoop(at=AT.START): log_init,
                                       OnValueChange("last_utterance"): log,
                                       OnLoop(at=AT.END): log_clean},
                         priority=priority)


class Progress(Callback):
    """ Progress Callback

    creates a CLI progress bar over the rounds of a run
    """

    def __init__(self, desc=None, priority=1):
        from tqdm.auto import tqdm
        self.tqdm = tqdm
        self.desc = desc
        self.progress = None

        def progress_init(simulation, properties):
            self.progress = self.tqdm(total=properties["total_rounds"].value, desc=self.desc or simulation.run_id)

        def progress_round(simulation, properties):
            self.progress.update(1)
            self.progress.set_postfix({"turns": properties["turn"].value})

        def progress_stop(simulation, properties):
            self.progress.close()

        super().__init__(trigger_dict={OnLoop(AT.START): progress_init,
                                       OnEveryRound(at=AT.END): progress_round,
                                       OnLoop(AT.END): progress_stop},
                         priority=priority)


class LambdaCallback(Callback):
    """ Lambda Callback

    Executes a given function `fn(simulation, properties)` on the given triggers
    """

    def __init__(self, fn=None, triggers=OnEveryRound(at=AT.END), properties=None, priority=1):
        self.triggers = as_list(triggers)
        self.fn = fn
        trigger_dict = {trigger: fn for trigger in self.triggers}

        super().__init__(trigger_dict=trigger_dict, priority=priority, properties=properties)


class DictLogger(Callback):
    """ DictLogger Callback

    Logs the values of the given properties to a dictionary accessible through the
    ``logs`` attribute

    Args:
        props (List[str]): list of strings with names of properties to log
        trigger (callbacks.Event): event on which this callback is executed
        priority (int): callback priority (lower values have higher priority)

    Attributes:
        logs (dict): dictionary mapping property names (str) to lists of values
    """

    def __init__(self, props, trigger=OnEveryRound(at=AT.END), priority=1):
        self.props = as_list(props)
        self.logs = {name: [] for name in self.props}

        def get_props(simulation, properties):
            for prop_name in self.props:
                if prop_name not in properties:
                    raise KeyError(f"DictLogger tried to access a property that doesn't exist: {prop_name}")
                self.logs[prop_name].append(properties[prop_name].value)

        super().__init__(trigger_dict={trigger: get_props}, priority=priority)


# ----------------------------------------------------------------------------------------------------------------
# runs and batches
# ----------------------------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """ Run configuration

    Attributes:
        scenario_id (str): builtin scenario id or scenario file path
        backend (BackendConfig): backend used by the agents
        seed (int): seed recorded for the run and forwarded to the LLM endpoint
        run_id (Optional[str]): defaults to `{scenario_id}-s{seed}`
        output_dir (str): directory receiving the run artifacts
        moderator_enabled (bool): run the end-of-round moderator
        moderator_mode (str): `rules` or `llm`
        note_templates (Optional[str]): YAML file overriding the corrective note templates
    """
    scenario_id: str
    backend: BackendConfig
    seed: int = 0
    run_id: Optional[str] = None
    output_dir: str = "."
    moderator_enabled: bool = True
    moderator_mode: str = "rules"
    note_templates: Optional[str] = None


@dataclass(frozen=True)
class RunRecord:
    """ Outcome of one run

    Paths are relative to the run's output directory.
    """
    run_id: str
    scenario_id: str
    transcript_path: str
    note_log_path: str
    status: str
    wall_time: float
    backend_kind: str
    seed: int
    agent_turns: int = 0
    error: Optional[str] = None

    def to_dict(self):
        return asdict(self)


def check_moderator(backend: Backend, moderator_enabled: bool, moderator_mode: str):
    """ verifies, before a run starts, that the backend can serve the configured moderator

    Raises:
        ConfigurationError: for an unknown mode, or the `llm` mode on a backend without free-form completions
    """
    if not moderator_enabled:
        return
    if moderator_mode not in ("rules", "llm"):
        raise ConfigurationError(f"unknown moderator mode {moderator_mode!r}, expected rules or llm")
    if moderator_mode == "llm" and not backend.supports_completions:
        raise ConfigurationError(f"the llm moderator needs free-form completions, "
                                 f"which the {backend.kind} backend doesn't support")


def run_simulation(cfg: RunConfig, backend: Optional[Backend] = None, scenario: Optional[Scenario] = None,
                   callbacks=()) -> RunRecord:
    """ runs one simulation and persists its transcript and note log

    The transcript is written to `{run_id}.jsonl.partial` as the run progresses and renamed to `{run_id}.jsonl`
    on completion, the note log goes to `{run_id}.jsonl.moderator`. Runs that don't complete keep the `.partial`
    suffix on both files.

    Args:
        cfg (RunConfig): run configuration
        backend (Backend): optional backend instance, created from `cfg.backend` if not given
        scenario (Scenario): optional loaded scenario, loaded from `cfg.scenario_id` if not given
        callbacks: extra callbacks scheduled during the run

    Returns:
        record (RunRecord): with status `COMPLETED`, `INFRA_FAIL` or `STOPPED`

    Raises:
        ScenarioError, NotFoundError: if the scenario can't be loaded
        ConfigurationError: if the backend configuration is invalid, its script incomplete or it can't serve the
            configured moderator mode
    """
    scenario = scenario if scenario is not None else load_scenario(cfg.scenario_id)
    backend = backend if backend is not None else make_backend(cfg.backend)
    backend.check(scenario)
    check_moderator(backend, cfg.moderator_enabled, cfg.moderator_mode)

    run_id = cfg.run_id or f"{scenario.scenario_id}-s{cfg.seed}"
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    transcript_name = f"{run_id}.jsonl"
    note_name = transcript_name + NOTE_SUFFIX
    partial_path = out_dir / (transcript_name + PARTIAL_SUFFIX)

    moderator = None
    if cfg.moderator_enabled:
        templates = load_note_templates(cfg.note_templates) if cfg.note_templates else None
        moderator = Moderator(scenario,
                              mode=cfg.moderator_mode,
                              backend=backend if cfg.moderator_mode == "llm" else None,
                              templates=templates)

    simulation = Simulation(scenario, backend, run_id, seed=cfg.seed, moderator=moderator)
    logger.info(f"run {run_id} started ({scenario.scenario_id}, {backend.kind} backend, seed {cfg.seed})")

    status, error = COMPLETED, None
    start = time.perf_counter()
    try:
        simulation.run(callbacks=[TranscriptLogger(partial_path)] + as_list(callbacks))
        if simulation.stopped:
            status = STOPPED
    except InfraFailure as e:
        status, error = INFRA_FAIL, str(e)
        logger.warning(f"run {run_id} aborted as {INFRA_FAIL}: {e}")
    wall_time = time.perf_counter() - start

    notes = moderator.notes if moderator is not None else []
    if status == COMPLETED:
        os.replace(partial_path, out_dir / transcript_name)
        save_note_log(notes, out_dir / note_name)
    else:
        transcript_name += PARTIAL_SUFFIX
        note_name += PARTIAL_SUFFIX
        save_note_log(notes, out_dir / note_name)

    record = RunRecord(run_id=run_id,
                       scenario_id=scenario.scenario_id,
                       transcript_path=transcript_name,
                       note_log_path=note_name,
                       status=status,
                       wall_time=wall_time,
                       backend_kind=backend.kind,
                       seed=cfg.seed,
                       agent_turns=len(simulation.buffer.agent_utterances()),
                       error=error)
    logger.info(f"run {run_id} finished: {status} in {wall_time:.2f}s")
    return record


def write_manifest(output_dir: Union[str, Path], manifest: dict):
    write_atomic(Path(output_dir) / MANIFEST, json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")


def load_manifest(output_dir: Union[str, Path]) -> dict:
    """
    Raises:
        FileNotFoundError: if the directory has no batch manifest
    """
    path = Path(output_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no batch manifest found in {output_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def _error_record(cfg: RunConfig, scenario: Scenario, backend: Backend, error: Exception) -> RunRecord:
    logger.error(f"run {cfg.run_id} aborted as {ERROR}: {type(error).__name__}: {error}")
    transcript_name = f"{cfg.run_id}.jsonl"
    return RunRecord(run_id=cfg.run_id,
                     scenario_id=scenario.scenario_id,
                     transcript_path=transcript_name + PARTIAL_SUFFIX,
                     note_log_path=transcript_name + NOTE_SUFFIX + PARTIAL_SUFFIX,
                     status=ERROR,
                     wall_time=0.0,
                     backend_kind=backend.kind,
                     seed=cfg.seed,
                     error=f"{type(error).__name__}: {error}")


def run_batch(scenario_id: str,
              n_runs: int,
              backend: BackendConfig,
              base_seed: int = 0,
              output_dir: Union[str, Path] = ".",
              force: bool = False,
              moderator_enabled: bool = True,
              moderator_mode: str = "rules",
              max_workers: Optional[int] = None,
              progress: bool = False) -> List[RunRecord]:
    """ runs `n_runs` independent seeded simulations of one scenario and writes a batch manifest

    Run `i` uses seed `base_seed + i` and run id `{scenario_id}-{i:03d}`. Up to `min(4, n_runs)` runs execute
    concurrently, all sharing one backend instance.
    A run that raises anything other than an infrastructure failure is recorded with status `ERROR` and the
    remaining runs go on, the manifest always lists every run.

    Returns:
        records (List[RunRecord]): one record per run, in run order

    Raises:
        ValueError: if `n_runs < 1`
        OSError: if `output_dir` is not writable, before any run starts
        FileExistsError: if `output_dir` already holds a manifest and `force` is not set
        ConfigurationError: if the backend can't serve the scenario or the moderator mode, before any run starts
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be at least 1, got {n_runs}")
    output_dir = ensure_writable(output_dir)
    if (output_dir / MANIFEST).exists() and not force:
        raise FileExistsError(f"{output_dir / MANIFEST} already exists, use force to overwrite it")

    scenario = load_scenario(scenario_id)
    shared_backend = make_backend(backend)
    shared_backend.check(scenario)
    check_moderator(shared_backend, moderator_enabled, moderator_mode)

    configs = [RunConfig(scenario_id=scenario.scenario_id,
                         backend=backend,
                         seed=base_seed + i,
                         run_id=f"{scenario.scenario_id}-{i:03d}",
                         output_dir=str(output_dir),
                         moderator_enabled=moderator_enabled,
                         moderator_mode=moderator_mode)
               for i in range(n_runs)]

    workers = max_workers or min(4, n_runs)
    records = [None] * n_runs
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(run_simulation, cfg, shared_backend, scenario): i
                   for i, cfg in enumerate(configs)}
        done = as_completed(futures)
        if progress:
            from tqdm.auto import tqdm
            done = tqdm(done, total=n_runs, desc=scenario.scenario_id)
        for future in done:
            i = futures[future]
            try:
                records[i] = future.result()
            except Exception as e:
                records[i] = _error_record(configs[i], scenario, shared_backend, e)

    manifest = {"scenario_id": scenario.scenario_id,
                "scenario_source": str(scenario_id),
                "n_runs": n_runs,
                "base_seed": base_seed,
                "backend": shared_backend.kind,
                "moderator_enabled": moderator_enabled,
                "moderator_mode": moderator_mode,
                "prompt_version": PROMPT_VERSION,
                "runs": [record.to_dict() for record in records]}
    write_manifest(output_dir, manifest)
    logger.info(f"batch manifest written to {output_dir / MANIFEST} ({n_runs} runs)")
    return records


__all__ = [
    "COMPLETED",
    "INFRA_FAIL",
    "STOPPED",
    "ERROR",
    "PARTIAL_SUFFIX",
    "MANIFEST",
    "StopSimulation",
    "Simulation",
    "Moderate",
    "TranscriptLogger",
    "Progress",
    "LambdaCallback",
    "DictLogger",
    "RunConfig",
    "RunRecord",
    "check_moderator",
    "run_simulation",
    "write_manifest",
    "load_manifest",
    "run_batch"
]
