from pathlib import Path

import pytest
from simhra.backends import (BackendConfig, Backend, ScriptedBackend, ConfigurationError, InfraFailure, PROMPT_VERSION,
                             assemble_prompt)
from simhra.dialogue import WORLD, load_transcript
from simhra.engine import *
from simhra.moderator import load_note_log
from simhra.scenario import load_scenario, NotFoundError

DATA = Path(__file__).parent / "data"


def _scripted(scenario_id):
    return BackendConfig(kind="scripted", script_path=scenario_id)


class FlakyBackend(Backend):
    """ replays a script and fails for good from a given round on """
    kind = "llm"

    def __init__(self, scenario_id, fail_round):
        self.script = ScriptedBackend(scenario_id)
        self.fail_round = fail_round

    def generate_turn(self, req):
        if req.round >= self.fail_round:
            raise InfraFailure("LLM endpoint failed after 3 attempts: connection refused")
        return self.script.generate_turn(req)


def test_simulation_loop():
    s = load_scenario("tmi1979")
    sim = Simulation(s, ScriptedBackend("tmi1979"), run_id="tmi1979-s0")
    buffer = sim.run()

    assert not sim.stopped
    assert buffer.rounds() == list(range(1, 16))
    assert len(buffer.agent_utterances()) == 45
    for r in buffer.rounds():
        speakers = [u.speaker for u in buffer.in_round(r) if u.is_agent]
        assert speakers == ["Authority", "Coordinator", "Operator"]
        assert [u.turn_index for u in buffer.in_round(r) if u.is_agent] == [1, 2, 3]


def test_world_entries():
    s = load_scenario("tmi1979")
    sim = Simulation(s, ScriptedBackend("tmi1979"), run_id="r")
    buffer = sim.run()

    first = buffer[0]
    assert first.speaker == WORLD
    assert first.turn_index == 0
    assert first.text.startswith("T+0 min. ")
    assert s.events_at(1)[0].description in first.text

    world = [u for u in buffer if u.speaker == WORLD]
    assert all(u.text.startswith(f"T+{(u.round - 1) * 10} min.") for u in world)
    assert len(world) == sum(1 for r in range(1, 16) if s.events_at(r))


def test_golden_replay(tmp_path):
    for scenario_id in ("tmi1979", "chernobyl1986"):
        cfg = RunConfig(scenario_id=scenario_id, backend=_scripted(scenario_id), output_dir=str(tmp_path))
        record = run_simulation(cfg)

        assert record.status == COMPLETED
        assert record.run_id == f"{scenario_id}-s0"
        assert record.transcript_path == f"{scenario_id}-s0.jsonl"
        assert record.backend_kind == "scripted"
        assert record.error is None
        golden = DATA / f"{scenario_id}.golden.jsonl"
        assert load_transcript(tmp_path / record.transcript_path) == load_transcript(golden)
        assert not (tmp_path / (record.transcript_path + PARTIAL_SUFFIX)).exists()


def test_replay_is_deterministic(tmp_path):
    texts = []
    for out in ("a", "b"):
        cfg = RunConfig(scenario_id="chernobyl1986", backend=_scripted("chernobyl1986"), seed=7,
                        output_dir=str(tmp_path / out))
        record = run_simulation(cfg)
        texts.append((tmp_path / out / record.transcript_path).read_bytes())
        texts.append((tmp_path / out / record.note_log_path).read_bytes())
    assert texts[0] == texts[2]
    assert texts[1] == texts[3]


def test_note_log_written(tmp_path):
    record = run_simulation(RunConfig(scenario_id="chernobyl1986", backend=_scripted("chernobyl1986"),
                                      output_dir=str(tmp_path)))
    assert record.note_log_path == record.transcript_path + ".moderator"
    notes = load_note_log(tmp_path / record.note_log_path)
    assert [(n.target_agent, n.round_issued, n.round_applies) for n in notes] == [("Operator", 7, 8)]
    assert record.agent_turns == 36

    record = run_simulation(RunConfig(scenario_id="chernobyl1986", backend=_scripted("chernobyl1986"),
                                      run_id="no-moderator", moderator_enabled=False, output_dir=str(tmp_path)))
    assert load_note_log(tmp_path / record.note_log_path) == []


def test_hidden_guidance_stays_private(tmp_path):
    sentinel = "SENTINEL-7f3a"
    templates = tmp_path / "notes.yaml"
    templates.write_text(f"PrematureEscalation: '{sentinel} pe'\n"
                         f"RationalOverride: '{sentinel} ro'\n"
                         f"AuthorityInversion: '{sentinel} ai'\n")
    requests = []

    def capture(simulation, properties):
        requests.append(properties["turn_request"].value)

    cfg = RunConfig(scenario_id="chernobyl1986", backend=_scripted("chernobyl1986"),
                    output_dir=str(tmp_path / "out"), note_templates=str(templates))
    record = run_simulation(cfg, callbacks=[LambdaCallback(capture, triggers=OnEveryTurn(at=AT.START))])
    assert len(requests) == 36

    guided = [req for req in requests if req.hidden_guidance]
    assert [(req.role.role_name, req.round) for req in guided] == [("Operator", 8)]
    system, user = assemble_prompt(guided[0])
    assert sentinel in system["content"]
    assert sentinel not in user["content"]

    for req in requests:
        assert sentinel not in req.history_rendering
    transcript = (tmp_path / "out" / record.transcript_path).read_text(encoding="utf-8")
    assert sentinel not in transcript
    notes = (tmp_path / "out" / record.note_log_path).read_text(encoding="utf-8")
    assert sentinel in notes


def test_dict_logger():
    s = load_scenario("chernobyl1986")
    logger = DictLogger(["round", "turn", "speaker"])
    sim = Simulation(s, ScriptedBackend("chernobyl1986"), run_id="r")
    sim.run(callbacks=[logger])

    assert logger.logs["round"] == list(range(1, 13))
    assert logger.logs["turn"] == list(range(3, 37, 3))
    assert set(logger.logs["speaker"]) == {"Operator"}

    bad = DictLogger(["learning_rate"])
    with pytest.raises(KeyError):
        Simulation(s, ScriptedBackend("chernobyl1986"), run_id="r").run(callbacks=[bad])


def test_lambda_callback_rounds():
    s = load_scenario("tmi1979")
    seen = []

    def fn(simulation, properties):
        seen.append((properties["round"].value, len(simulation.buffer)))

    sim = Simulation(s, ScriptedBackend("tmi1979"), run_id="r")
    sim.run(callbacks=LambdaCallback(fn, triggers=OnEveryRound(5, at=AT.END)))
    assert [r for r, _ in seen] == [5, 10, 15]
    assert seen[-1][1] == len(sim.buffer)


def test_stop_simulation(tmp_path):
    def stop(simulation, properties):
        raise StopSimulation("enough")

    cfg = RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(tmp_path))
    record = run_simulation(cfg, callbacks=[LambdaCallback(stop, triggers=OnRound(3, at=AT.END))])

    assert record.status == STOPPED
    assert record.transcript_path == "tmi1979-s0.jsonl.partial"
    assert not (tmp_path / "tmi1979-s0.jsonl").exists()
    partial = load_transcript(tmp_path / record.transcript_path)
    assert partial.rounds() == [1, 2, 3]
    assert record.agent_turns == 9


def test_infra_failure(tmp_path):
    cfg = RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(tmp_path))
    record = run_simulation(cfg, backend=FlakyBackend("tmi1979", fail_round=4))

    assert record.status == INFRA_FAIL
    assert "3 attempts" in record.error
    assert record.transcript_path.endswith(PARTIAL_SUFFIX)
    assert record.note_log_path.endswith(PARTIAL_SUFFIX)
    partial = load_transcript(tmp_path / record.transcript_path)
    assert partial.rounds() == [1, 2, 3, 4]
    assert len(partial.agent_utterances()) == 9
    assert record.agent_turns == 9


def test_run_requires_valid_scenario(tmp_path):
    with pytest.raises(NotFoundError):
        run_simulation(RunConfig(scenario_id="windscale1957", backend=_scripted("tmi1979"),
                                 output_dir=str(tmp_path)))


def test_run_batch(tmp_path):
    out = tmp_path / "batch"
    records = run_batch("chernobyl1986", 3, _scripted("chernobyl1986"), base_seed=10, output_dir=out)

    assert [r.run_id for r in records] == ["chernobyl1986-000", "chernobyl1986-001", "chernobyl1986-002"]
    assert [r.seed for r in records] == [10, 11, 12]
    assert all(r.status == COMPLETED for r in records)

    manifest = load_manifest(out)
    assert manifest["scenario_id"] == "chernobyl1986"
    assert manifest["scenario_source"] == "chernobyl1986"
    assert manifest["n_runs"] == 3
    assert manifest["backend"] == "scripted"
    assert manifest["moderator_mode"] == "rules"
    assert manifest["prompt_version"] == PROMPT_VERSION
    assert [r["run_id"] for r in manifest["runs"]] == [r.run_id for r in records]

    # scripted replays are identical up to the run id
    texts = [(out / r.transcript_path).read_text(encoding="utf-8").replace(r.run_id, "") for r in records]
    assert texts[0] == texts[1] == texts[2]

    with pytest.raises(FileExistsError):
        run_batch("chernobyl1986", 1, _scripted("chernobyl1986"), output_dir=out)
    records = run_batch("chernobyl1986", 1, _scripted("chernobyl1986"), output_dir=out, force=True)
    assert load_manifest(out)["n_runs"] == 1


def test_llm_moderator_needs_completions(tmp_path):
    out = tmp_path / "out"
    cfg = RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(out), moderator_mode="llm")
    with pytest.raises(ConfigurationError, match="free-form completions"):
        run_simulation(cfg)
    assert not out.exists()

    with pytest.raises(ConfigurationError, match="free-form completions"):
        run_batch("tmi1979", 2, _scripted("tmi1979"), output_dir=out, moderator_mode="llm")
    assert list(out.iterdir()) == []

    # not needed without a moderator
    cfg = RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(out),
                    moderator_enabled=False, moderator_mode="llm")
    assert run_simulation(cfg).status == COMPLETED

    with pytest.raises(ConfigurationError, match="unknown moderator mode"):
        run_simulation(RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(out),
                                 moderator_mode="human"))


def test_run_batch_records_run_errors(tmp_path, monkeypatch):
    import simhra.engine.simulation as simulation
    run_one = simulation.run_simulation

    def failing_second_run(cfg, *args, **kwargs):
        if cfg.seed == 1:
            raise RuntimeError("transcript encoder crashed")
        return run_one(cfg, *args, **kwargs)

    monkeypatch.setattr(simulation, "run_simulation", failing_second_run)
    out = tmp_path / "batch"
    records = run_batch("tmi1979", 3, _scripted("tmi1979"), output_dir=out)

    assert [r.status for r in records] == [COMPLETED, ERROR, COMPLETED]
    assert records[1].error == "RuntimeError: transcript encoder crashed"
    assert records[1].transcript_path.endswith(PARTIAL_SUFFIX)
    manifest = load_manifest(out)
    assert [r["status"] for r in manifest["runs"]] == [COMPLETED, ERROR, COMPLETED]


def test_progress(tmp_path):
    pytest.importorskip("tqdm")
    progress = Progress(desc="tmi")
    cfg = RunConfig(scenario_id="tmi1979", backend=_scripted("tmi1979"), output_dir=str(tmp_path))
    run_simulation(cfg, callbacks=[progress])
    assert progress.progress.n == 15
    assert progress.progress.total == 15


def test_run_batch_errors(tmp_path):
    with pytest.raises(ValueError):
        run_batch("tmi1979", 0, _scripted("tmi1979"), output_dir=tmp_path)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path)

    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_batch("tmi1979", 1, _scripted("tmi1979"), output_dir=blocker / "out")
