import pytest
from simhra.engine.callbacks import *


def test_property_trigger():
    p = Property("round", 0)

    class Obs:
        def __init__(self):
            self.event_log = []

        def trigger(self, event):
            self.event_log.append(event)
            assert isinstance(event, OnValueChange)

    obs = Obs()
    p.register(obs)
    p.value = 1
    p.value += 1
    assert p.value == 2
    assert obs.event_log == [OnValueChange("round"), OnValueChange("round")]

    s = StaticProperty("total_rounds", 15)
    s.register(obs)
    s.value = 12
    assert s.value == 12
    assert len(obs.event_log) == 2


def test_OnEveryRound():
    assert OnRound(2) != OnEveryRound(2)
    assert OnEveryRound(2).match(OnRound(2))
    assert OnRound(2).match(OnEveryRound(2))
    assert OnRound(2).match(OnEveryRound(1))
    assert OnEveryRound(1).match(OnRound(2))

    assert not OnRound(2).match(OnEveryRound(3))
    assert not OnEveryRound(3).match(OnEveryRound(1))

    assert OnEveryRound(1).match(OnEveryRound(3))
    assert OnRound(6, AT.END).match(OnEveryRound(3))
    assert OnEveryRound(3, AT.START).match(OnRound(6, AT.START))
    assert not OnEveryRound(3).match(OnRound(6, AT.START))
    assert OnEveryRound(3).match(OnRound(6, AT.END))


def test_OnTurn():
    assert not OnTurn(1).match(OnTurn(2))
    assert OnTurn(1).match(OnEveryTurn(1))
    assert OnEveryTurn(1).match(OnTurn(1))
    assert OnTurn(2).match(OnEveryTurn(1))

    # rounds and turns never match each other
    assert not OnTurn(2).match(OnRound(2))
    assert not OnRound(2).match(OnEveryTurn(1))
    assert not OnEveryTurn(1).match(OnRound(3))


def test_event_keys():
    d = {OnValueChange("round"): 1}
    assert OnValueChange("round") in d
    assert OnValueChange("speaker") not in d

    d = {OnRound(1): "fixed", OnEveryRound(1): "every", OnTurn(1): "turn", OnEveryTurn(1): "every turn"}
    assert len(d) == 4
    assert d[OnRound(1)] == "fixed"
    assert d[OnEveryTurn(1)] == "every turn"

    d = {OnLoop(at=AT.START): 1}
    assert OnLoop(AT.START) in d
    assert OnLoop(AT.END) not in d


def test_event_number_must_be_positive():
    with pytest.raises(ValueError):
        OnEveryRound(0)
    with pytest.raises(ValueError):
        OnTurn(-1)


def test_scheduler_priority_and_nesting():
    turn = Property("turn", 0)
    speaker = Property("speaker", None)
    log = []

    scheduler = Scheduler(simulation=None, properties=[turn, speaker])

    def announce(simulation, properties):
        properties["speaker"].value = "Operator"
        log.append("announce")

    def record(simulation, properties):
        log.append(("record", properties["speaker"].value))

    # runs inside announce, when the speaker changes
    scheduler.register(Callback({OnValueChange("speaker"): record}))
    scheduler.register(Callback({OnValueChange("turn"): lambda *args: log.append("late")}, priority=5))
    scheduler.register(Callback({OnValueChange("turn"): announce}, priority=-1))

    turn.value = 1
    assert log == [("record", "Operator"), "announce", "late"]


def test_scheduler_runs_callback_once():
    calls = []
    cb = Callback({OnEveryRound(1, at=AT.END): lambda *args: calls.append("every"),
                   OnRound(2, at=AT.END): lambda *args: calls.append("two")})
    scheduler = Scheduler(simulation=None)
    scheduler.register(cb)

    scheduler.trigger(OnRound(1, AT.END))
    scheduler.trigger(OnRound(2, AT.END))
    scheduler.trigger(OnRound(2, AT.START))
    assert calls == ["every", "every", "two"]
    assert scheduler.matches(OnRound(2, AT.END)) == [cb]


def test_scheduler_late_registration():
    scheduler = Scheduler(simulation=None)
    calls = []
    scheduler.register(Callback({OnEveryTurn(at=AT.END): lambda *args: calls.append("a")}, priority=2))
    scheduler.trigger(OnTurn(1, AT.END))

    # cached dispatch lists include callbacks registered afterwards
    scheduler.register(Callback({OnTurn(2, AT.END): lambda *args: calls.append("b")}, priority=1))
    scheduler.trigger(OnTurn(2, AT.END))
    assert calls == ["a", "b", "a"]

    with pytest.raises(TypeError):
        scheduler.trigger("round end")


def test_scheduler_property_in_use():
    scheduler = Scheduler(simulation=None, properties=[Property("round", 0)])
    cb = Callback({OnLoop(AT.START): lambda *args: None}, properties=[Property("round", 1)])
    with pytest.raises(ValueError, match="round"):
        scheduler.register(cb)
    assert scheduler.callbacks == []


def test_on_callback():
    speaker = Property("speaker", None)
    notes = Property("notes", 1)

    def moderate(simulation, properties):
        notes.value += 1

    def before(simulation, properties):
        notes.value *= 10

    def after(simulation, properties):
        notes.value *= 2

    moderator = Callback({OnValueChange("speaker"): moderate})
    scheduler = Scheduler(simulation=None, properties=[speaker])
    scheduler.register(moderator)
    scheduler.register(Callback({OnCallback(moderator, at=AT.START): before}))
    scheduler.register(Callback({OnCallback(moderator, at=AT.END): after}))

    speaker.value = "Authority"
    assert notes.value == 22
