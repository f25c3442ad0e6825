""" Loop events, observable properties and the callback scheduler

A run is a sequence of rounds, each made of agent turns. The simulation triggers an event at the start and end of
the run (`OnLoop`), of every round (`OnRound`) and of every agent turn (`OnTurn`), and each assignment to one of
its loop properties triggers `OnValueChange`. Callbacks map events to functions and the `Scheduler` runs the
matching ones in priority order.
"""
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Any, ClassVar, Optional

from simhra.utils import as_list


class AT(Enum):
    """ moment of a run, round or turn an event refers to """
    START = "start"
    END = "end"


@dataclass(frozen=True)
class Event:
    """ base loop event, events with the same type and fields are equal and interchangeable as dict keys """

    def match(self, other) -> bool:
        """ `True` if a callback registered on `self` runs when `other` is triggered (or vice-versa) """
        return self == other


@dataclass(frozen=True)
class OnTime(Event):
    """ OnTime

    Event at the `at` moment of the `n`-th round or turn. Not triggered itself, see `OnRound`, `OnEveryRound`,
    `OnTurn` and `OnEveryTurn`.

    A periodic event matches every event of the same unit and moment whose number is a multiple of its period;
    two fixed events match only if they are equal.

    Attributes:
        n (int): round or turn number, or the period of an `OnEvery*` event
        at (AT): start or end
    """
    n: int = 1
    at: AT = AT.END

    unit: ClassVar[Optional[str]] = None
    every: ClassVar[bool] = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"{type(self).__name__} needs a positive round or turn number, got {self.n}")

    def match(self, other) -> bool:
        if not isinstance(other, OnTime) or other.unit != self.unit or other.at != self.at:
            return False
        if self.every:
            return other.n % self.n == 0
        if other.every:
            return self.n % other.n == 0
        return self.n == other.n


class OnRound(OnTime):
    """ round `n`, e.g. `OnRound(12, AT.END)` runs once after the agents of round 12 have spoken """
    unit = "round"


class OnEveryRound(OnRound):
    """ every `n`-th round, `OnEveryRound(at=AT.END)` runs after each round """
    every = True


class OnTurn(OnTime):
    """ `n`-th agent turn of the run, counted across rounds from 1 """
    unit = "turn"


class OnEveryTurn(OnTurn):
    every = True


@dataclass(frozen=True)
class OnLoop(Event):
    at: AT = AT.END


@dataclass(frozen=True)
class OnValueChange(Event):
    """ a new value was assigned to the loop property `name` """
    name: str


@dataclass(frozen=True, eq=False)
class OnCallback(Event):
    """ right before (`AT.START`) or after (`AT.END`) the given callback instance runs """
    instance: Any
    at: AT = AT.START

    def __eq__(self, other):
        return isinstance(other, OnCallback) and other.instance is self.instance and other.at == self.at

    def __hash__(self):
        return hash((OnCallback, id(self.instance), self.at))


class Property:
    """ Property

    Named loop value. Every assignment to `value` notifies the registered observers with an
    `OnValueChange(name)` event, setting the initial value at construction does not.

    Args:
        name (str): property name, unique within a scheduler
        value: initial value
    """

    def __init__(self, name, value=None):
        self.name = name
        self._value = value
        self._observers = []

    def register(self, observer):
        """ observer must have a `trigger(event)` method """
        self._observers.append(observer)

    def _changed(self):
        event = OnValueChange(self.name)
        for observer in self._observers:
            observer.trigger(event)

    @property
    def value(self):
        return self._value

    @value.setter
    def value(self, value):
        self._value = value
        self._changed()


class StaticProperty(Property):
    """ property whose changes are never announced, like the number of rounds of a run """

    def _changed(self):
        pass


class Callback:
    """ Callback

    Args:
        trigger_dict (dict): maps events to functions `fn(simulation, properties)`
        priority (int): lower values run first when several callbacks match the same event
        properties (List[Property]): properties this callback adds to the scheduler
    """

    def __init__(self, trigger_dict, priority=1, properties=None):
        self.trigger_dict: dict = trigger_dict
        self.priority = priority
        self.properties = as_list(properties)

    def __call__(self, event, simulation=None, properties=None):
        """ runs every function whose trigger matches `event`

        Returns:
            results (list): return values of the functions that ran, in registration order
        """
        return [fn(simulation, properties) for trigger, fn in self.trigger_dict.items() if trigger.match(event)]

    def __lt__(self, other):
        return self.priority < other.priority


class Scheduler:
    """ Scheduler

    Dispatches events to the registered callbacks. A callback runs at most once per event even if several of its
    triggers match it, and each run is wrapped in `OnCallback(callback, AT.START)` and
    `OnCallback(callback, AT.END)` events.

    Args:
        simulation: object passed to every callback function
        properties (List[Property]): loop properties observed by the scheduler and passed to every callback
            function as a dict name -> Property
    """

    def __init__(self, simulation, properties=()):
        self.simulation = simulation
        self.callbacks = []
        self.props = {}
        self._by_trigger = defaultdict(list)
        # event -> callbacks sorted by priority, cleared when a callback is registered
        self._dispatch = {}

        for prop in properties:
            self.observe(prop)

    def observe(self, prop: Property):
        if prop.name in self.props:
            raise ValueError(f"{prop.name} Property already in use")
        prop.register(self)
        self.props[prop.name] = prop

    def register(self, callback: Callback):
        """
        Raises:
            ValueError: if the callback exposes a property whose name is already taken
        """
        taken = [prop.name for prop in callback.properties if prop.name in self.props]
        if taken:
            raise ValueError(f"{', '.join(taken)} Property already in use")

        self.callbacks.append(callback)
        for trigger in callback.trigger_dict:
            self._by_trigger[trigger].append(callback)
        for prop in callback.properties:
            self.observe(prop)
        self._dispatch.clear()

    def matches(self, event: Event):
        """ callbacks to run for `event`, in priority order """
        if not isinstance(event, Event):
            raise TypeError(f"Can only trigger the scheduler on Events, {type(event)} found")

        if event not in self._dispatch:
            found = {}
            for trigger, callbacks in self._by_trigger.items():
                if event.match(trigger):
                    found.update(dict.fromkeys(callbacks))
            self._dispatch[event] = sorted(found)
        return self._dispatch[event]

    def trigger(self, event: Event):
        for callback in self.matches(event):
            self.trigger(OnCallback(callback, AT.START))
            callback(event, self.simulation, self.props)
            self.trigger(OnCallback(callback, AT.END))


__all__ = [
    "AT",
    "Event",
    "OnTime",
    "OnRound",
    "OnEveryRound",
    "OnTurn",
    "OnEveryTurn",
    "OnLoop",
    "OnValueChange",
    "OnCallback",
    "Property",
    "StaticProperty",
    "Callback",
    "Scheduler"
]
