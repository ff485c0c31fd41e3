import random

import pytest

from rangesim.bus import TopicBus
from rangesim.events import EventQueue


def test_event_ordering_is_time_then_push_order():
    q = EventQueue()
    q.push(2.0, "b", "x")
    q.push(1.0, "a", "x")
    q.push(1.0, "c", "x")
    kinds = []
    while len(q):
        kinds.append(q.pop().kind)
    assert kinds == ["a", "c", "b"]


def test_clock_advances_and_rejects_past():
    q = EventQueue()
    q.push(5.0, "later", "x")
    assert q.pop().true_time_s == 5.0
    assert q.now == 5.0
    with pytest.raises(ValueError):
        q.push(4.0, "past", "x")


def test_bus_delivery_latency_and_jitter_bounds():
    q = EventQueue()
    bus = TopicBus(q, random.Random(1), latency_s=0.1, jitter_s=0.05)
    for _ in range(50):
        bus.publish("t", {})
    times = []
    while len(q):
        times.append(q.pop().true_time_s)
    assert all(0.05 <= t <= 0.15 for t in times)


def test_bus_dispatch_routes_by_topic():
    q = EventQueue()
    bus = TopicBus(q, random.Random(1), latency_s=0.0, jitter_s=0.0)
    got = []
    bus.subscribe("a", lambda topic, data: got.append((topic, data)))
    bus.publish("a", 1)
    bus.publish("b", 2)
    while len(q):
        bus.dispatch(q.pop().payload)
    assert got == [("a", 1)]
