"""In-process publish/subscribe topic bus with simulated delivery latency.

Stands in for an MQTT broker between gateway and network server.  A
deployment adapter may map topics 1:1 onto MQTT; payloads are either MAC
frame bytes or plain dicts.  Deliveries go through the event queue so
latency is part of the simulated timeline and stays deterministic.
"""

from __future__ import annotations

import random
from typing import Any, Callable, Dict, List

from .events import EV_BUS_DELIVERY, EventQueue

TOPIC_INSTRUCTION_CHECK = "instruction-check"
TOPIC_CONFIG_CHECK = "config-check"
TOPIC_RESULT = "ResultTopic"
TOPIC_DOWNLINK_PREFIX = "downlink/"


class TopicBus:
    def __init__(self, queue: EventQueue, rng: random.Random,
                 latency_s: float = 0.1, jitter_s: float = 0.05):
        self._queue = queue
        self._rng = rng
        self.latency_s = latency_s
        self.jitter_s = jitter_s
        self._subscribers: Dict[str, List[Callable[[str, Any], None]]] = {}

    def subscribe(self, topic: str, handler: Callable[[str, Any], None]) -> None:
        self._subscribers.setdefault(topic, []).append(handler)

    def publish(self, topic: str, payload: Any) -> None:
        jitter = self._rng.uniform(-self.jitter_s, self.jitter_s) if self.jitter_s else 0.0
        delay = max(0.0, self.latency_s + jitter)
        self._queue.push(self._queue.now + delay, EV_BUS_DELIVERY, "bus",
                         payload={"topic": topic, "data": payload})

    def dispatch(self, event_payload: dict) -> None:
        """Called by the simulator when a bus delivery event fires."""
        topic = event_payload["topic"]
        for handler in self._subscribers.get(topic, []):
            handler(topic, event_payload["data"])
