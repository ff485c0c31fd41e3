"""Deterministic discrete-event queue.

Events pop in non-decreasing time; ties break on a monotone sequence
number assigned at push, so two runs that push in the same order pop in
the same order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

EV_TIMER = "timer"
EV_TX_START = "tx_start"
EV_TX_END = "tx_end"
EV_CAD_RESULT = "cad_result"
EV_RX_COMPLETE = "rx_complete"
EV_BUS_DELIVERY = "bus_delivery"


@dataclass(order=True)
class SimEvent:
    true_time_s: float
    seq: int
    kind: str = field(compare=False)
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0.0

    def push(self, time_s: float, kind: str, target: str, payload: Any = None) -> SimEvent:
        if time_s < self.now - 1e-12:
            raise ValueError(f"event at {time_s} is in the past (now={self.now})")
        ev = SimEvent(time_s, self._seq, kind, target, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Optional[SimEvent]:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.true_time_s
        return ev

    def __len__(self) -> int:
        return len(self._heap)
