"""End-node state machine.

A low-power node sleeps except for: a periodic instruction check
(uplink, then a CAD-gated response window), execution of queued tasks at
their countdown deadlines, and result reporting.  All scheduling on the
node side uses its own drifting clock; countdowns received from the
gateway are anchored at the start of the node's own check uplink, which
the node timestamps locally.

The node never measures absolute time.  Its local clock runs at
(1 + clock_ppm * 1e-6) times true time.

Collision awareness: a transmitter is told at the end of its own uplink
whether another same-frequency transmission overlapped it (justified as
pre/post listen-before-talk energy sensing).  This is what triggers the
bounded-window retry of the instruction check.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Protocol, Tuple, Union

from . import payloads
from .frame_codec import (
    MacFrame,
    OP_INSTRUCTION_CHECK_REQUEST,
    OP_INSTRUCTION_RESPONSE,
    OP_PASSIVE_RANGING_BATCH,
    OP_PASSIVE_RANGING_RESULT,
    OP_RANGING_BATCH,
    OP_RANGING_RESULT,
)

log = logging.getLogger(__name__)

MAX_QUEUE = 32
RETRY_WINDOW_S = (0.5, 3.0)
MAX_RETRIES = 3
CAD_OFFSET_S = 0.002     # CAD starts this far into the downlink preamble
CAD_WINDOW_S = 0.015
SLAVE_EARLY_S = 0.050    # slave window opens this early
SLAVE_HOLD_S = 0.100     # and stays open this long past the deadline
RX_TIMEOUT_S = 0.5
STAGGER_WINDOW_S = (0.2, 2.0)


class Phase(Enum):
    SLEEPING = "sleeping"
    CHECKING = "checking"
    LISTENING = "listening"
    RANGING = "ranging"
    RANGING_WAIT = "ranging_wait"
    PASSIVE_WAIT = "passive_wait"


class ProtocolViolation(Exception):
    pass


class QueueOverflow(Exception):
    pass


class GiveUp(Exception):
    pass


def retry_policy(attempt: int, rng: random.Random,
                 forced_delay_s: Optional[float] = None) -> float:
    """Bounded random backoff for a collided instruction check."""
    if attempt < 1:
        raise ValueError("attempt counts from 1")
    if attempt > MAX_RETRIES:
        raise GiveUp(f"gave up after {MAX_RETRIES} retries")
    if forced_delay_s is not None:
        return forced_delay_s
    return rng.uniform(*RETRY_WINDOW_S)


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    network_id: int
    check_interval_s: float = 600.0
    mode: str = "low_power"         # or "always_on"
    role: str = "target"            # or "anchor"
    clock_ppm: float = 0.0
    first_check_s: float = 0.0      # local time of the first instruction check
    battery_capacity_c: float = 810.0
    ranging_repeats: int = 10


@dataclass
class TaskQueueEntry:
    kind: str                        # "ptp" or "passive"
    execute_at_local: float
    ranging_id: int
    mode: Optional[int] = None       # ptp: MODE_MASTER / MODE_SLAVE
    partner_id: Optional[int] = None  # ptp
    master_id: Optional[int] = None  # passive
    slave_id: Optional[int] = None   # passive


class NodeContext(Protocol):
    """Services the simulator provides to a node state machine."""

    def local_now(self, node_id: int) -> float: ...
    def set_timer(self, node_id: int, name: str, at_local: float,
                  data: object = None) -> None: ...
    def transmit(self, node_id: int, frame: MacFrame, freq: str,
                 charge: Optional[str]) -> float:
        """Start a transmission now; returns its airtime in seconds."""
    def start_cad(self, node_id: int, freq: str, window_s: float) -> None: ...
    def open_rx(self, node_id: int, freq: str, timeout_s: float) -> None: ...
    def close_rx(self, node_id: int) -> None: ...
    def charge_activity(self, node_id: int, profile_name: str) -> None: ...
    def perform_ranging(self, node_id: int, entry: TaskQueueEntry) -> Optional[dict]: ...
    def battery_mv(self, node_id: int) -> int: ...
    def note(self, node_id: int, what: str, detail: str = "") -> None: ...
    def forced_retry_delay(self) -> Optional[float]: ...
    def rng(self) -> random.Random: ...


class Node:
    def __init__(self, cfg: NodeConfig, gateway_addr: int, alpha_s: float):
        self.cfg = cfg
        self.gateway_addr = gateway_addr
        self.alpha_s = alpha_s
        self.phase = Phase.SLEEPING
        self.queue: List[TaskQueueEntry] = []
        self.attempt = 0
        self.nominal_check_local = cfg.first_check_s
        self.check_anchor_local: Optional[float] = None  # uplink TX start
        self.wait_entry: Optional[TaskQueueEntry] = None
        self.pending_result: Optional[MacFrame] = None

    # -- lifecycle -----------------------------------------------------

    def start(self, ctx: NodeContext) -> None:
        ctx.set_timer(self.cfg.node_id, "check", self.nominal_check_local)

    # -- event dispatch ------------------------------------------------

    def step(self, event: str, ctx: NodeContext, data: object = None) -> None:
        handler = getattr(self, f"_on_{event}", None)
        if handler is None:
            raise ProtocolViolation(f"node {self.cfg.node_id}: no handler for {event}")
        handler(ctx, data)

    # -- instruction check cycle ----------------------------------------

    def _on_check(self, ctx: NodeContext, data) -> None:
        self.attempt = 1
        self._send_check(ctx)

    def _on_retry(self, ctx: NodeContext, data) -> None:
        self._send_check(ctx)

    def _send_check(self, ctx: NodeContext) -> None:
        self.phase = Phase.CHECKING
        self.check_anchor_local = ctx.local_now(self.cfg.node_id)
        frame = MacFrame(
            self.cfg.network_id, self.gateway_addr, self.cfg.node_id,
            OP_INSTRUCTION_CHECK_REQUEST,
            payloads.CheckRequestData(ctx.battery_mv(self.cfg.node_id)).encode())
        ctx.transmit(self.cfg.node_id, frame, "comm",
                     charge="instruction_check_request")

    def _on_tx_outcome(self, ctx: NodeContext, data) -> None:
        collided = bool(data.get("collided"))
        purpose = data.get("purpose")
        if purpose != "check":
            return  # result uplinks are fire-and-forget
        if not collided:
            # sleep until the gateway's delayed response slot, then CAD
            cad_at = ctx.local_now(self.cfg.node_id) + self.alpha_s + CAD_OFFSET_S
            ctx.set_timer(self.cfg.node_id, "cad", cad_at)
            return
        ctx.note(self.cfg.node_id, "uplink_collision",
                 f"attempt={self.attempt}")
        try:
            delay = retry_policy(self.attempt, ctx.rng(), ctx.forced_retry_delay())
        except GiveUp:
            ctx.note(self.cfg.node_id, "check_giveup", "")
            self._finish_cycle(ctx)
            return
        self.attempt += 1
        ctx.set_timer(self.cfg.node_id, "retry", self.check_anchor_local + delay)

    def _on_cad(self, ctx: NodeContext, data) -> None:
        ctx.start_cad(self.cfg.node_id, "comm", CAD_WINDOW_S)

    def _on_cad_result(self, ctx: NodeContext, data) -> None:
        detected = bool(data)
        if not detected:
            # silence means no pending instruction: skip the RX window
            ctx.charge_activity(self.cfg.node_id, "instruction_check_cad_only")
            self._finish_cycle(ctx)
            return
        ctx.charge_activity(self.cfg.node_id, "instruction_check_with_packet")
        self.phase = Phase.LISTENING
        ctx.open_rx(self.cfg.node_id, "comm", RX_TIMEOUT_S)

    def _on_rx_timeout(self, ctx: NodeContext, data) -> None:
        if self.phase is Phase.LISTENING:
            ctx.note(self.cfg.node_id, "rx_timeout", "")
            self._finish_cycle(ctx)

    def _on_rx_complete(self, ctx: NodeContext, frame) -> None:
        if frame.network_id != self.cfg.network_id:
            ctx.note(self.cfg.node_id, "drop_frame",
                     f"network_id={frame.network_id}")
            return
        if frame.dest_addr != self.cfg.node_id:
            return
        if self.phase is not Phase.LISTENING:
            return
        ctx.close_rx(self.cfg.node_id)
        if frame.opcode == OP_RANGING_BATCH:
            self.enqueue_ptp_batch(ctx, payloads.decode_ptp_batch(frame.data))
        elif frame.opcode == OP_PASSIVE_RANGING_BATCH:
            self.enqueue_passive_batch(ctx, payloads.decode_passive_batch(frame.data))
        else:
            ctx.note(self.cfg.node_id, "drop_frame", f"opcode={frame.opcode:#x}")
        self._finish_cycle(ctx)

    def _finish_cycle(self, ctx: NodeContext) -> None:
        self.phase = Phase.SLEEPING
        self.nominal_check_local += self.cfg.check_interval_s
        ctx.set_timer(self.cfg.node_id, "check", self.nominal_check_local)

    # -- task queue ------------------------------------------------------

    def enqueue_ptp_batch(self, ctx: NodeContext,
                          entries: List[payloads.PtpEntry]) -> None:
        anchor = self.check_anchor_local
        now = ctx.local_now(self.cfg.node_id)
        for e in entries:
            due_local = anchor + e.countdown_s
            if due_local < now:
                ctx.note(self.cfg.node_id, "late_task",
                         f"ranging_id={e.ranging_id} late_by={now - due_local:.3f}")
                due_local = now
            entry = TaskQueueEntry("ptp", due_local, e.ranging_id,
                                   mode=e.mode, partner_id=e.partner_id)
            self._enqueue(entry)
            wake = due_local if e.mode == payloads.MODE_MASTER else due_local - SLAVE_EARLY_S
            ctx.set_timer(self.cfg.node_id, "task", max(wake, now), data=entry)

    def enqueue_passive_batch(self, ctx: NodeContext,
                              entries: List[payloads.PassiveEntry]) -> None:
        anchor = self.check_anchor_local
        now = ctx.local_now(self.cfg.node_id)
        for e in entries:
            due_local = max(anchor + e.countdown_s, now)
            entry = TaskQueueEntry("passive", due_local, e.ranging_id,
                                   master_id=e.master_id, slave_id=e.slave_id)
            self._enqueue(entry)
            ctx.set_timer(self.cfg.node_id, "task",
                          max(due_local - SLAVE_EARLY_S, now), data=entry)

    def _enqueue(self, entry: TaskQueueEntry) -> None:
        if len(self.queue) >= MAX_QUEUE:
            raise QueueOverflow(f"node {self.cfg.node_id} queue full")
        self.queue.append(entry)
        self.queue.sort(key=lambda t: t.execute_at_local)

    # -- task execution ---------------------------------------------------

    def _on_task(self, ctx: NodeContext, entry: TaskQueueEntry) -> None:
        if entry in self.queue:
            self.queue.remove(entry)
        if entry.kind == "passive":
            self.phase = Phase.PASSIVE_WAIT
            self.wait_entry = entry
            ctx.open_rx(self.cfg.node_id, "ranging",
                        SLAVE_EARLY_S + SLAVE_HOLD_S)
            ctx.set_timer(self.cfg.node_id, "wait_timeout",
                          ctx.local_now(self.cfg.node_id) + SLAVE_EARLY_S + SLAVE_HOLD_S,
                          data=entry)
            return
        if entry.mode == payloads.MODE_SLAVE:
            self.phase = Phase.RANGING_WAIT
            self.wait_entry = entry
            ctx.set_timer(self.cfg.node_id, "wait_timeout",
                          ctx.local_now(self.cfg.node_id) + SLAVE_EARLY_S + SLAVE_HOLD_S,
                          data=entry)
            return
        # master initiates now
        self.phase = Phase.RANGING
        outcome = ctx.perform_ranging(self.cfg.node_id, entry)
        ctx.charge_activity(self.cfg.node_id, "ptp_ranging_10_repeats")
        if outcome is None:
            ctx.note(self.cfg.node_id, "partner_silent",
                     f"partner={entry.partner_id} ranging_id={entry.ranging_id}")
            self.phase = Phase.SLEEPING
            return
        result = payloads.RangingResultData(
            ranging_id=entry.ranging_id, slave_id=entry.partner_id,
            distance_m=outcome["distance_m"],
            raw_distance_m=outcome["raw_distance_m"],
            rssi_dbm=outcome["rssi_dbm"])
        frame = MacFrame(self.cfg.network_id, self.gateway_addr,
                         self.cfg.node_id, OP_RANGING_RESULT, result.encode())
        # report right after the exchange; TX cost is inside the ranging profile
        ctx.set_timer(self.cfg.node_id, "send_result",
                      ctx.local_now(self.cfg.node_id) + outcome["duration_s"],
                      data=frame)

    def _on_send_result(self, ctx: NodeContext, frame: MacFrame) -> None:
        ctx.transmit(self.cfg.node_id, frame, "comm", charge=None)
        self.phase = Phase.SLEEPING

    def _on_wait_timeout(self, ctx: NodeContext, entry: TaskQueueEntry) -> None:
        if self.wait_entry is entry and self.phase in (Phase.RANGING_WAIT,
                                                       Phase.PASSIVE_WAIT):
            ctx.note(self.cfg.node_id, "window_expired",
                     f"ranging_id={entry.ranging_id}")
            if self.phase is Phase.PASSIVE_WAIT:
                ctx.close_rx(self.cfg.node_id)
            # slave/listener side energy for the missed window
            ctx.charge_activity(self.cfg.node_id, "ptp_ranging_10_repeats")
            self.wait_entry = None
            self.phase = Phase.SLEEPING

    def slave_exchange_done(self, ctx: NodeContext) -> None:
        """Called by the simulator when this node served as ranging slave."""
        ctx.charge_activity(self.cfg.node_id, "ptp_ranging_10_repeats")
        self.wait_entry = None
        self.phase = Phase.SLEEPING

    def passive_observation(self, ctx: NodeContext, entry: TaskQueueEntry,
                            delta_t_s: float, duration_s: float) -> None:
        """Called by the simulator when an observed exchange completes."""
        ctx.close_rx(self.cfg.node_id)
        ctx.charge_activity(self.cfg.node_id, "ptp_ranging_10_repeats")
        result = payloads.PassiveResultData(
            ranging_id=entry.ranging_id, master_id=entry.master_id,
            slave_id=entry.slave_id, delta_t_s=delta_t_s)
        frame = MacFrame(self.cfg.network_id, self.gateway_addr,
                         self.cfg.node_id, OP_PASSIVE_RANGING_RESULT,
                         result.encode())
        stagger = ctx.rng().uniform(*STAGGER_WINDOW_S)
        ctx.set_timer(self.cfg.node_id, "send_result",
                      ctx.local_now(self.cfg.node_id) + duration_s + stagger,
                      data=frame)
        self.wait_entry = None
        self.phase = Phase.SLEEPING
