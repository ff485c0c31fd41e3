"""Gateway: mains-powered bridge between the radio side and the bus.

Two logically concurrent handlers, serialized by the event loop: the
instruction-check bridge (node -> server -> delayed downlink) and the
result forwarder.  The gateway never originates instructions; it encodes
the countdown for each entry at downlink build time as
due_at - check_uplink_start, so a retried check automatically receives
the remaining time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from . import payloads
from .bus import (
    TOPIC_CONFIG_CHECK,
    TOPIC_DOWNLINK_PREFIX,
    TOPIC_INSTRUCTION_CHECK,
    TOPIC_RESULT,
    TopicBus,
)
from .frame_codec import (
    MacFrame,
    OP_CONFIG_CHECK_REQUEST,
    OP_INSTRUCTION_CHECK_REQUEST,
    OP_PASSIVE_RANGING_RESULT,
    OP_RANGING_RESULT,
)

log = logging.getLogger(__name__)


@dataclass
class PendingDownlink:
    node_id: int
    send_at: float          # true time
    check_start_s: float    # uplink TX start, the countdown anchor
    kind: str               # "ptp" or "passive"
    entries: list           # server task descriptors with absolute due_at


class Gateway:
    def __init__(self, address: int, network_id: int, bus: TopicBus,
                 alpha_s: float = 1.0):
        self.address = address
        self.network_id = network_id
        self.bus = bus
        self.alpha_s = alpha_s
        self.pending: List[PendingDownlink] = []
        self.dropped = 0
        bus.subscribe(TOPIC_DOWNLINK_PREFIX + str(address), self._on_server_reply)
        # simulator wires these up
        self.transmit: Optional[Callable[[MacFrame], None]] = None
        self.schedule_at: Optional[Callable[[float, Callable[[], None]], None]] = None
        self.now: Optional[Callable[[], float]] = None

    # -- radio side -------------------------------------------------------

    def on_node_frame(self, frame: MacFrame, rssi_dbm: float,
                      rx_time_s: float, uplink_airtime_s: float) -> None:
        if frame.network_id != self.network_id or frame.dest_addr != self.address:
            self.dropped += 1
            log.info("gateway %d dropped frame from %d (network %d)",
                     self.address, frame.src_addr, frame.network_id)
            return
        check_start = rx_time_s - uplink_airtime_s
        if frame.opcode == OP_INSTRUCTION_CHECK_REQUEST:
            body = payloads.CheckRequestData.decode(frame.data)
            self.bus.publish(TOPIC_INSTRUCTION_CHECK, {
                "gateway": self.address,
                "node_id": frame.src_addr,
                "network_id": frame.network_id,
                "battery_mv": body.battery_mv,
                "rssi_dbm": rssi_dbm,
                "check_start_s": check_start,
                "rx_time_s": rx_time_s,
            })
        elif frame.opcode == OP_CONFIG_CHECK_REQUEST:
            self.bus.publish(TOPIC_CONFIG_CHECK, {
                "gateway": self.address,
                "node_id": frame.src_addr,
                "network_id": frame.network_id,
                "check_start_s": check_start,
                "rx_time_s": rx_time_s,
            })
        elif frame.opcode in (OP_RANGING_RESULT, OP_PASSIVE_RANGING_RESULT):
            self.bus.publish(TOPIC_RESULT, {
                "gateway": self.address,
                "node_id": frame.src_addr,
                "opcode": frame.opcode,
                "data": frame.data,
                "rssi_dbm": rssi_dbm,
                "rx_time_s": rx_time_s,
            })
        else:
            self.dropped += 1
            log.info("gateway %d dropped unknown opcode %#x", self.address,
                     frame.opcode)

    # -- server side ------------------------------------------------------

    def _on_server_reply(self, topic: str, msg: dict) -> None:
        if msg.get("entries") is None:
            return  # silence: the node's CAD sees nothing and sleeps
        send_at = msg["rx_time_s"] + self.alpha_s
        if self.now is not None and self.now() > send_at:
            log.warning("gateway %d stale reply for node %d", self.address,
                        msg["node_id"])
            self.bus.publish("requeue", msg)
            return
        pd = PendingDownlink(msg["node_id"], send_at, msg["check_start_s"],
                             msg.get("kind", "ptp"), msg["entries"])
        self.pending.append(pd)
        self.schedule_at(send_at, lambda: self._send(pd))

    def _send(self, pd: PendingDownlink) -> None:
        self.pending.remove(pd)
        if pd.kind == "passive":
            entries = [payloads.PassiveEntry(
                master_id=e["master_id"], slave_id=e["slave_id"],
                countdown_s=e["due_at"] - pd.check_start_s,
                ranging_id=e["ranging_id"]) for e in pd.entries]
            opcode = 0x06
        else:
            entries = [payloads.PtpEntry(
                mode=e["mode"], partner_id=e["partner_id"],
                countdown_s=self._countdown(e, pd.check_start_s),
                ranging_id=e["ranging_id"]) for e in pd.entries]
            opcode = 0x05
        frame = MacFrame(self.network_id, pd.node_id, self.address, opcode,
                         payloads.encode_batch(entries))
        self.transmit(frame)

    @staticmethod
    def _countdown(entry: dict, check_start_s: float) -> float:
        # static offsets reproduce the LoRaWAN-style failure mode; the
        # default recomputes remaining time from the absolute deadline
        if "static_offset_s" in entry:
            return entry["static_offset_s"]
        return entry["due_at"] - check_start_s
