"""Network server: store, task manager, data manager, user API.

The store keeps node configuration records, instruction-check logs,
pending tasks, and ranging results.  Scheduling places absolute
deadlines (server true time); the countdown a node sees is derived at
delivery, never cached, which is what makes retried checks land on the
same execution instant.

Persistence is line-delimited text: one self-describing record per line
(`kind key=value ...`), diffable and adequate at desk scale.
"""

from __future__ import annotations

import logging
import random
import shlex
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .bus import (
    TOPIC_CONFIG_CHECK,
    TOPIC_DOWNLINK_PREFIX,
    TOPIC_INSTRUCTION_CHECK,
    TOPIC_RESULT,
    TopicBus,
)
from . import payloads
from .frame_codec import OP_PASSIVE_RANGING_RESULT, OP_RANGING_RESULT
from .localization import (
    Anchor,
    InsufficientMeasurements,
    PositionEstimate,
    batch_locate,
)

log = logging.getLogger(__name__)

DEFAULT_MODE = "low_power"
DEFAULT_INTERVAL_S = 600.0
LEAD_MARGIN_S = 5.0
PAIR_SPACING_S = 1.0  # separates exchanges of one localization batch


class ServerError(Exception):
    pass


class UnknownNode(ServerError):
    pass


class UnschedulablePair(ServerError):
    pass


class NoSuchExchange(ServerError):
    pass


class BadCommand(ServerError):
    pass


@dataclass
class NodeRecord:
    node_id: int
    check_interval_s: float = DEFAULT_INTERVAL_S
    mode: str = DEFAULT_MODE
    anchor_xy: Optional[Tuple[float, float]] = None
    pending_config: Optional[dict] = None


@dataclass
class CheckLog:
    timestamp_s: float
    node_id: int
    network_id: int
    battery_mv: int
    rssi_dbm: float


@dataclass
class PendingTask:
    kind: str                 # "ptp" or "passive"
    node_id: int
    due_at: float
    ranging_id: int
    mode: Optional[int] = None
    partner_id: Optional[int] = None
    master_id: Optional[int] = None
    slave_id: Optional[int] = None
    static_offset_s: Optional[float] = None
    delivered: bool = False


@dataclass
class ResultRecord:
    ranging_id: int
    kind: str                 # "ptp" or "passive"
    reporter: int
    partner: int              # slave for ptp; encoded pair for passive
    received_at: float
    distance_m: Optional[float] = None
    raw_distance_m: Optional[float] = None
    rssi_dbm: Optional[float] = None
    delta_t_s: Optional[float] = None
    master_id: Optional[int] = None
    slave_id: Optional[int] = None


class NodeStore:
    def __init__(self):
        self.records: Dict[int, NodeRecord] = {}
        self.check_logs: List[CheckLog] = []
        self.pending: List[PendingTask] = []
        self.results: List[ResultRecord] = []
        self.quarantine: List[ResultRecord] = []

    def last_check(self, node_id: int) -> Optional[CheckLog]:
        for entry in reversed(self.check_logs):
            if entry.node_id == node_id:
                return entry
        return None

    # -- persistence ------------------------------------------------------

    def save(self, path: str) -> None:
        def fmt(record_kind, **kv):
            parts = [record_kind]
            for k, v in kv.items():
                if v is not None:
                    parts.append(f"{k}={v!r}" if isinstance(v, str) else f"{k}={v}")
            return " ".join(parts)

        with open(path, "w") as fh:
            for r in self.records.values():
                anchor = (f"{r.anchor_xy[0]},{r.anchor_xy[1]}"
                          if r.anchor_xy else None)
                fh.write(fmt("node", node_id=r.node_id,
                             check_interval_s=r.check_interval_s,
                             mode=r.mode, anchor=anchor) + "\n")
            for c in self.check_logs:
                fh.write(fmt("check", timestamp_s=c.timestamp_s,
                             node_id=c.node_id, network_id=c.network_id,
                             battery_mv=c.battery_mv, rssi_dbm=c.rssi_dbm) + "\n")
            for t in self.pending:
                fh.write(fmt("task", kind=t.kind, node_id=t.node_id,
                             due_at=t.due_at, ranging_id=t.ranging_id,
                             mode=t.mode, partner_id=t.partner_id,
                             master_id=t.master_id, slave_id=t.slave_id,
                             static_offset_s=t.static_offset_s,
                             delivered=t.delivered) + "\n")

    @classmethod
    def load(cls, path: str) -> "NodeStore":
        store = cls()
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                kind, *fields = shlex.split(line)
                kv = dict(f.split("=", 1) for f in fields)
                if kind == "node":
                    anchor = None
                    if "anchor" in kv:
                        x, y = kv["anchor"].strip("'").split(",")
                        anchor = (float(x), float(y))
                    store.records[int(kv["node_id"])] = NodeRecord(
                        int(kv["node_id"]), float(kv["check_interval_s"]),
                        kv["mode"].strip("'"), anchor)
                elif kind == "check":
                    store.check_logs.append(CheckLog(
                        float(kv["timestamp_s"]), int(kv["node_id"]),
                        int(kv["network_id"]), int(kv["battery_mv"]),
                        float(kv["rssi_dbm"])))
                elif kind == "task":
                    store.pending.append(PendingTask(
                        kind=kv["kind"].strip("'"), node_id=int(kv["node_id"]),
                        due_at=float(kv["due_at"]),
                        ranging_id=int(kv["ranging_id"]),
                        mode=int(kv["mode"]) if "mode" in kv else None,
                        partner_id=int(kv["partner_id"]) if "partner_id" in kv else None,
                        master_id=int(kv["master_id"]) if "master_id" in kv else None,
                        slave_id=int(kv["slave_id"]) if "slave_id" in kv else None,
                        static_offset_s=(float(kv["static_offset_s"])
                                         if "static_offset_s" in kv else None),
                        delivered=kv.get("delivered") == "True"))
        return store


class NetworkServer:
    def __init__(self, bus: TopicBus, rng: random.Random,
                 store: Optional[NodeStore] = None,
                 countdown_mode: str = "dynamic",
                 lead_margin_s: float = LEAD_MARGIN_S):
        if countdown_mode not in ("dynamic", "static"):
            raise ValueError(f"bad countdown_mode {countdown_mode!r}")
        self.bus = bus
        self.rng = rng
        self.store = store or NodeStore()
        self.countdown_mode = countdown_mode
        self.lead_margin_s = lead_margin_s
        self.now = lambda: 0.0  # wired to the simulator clock
        bus.subscribe(TOPIC_INSTRUCTION_CHECK, self._on_instruction_check)
        bus.subscribe(TOPIC_CONFIG_CHECK, self._on_config_check)
        bus.subscribe(TOPIC_RESULT, self._on_result)
        bus.subscribe("requeue", self._on_requeue)

    # -- registration / prediction ----------------------------------------

    def register_node(self, node_id: int, check_interval_s: float,
                      mode: str = DEFAULT_MODE,
                      anchor_xy: Optional[Tuple[float, float]] = None) -> None:
        self.store.records[node_id] = NodeRecord(node_id, check_interval_s,
                                                 mode, anchor_xy)

    def seed_check_log(self, node_id: int, timestamp_s: float,
                       network_id: int = 0) -> None:
        self.store.check_logs.append(
            CheckLog(timestamp_s, node_id, network_id, 3000, 0.0))

    def predicted_next_wake(self, node_id: int) -> float:
        rec = self.store.records.get(node_id)
        if rec is None:
            raise UnknownNode(f"node {node_id} not registered")
        last = self.store.last_check(node_id)
        if last is None:
            raise UnschedulablePair(f"node {node_id} has no check history")
        wake = last.timestamp_s + rec.check_interval_s
        now = self.now()
        while wake <= now:
            wake += rec.check_interval_s
        return wake

    # -- task manager handlers ---------------------------------------------

    def _on_instruction_check(self, topic: str, msg: dict) -> None:
        node_id = msg["node_id"]
        self.store.check_logs.append(CheckLog(
            msg["check_start_s"], node_id, msg["network_id"],
            msg["battery_mv"], msg["rssi_dbm"]))
        reply_topic = TOPIC_DOWNLINK_PREFIX + str(msg["gateway"])
        if node_id not in self.store.records:
            log.warning("check from unregistered node %d", node_id)
            self.bus.publish(reply_topic, {"node_id": node_id, "entries": None,
                                           "rx_time_s": msg["rx_time_s"],
                                           "check_start_s": msg["check_start_s"]})
            return
        now = msg["rx_time_s"]
        due, missed = [], []
        for t in self.store.pending:
            if t.node_id != node_id or t.delivered:
                continue
            (due if t.due_at >= now else missed).append(t)
        for t in missed:
            self._reschedule_missed(t)
        entries, kind = None, "ptp"
        ptp = [t for t in due if t.kind == "ptp"]
        passive = [t for t in due if t.kind == "passive"]
        if ptp:
            entries = [self._ptp_entry(t) for t in ptp]
            for t in ptp:
                t.delivered = True
        elif passive:
            kind = "passive"
            entries = [{"master_id": t.master_id, "slave_id": t.slave_id,
                        "due_at": t.due_at, "ranging_id": t.ranging_id}
                       for t in passive]
            for t in passive:
                t.delivered = True
        self.bus.publish(reply_topic, {
            "node_id": node_id, "entries": entries, "kind": kind,
            "rx_time_s": msg["rx_time_s"],
            "check_start_s": msg["check_start_s"]})

    def _ptp_entry(self, t: PendingTask) -> dict:
        entry = {"mode": t.mode, "partner_id": t.partner_id,
                 "due_at": t.due_at, "ranging_id": t.ranging_id}
        if self.countdown_mode == "static" and t.static_offset_s is not None:
            entry["static_offset_s"] = t.static_offset_s
        return entry

    def _reschedule_missed(self, task: PendingTask) -> None:
        """Push a missed deadline out to the next feasible common wake."""
        participants = [task.node_id]
        if task.partner_id is not None:
            participants.append(task.partner_id)
        try:
            new_due = max(self.predicted_next_wake(n) for n in participants)
        except ServerError:
            new_due = self.now() + self.lead_margin_s
        new_due += self.lead_margin_s
        log.info("task %d for node %d missed (due %.2f), rescheduled to %.2f",
                 task.ranging_id, task.node_id, task.due_at, new_due)
        for t in self.store.pending:
            if t.ranging_id == task.ranging_id and not t.delivered:
                t.due_at = new_due

    def _on_config_check(self, topic: str, msg: dict) -> None:
        node_id = msg["node_id"]
        cfg = self.handle_config_check(node_id)
        self.bus.publish(TOPIC_DOWNLINK_PREFIX + str(msg["gateway"]), {
            "node_id": node_id, "entries": None, "config": cfg.encode(),
            "rx_time_s": msg["rx_time_s"],
            "check_start_s": msg["check_start_s"]})

    def handle_config_check(self, node_id: int) -> payloads.ConfigData:
        rec = self.store.records.get(node_id)
        if rec is None:
            rec = NodeRecord(node_id)
            self.store.records[node_id] = rec
            log.info("auto-registered node %d with defaults", node_id)
        if rec.pending_config:
            for k, v in rec.pending_config.items():
                setattr(rec, k, v)
            rec.pending_config = None
        anchor = rec.anchor_xy
        return payloads.ConfigData(
            mode=1 if rec.mode == "always_on" else 0,
            check_interval_s=rec.check_interval_s,
            anchor=anchor)

    # -- scheduling ----------------------------------------------------------

    def schedule_ptp_batch(self, pairs: Sequence[Tuple[int, int]],
                           ranging_id: Optional[int] = None,
                           spacing_s: float = PAIR_SPACING_S
                           ) -> List[PendingTask]:
        """Queue both-role tasks for each (master, slave) pair.

        All pairs share a deadline base later than every participant's
        next predicted wake; pairs are spaced so their exchanges do not
        overlap on the ranging channel.
        """
        wakes = []
        for master, slave in pairs:
            wakes.append(self.predicted_next_wake(master))
            wakes.append(self.predicted_next_wake(slave))
        base_due = max(wakes) + self.lead_margin_s
        tasks = []
        for i, (master, slave) in enumerate(pairs):
            rid = ranging_id if ranging_id is not None \
                else self.rng.getrandbits(32)
            due = base_due + i * spacing_s
            offset_m = due - self.predicted_next_wake(master)
            offset_s = due - self.predicted_next_wake(slave)
            tasks.append(PendingTask("ptp", master, due, rid,
                                     mode=payloads.MODE_MASTER, partner_id=slave,
                                     static_offset_s=offset_m))
            tasks.append(PendingTask("ptp", slave, due, rid,
                                     mode=payloads.MODE_SLAVE, partner_id=master,
                                     static_offset_s=offset_s))
        self.store.pending.extend(tasks)
        return tasks

    def schedule_passive_batch(self, observations: Sequence[Tuple[int, int, int]]
                               ) -> List[PendingTask]:
        """Attach listeners to already-scheduled ptp exchanges."""
        tasks = []
        for listener, master, slave in observations:
            match = None
            for t in self.store.pending:
                if (t.kind == "ptp" and t.mode == payloads.MODE_MASTER
                        and t.node_id == master and t.partner_id == slave):
                    match = t
            if match is None:
                raise NoSuchExchange(f"no ptp task for pair ({master},{slave})")
            tasks.append(PendingTask("passive", listener, match.due_at,
                                     match.ranging_id, master_id=master,
                                     slave_id=slave))
        self.store.pending.extend(tasks)
        return tasks

    # -- data manager ----------------------------------------------------------

    def _on_result(self, topic: str, msg: dict) -> None:
        if msg["opcode"] == OP_RANGING_RESULT:
            body = payloads.RangingResultData.decode(msg["data"])
            record = ResultRecord(
                ranging_id=body.ranging_id, kind="ptp",
                reporter=msg["node_id"], partner=body.slave_id,
                received_at=msg["rx_time_s"], distance_m=body.distance_m,
                raw_distance_m=body.raw_distance_m, rssi_dbm=body.rssi_dbm)
        elif msg["opcode"] == OP_PASSIVE_RANGING_RESULT:
            body = payloads.PassiveResultData.decode(msg["data"])
            record = ResultRecord(
                ranging_id=body.ranging_id, kind="passive",
                reporter=msg["node_id"], partner=body.slave_id,
                received_at=msg["rx_time_s"], delta_t_s=body.delta_t_s,
                master_id=body.master_id, slave_id=body.slave_id)
        else:
            log.warning("result with unknown opcode %#x", msg["opcode"])
            return
        self.ingest_result(record)

    def ingest_result(self, record: ResultRecord) -> int:
        """Store one result; returns how many the batch has accumulated."""
        known_ids = {t.ranging_id for t in self.store.pending}
        if record.kind == "ptp" and record.distance_m is not None \
                and record.distance_m < 0:
            self.store.quarantine.append(record)
            log.warning("negative distance quarantined (ranging_id=%d)",
                        record.ranging_id)
        elif record.ranging_id not in known_ids:
            self.store.quarantine.append(record)
            log.warning("orphan result quarantined (ranging_id=%d)",
                        record.ranging_id)
        else:
            dup = any(r.ranging_id == record.ranging_id
                      and r.reporter == record.reporter
                      and r.partner == record.partner
                      for r in self.store.results)
            if not dup:
                self.store.results.append(record)
        return sum(1 for r in self.store.results
                   if r.ranging_id == record.ranging_id)

    def _on_requeue(self, topic: str, msg: dict) -> None:
        for e in msg.get("entries") or []:
            for t in self.store.pending:
                if t.ranging_id == e["ranging_id"] and t.node_id == msg["node_id"]:
                    t.delivered = False

    # -- localization over stored results ---------------------------------------

    def locate(self, ranging_id: int) -> PositionEstimate:
        """Least-squares fix from all stored ptp distances under one batch id."""
        per_anchor: Dict[int, List[float]] = {}
        for r in self.store.results:
            if r.ranging_id != ranging_id or r.kind != "ptp":
                continue
            anchor_id = r.partner
            rec = self.store.records.get(anchor_id)
            if rec is None or rec.anchor_xy is None:
                # reporter may be the anchor side instead
                rec = self.store.records.get(r.reporter)
                if rec is None or rec.anchor_xy is None:
                    continue
                anchor_id = r.reporter
            per_anchor.setdefault(anchor_id, []).append(r.distance_m)
        pairs = [(Anchor(a, self.store.records[a].anchor_xy), ds)
                 for a, ds in sorted(per_anchor.items())]
        if len(pairs) < 3:
            raise InsufficientMeasurements(
                f"batch {ranging_id}: distances from {len(pairs)} anchors")
        return batch_locate(pairs)

    def completed_batches(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for r in self.store.results:
            if r.kind == "ptp":
                counts[r.ranging_id] = counts.get(r.ranging_id, 0) + 1
        return counts

    # -- user API -----------------------------------------------------------------

    def user_api(self, verb: str, **kwargs):
        """Programmatic command surface; the command file maps onto this."""
        if verb == "request_ranging":
            target = int(kwargs["target"])
            anchors = [int(a) for a in kwargs["anchors"]]
            if not anchors:
                raise BadCommand("request_ranging needs at least one anchor")
            rid = self.rng.getrandbits(32)
            pairs = [(target, a) for a in anchors]
            return self.schedule_ptp_batch(pairs, ranging_id=rid)
        if verb == "request_passive":
            obs = [(int(kwargs["listener"]), int(kwargs["master"]),
                    int(kwargs["slave"]))]
            return self.schedule_passive_batch(obs)
        if verb == "update_config":
            node_id = int(kwargs["node"])
            rec = self.store.records.get(node_id)
            if rec is None:
                raise UnknownNode(f"node {node_id} not registered")
            updates = {}
            if "interval" in kwargs:
                updates["check_interval_s"] = float(kwargs["interval"])
            if "mode" in kwargs:
                updates["mode"] = str(kwargs["mode"])
            rec.pending_config = updates
            return rec
        if verb == "query_status":
            node_id = int(kwargs["node"])
            rec = self.store.records.get(node_id)
            if rec is None:
                raise UnknownNode(f"node {node_id} not registered")
            return {"record": rec, "last_check": self.store.last_check(node_id)}
        if verb == "query_location":
            target = int(kwargs["target"])
            batches = [rid for rid, n in self.completed_batches().items() if n >= 3]
            if not batches:
                raise BadCommand("insufficient measurements")
            return self.locate(batches[-1])
        raise BadCommand(f"unknown verb {verb!r}")

    def execute_command_line(self, line: str):
        """One command per line: verb then key=value arguments."""
        parts = shlex.split(line)
        if not parts:
            raise BadCommand("empty command")
        verb, kwargs = parts[0], {}
        for p in parts[1:]:
            if "=" not in p:
                raise BadCommand(f"argument {p!r} is not key=value")
            k, v = p.split("=", 1)
            kwargs[k] = v.split(",") if k == "anchors" else v
        return self.user_api(verb, **kwargs)
