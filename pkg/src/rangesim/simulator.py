"""Event-loop glue: nodes, gateway, server, medium, energy, and traces.

Single-threaded and fully deterministic: one seeded RNG feeds bus
jitter, retry backoff, timing noise, stagger delays, and batch ids, and
event ties break on push order.  Runs with equal seed and scenario give
byte-identical traces.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import energy as energy_model
from . import payloads
from .bus import TopicBus
from .channel import ChannelModel, RadioMedium, Transmission, measure_ranging
from .events import EventQueue
from .frame_codec import MacFrame, RadioConfig, airtime, encode_mac
from .gateway import Gateway
from .localization import InsufficientMeasurements
from .netserver import NetworkServer
from .node import Node, NodeConfig, Phase, TaskQueueEntry
from .ranging import T_B_SYMBOLS

log = logging.getLogger(__name__)

EXCHANGE_DURATION_S = energy_model.PTP_RANGING_10_REPEATS.duration_s
ALWAYS_ON_CURRENT_A = 22e-3

PROFILES = {p.name: p for p in energy_model.CANONICAL_ACTIVITIES}


class ScenarioInvalid(Exception):
    pass


@dataclass
class TraceRow:
    time_s: float
    entity: str
    kind: str
    detail: str


@dataclass
class ExchangeRecord:
    time_s: float
    master: int
    slave: int
    ranging_id: int
    success: bool
    reason: str = ""


class NodeEnergy:
    """Per-node coulomb counter with a lazily accrued idle current."""

    def __init__(self, node_id: int, capacity_c: float, idle_current_a: float):
        self.node_id = node_id
        self.ledger = energy_model.EnergyLedger(battery_capacity_c=capacity_c)
        self.idle_current_a = idle_current_a
        self.last_t = 0.0
        self.trace: List[Tuple[float, str, float, float]] = []

    def accrue(self, t: float) -> None:
        if t > self.last_t:
            self.ledger.add_current(self.idle_current_a, t - self.last_t)
            self.last_t = t

    def activity(self, name: str, t: float) -> None:
        self.accrue(t)
        profile = PROFILES[name]
        self.ledger.add_activity(profile)
        self.last_t = t + profile.duration_s
        self.trace.append((t, name, self.ledger.consumed_mc,
                           self.ledger.voltage_proxy()))


class Simulator:
    def __init__(self, scenario: "Scenario"):
        from .scenario import Scenario  # local import to avoid a cycle
        self.scenario = scenario
        self.queue = EventQueue()
        self.random = random.Random(scenario.seed)
        self.channel = ChannelModel(
            positions=dict(scenario.positions),
            pathloss_exponent=scenario.pathloss_exponent,
            ref_loss_db_at_1m=scenario.ref_loss_db_at_1m,
            sensitivity_dbm=scenario.sensitivity_dbm)
        self.medium = RadioMedium(self.channel)
        self.bus = TopicBus(self.queue, self.random,
                            latency_s=scenario.bus_latency_s,
                            jitter_s=scenario.bus_jitter_s)
        self.server = NetworkServer(self.bus, self.random,
                                    countdown_mode=scenario.countdown_mode,
                                    lead_margin_s=scenario.lead_margin_s)
        self.server.now = lambda: self.queue.now
        self.gateway = Gateway(scenario.gateway_address, scenario.network_id,
                               self.bus, alpha_s=scenario.alpha_s)
        self.gateway.transmit = self._gateway_transmit
        self.gateway.schedule_at = self._schedule_callback
        self.gateway.now = lambda: self.queue.now

        self.nodes: Dict[int, Node] = {}
        self.energy: Dict[int, NodeEnergy] = {}
        for ncfg in scenario.nodes:
            node = Node(ncfg, scenario.gateway_address, scenario.alpha_s)
            self.nodes[ncfg.node_id] = node
            idle = (ALWAYS_ON_CURRENT_A if ncfg.mode == "always_on"
                    else energy_model.SLEEP_CURRENT_A)
            self.energy[ncfg.node_id] = NodeEnergy(
                ncfg.node_id, ncfg.battery_capacity_c, idle)
            self.server.register_node(
                ncfg.node_id, ncfg.check_interval_s, ncfg.mode,
                anchor_xy=(scenario.positions[ncfg.node_id][0],
                           scenario.positions[ncfg.node_id][1])
                if ncfg.role == "anchor" else None)
        for node_id, t in scenario.seed_check_logs:
            self.server.seed_check_log(node_id, t, scenario.network_id)

        self.comm_radio = scenario.comm_radio
        self.ranging_radio = scenario.ranging_radio
        self.t_b = T_B_SYMBOLS * self.ranging_radio.symbol_duration_s

        self.trace: List[TraceRow] = []
        self.exchanges: List[ExchangeRecord] = []
        self._listening: Dict[int, Optional[str]] = {n: None for n in self.nodes}
        self._rx_deadline: Dict[int, float] = {}
        self._tx_meta: Dict[int, dict] = {}

    # -- clock helpers -----------------------------------------------------

    def _ppm(self, node_id: int) -> float:
        return self.nodes[node_id].cfg.clock_ppm

    def local_now(self, node_id: int) -> float:
        return self.queue.now * (1.0 + self._ppm(node_id) * 1e-6)

    def _true_of_local(self, node_id: int, local: float) -> float:
        return local / (1.0 + self._ppm(node_id) * 1e-6)

    # -- NodeContext surface -------------------------------------------------

    def set_timer(self, node_id: int, name: str, at_local: float,
                  data: object = None) -> None:
        at_true = max(self._true_of_local(node_id, at_local), self.queue.now)
        self.queue.push(at_true, "node_timer", f"node:{node_id}",
                        payload={"name": name, "data": data})

    def transmit(self, node_id: int, frame: MacFrame, freq: str,
                 charge: Optional[str]) -> float:
        raw = encode_mac(frame)
        radio = self.comm_radio if freq == "comm" else self.ranging_radio
        dur = airtime(radio, len(raw))
        preamble_s = radio.preamble_symbols * radio.symbol_duration_s
        tx = self.medium.begin(node_id, freq, self.queue.now, dur, preamble_s,
                               raw, radio.tx_power_dbm)
        purpose = "check" if frame.opcode == 0x01 else "other"
        self._tx_meta[tx.tx_id] = {"frame": frame, "purpose": purpose,
                                   "sender": node_id}
        if charge:
            self.energy[node_id].activity(charge, self.queue.now)
        self._note_entity(f"node:{node_id}", "tx_start",
                          f"opcode={frame.opcode:#04x} freq={freq}")
        self.queue.push(self.queue.now + dur, "tx_end", "medium",
                        payload=tx)
        return dur

    def start_cad(self, node_id: int, freq: str, window_s: float) -> None:
        positive = self.medium.cad_positive(node_id, freq, self.queue.now,
                                            window_s)
        if not positive and self.scenario.cad_false_positive_rate > 0:
            positive = self.random.random() < self.scenario.cad_false_positive_rate
        self._note_entity(f"node:{node_id}", "cad_result", str(positive))
        self.queue.push(self.queue.now, "node_cad", f"node:{node_id}",
                        payload=positive)

    def open_rx(self, node_id: int, freq: str, timeout_s: float) -> None:
        self._listening[node_id] = freq
        deadline = self.queue.now + timeout_s
        self._rx_deadline[node_id] = deadline
        if freq == "comm":
            self.queue.push(deadline, "node_timer", f"node:{node_id}",
                            payload={"name": "rx_timeout", "data": None})

    def close_rx(self, node_id: int) -> None:
        self._listening[node_id] = None

    def charge_activity(self, node_id: int, profile_name: str) -> None:
        self.energy[node_id].activity(profile_name, self.queue.now)

    def battery_mv(self, node_id: int) -> int:
        return int(round(self.energy[node_id].ledger.voltage_proxy() * 1000))

    def note(self, node_id: int, what: str, detail: str = "") -> None:
        self._note_entity(f"node:{node_id}", what, detail)

    def forced_retry_delay(self) -> Optional[float]:
        return self.scenario.retry_delay_s

    def rng(self) -> random.Random:
        return self.random

    # -- ranging orchestration -------------------------------------------------

    def perform_ranging(self, node_id: int, entry: TaskQueueEntry
                        ) -> Optional[dict]:
        master = node_id
        slave_id = entry.partner_id
        slave = self.nodes.get(slave_id)
        now = self.queue.now
        if slave is None:
            self._log_exchange(now, master, slave_id, entry.ranging_id,
                               False, "unknown_partner")
            return None
        ready = (slave.phase is Phase.RANGING_WAIT
                 and slave.wait_entry is not None
                 and slave.wait_entry.ranging_id == entry.ranging_id
                 and slave.wait_entry.partner_id == master)
        budget = self.channel.in_budget(self.ranging_radio.tx_power_dbm,
                                        master, slave_id)
        if not ready or not budget:
            reason = "partner_silent" if not ready else "out_of_budget"
            self._log_exchange(now, master, slave_id, entry.ranging_id,
                               False, reason)
            return None
        occupancy = self.medium.begin(master, "ranging", now,
                                      EXCHANGE_DURATION_S, 0.0, None,
                                      self.ranging_radio.tx_power_dbm)
        self.queue.push(now + EXCHANGE_DURATION_S, "tx_end", "medium",
                        payload=occupancy)
        if occupancy.collided:
            self._log_exchange(now, master, slave_id, entry.ranging_id,
                               False, "channel_collision")
            slave.slave_exchange_done(self)
            return None
        delta = (self._ppm(master) - self._ppm(slave_id)) * 1e-6
        listeners = [n.cfg.node_id for n in self.nodes.values()
                     if n.phase is Phase.PASSIVE_WAIT
                     and n.wait_entry is not None
                     and n.wait_entry.master_id == master
                     and n.wait_entry.slave_id == slave_id
                     and self.channel.in_budget(self.ranging_radio.tx_power_dbm,
                                                master, n.cfg.node_id)
                     and self.channel.in_budget(self.ranging_radio.tx_power_dbm,
                                                slave_id, n.cfg.node_id)]
        repeats = self.nodes[master].cfg.ranging_repeats
        measurements, listener_dt = measure_ranging(
            self.channel, master, slave_id, self.t_b, delta,
            self.scenario.timing_noise_sigma_s, self.random,
            repeats=repeats, listeners=listeners)
        slave.slave_exchange_done(self)
        for lid in listeners:
            listener = self.nodes[lid]
            listener.passive_observation(self, listener.wait_entry,
                                         listener_dt[lid],
                                         EXCHANGE_DURATION_S)
        self._log_exchange(now, master, slave_id, entry.ranging_id, True, "")
        n = len(measurements)
        return {
            "distance_m": sum(m.corrected_distance_m for m in measurements) / n,
            "raw_distance_m": sum(m.raw_distance_m for m in measurements) / n,
            "rssi_dbm": self.channel.rssi_dbm(
                self.ranging_radio.tx_power_dbm, slave_id, master),
            "duration_s": EXCHANGE_DURATION_S,
        }

    def _log_exchange(self, t, master, slave, rid, success, reason) -> None:
        self.exchanges.append(ExchangeRecord(t, master, slave, rid, success,
                                             reason))
        self._note_entity(f"node:{master}", "ranging_exchange",
                          f"slave={slave} ranging_id={rid} "
                          f"success={success} {reason}".strip())

    # -- gateway plumbing ----------------------------------------------------

    def _gateway_transmit(self, frame: MacFrame) -> None:
        raw = encode_mac(frame)
        dur = airtime(self.comm_radio, len(raw))
        preamble_s = (self.comm_radio.preamble_symbols
                      * self.comm_radio.symbol_duration_s)
        tx = self.medium.begin(self.gateway.address, "comm", self.queue.now,
                               dur, preamble_s, raw,
                               self.comm_radio.tx_power_dbm)
        self._tx_meta[tx.tx_id] = {"frame": frame, "purpose": "downlink",
                                   "sender": self.gateway.address}
        self._note_entity("gateway", "tx_start",
                          f"dest={frame.dest_addr} opcode={frame.opcode:#04x}")
        self.queue.push(self.queue.now + dur, "tx_end", "medium", payload=tx)

    def _schedule_callback(self, at: float, fn) -> None:
        self.queue.push(at, "callback", "gateway", payload=fn)

    # -- event loop ------------------------------------------------------------

    def run(self) -> "SimOutputs":
        scenario = self.scenario
        for node in self.nodes.values():
            node.start(self)
        for jam in scenario.jammers:
            self.queue.push(jam["at_s"], "jam_start", "medium", payload=jam)
        for cmd in scenario.commands:
            self.queue.push(cmd["at_s"], "command", "server", payload=cmd)

        while len(self.queue):
            ev = self.queue.pop()
            if ev.true_time_s >= scenario.horizon_s:
                break
            self._dispatch(ev)

        for ne in self.energy.values():
            ne.accrue(scenario.horizon_s)
        return SimOutputs(self)

    def _dispatch(self, ev) -> None:
        if ev.kind == "node_timer":
            node = self.nodes[int(ev.target.split(":")[1])]
            name, data = ev.payload["name"], ev.payload["data"]
            node.step(name if name != "task" else "task", self, data)
        elif ev.kind == "node_cad":
            node = self.nodes[int(ev.target.split(":")[1])]
            node.step("cad_result", self, ev.payload)
        elif ev.kind == "tx_end":
            self._finish_tx(ev.payload)
        elif ev.kind == "bus_delivery":
            self.bus.dispatch(ev.payload)
        elif ev.kind == "callback":
            ev.payload()
        elif ev.kind == "jam_start":
            jam = ev.payload
            tx = self.medium.begin(0xFFFF, jam.get("freq", "comm"),
                                   self.queue.now, jam["duration_s"],
                                   jam["duration_s"], None,
                                   jam.get("tx_power_dbm", 12.5))
            self._note_entity("jammer", "tx_start",
                              f"freq={jam.get('freq', 'comm')}")
            self.queue.push(self.queue.now + jam["duration_s"], "tx_end",
                            "medium", payload=tx)
        elif ev.kind == "command":
            cmd = dict(ev.payload)
            cmd.pop("at_s", None)
            verb = cmd.pop("verb")
            self._note_entity("server", "command", verb)
            self.server.user_api(verb, **cmd)
        else:
            raise ScenarioInvalid(f"unknown event kind {ev.kind}")

    def _finish_tx(self, tx: Transmission) -> None:
        self.medium.finish(tx)
        meta = self._tx_meta.pop(tx.tx_id, None)
        if meta is None:
            self._note_entity("medium", "tx_end", f"src={tx.src}")
            return  # jammer or ranging occupancy
        frame: MacFrame = meta["frame"]
        sender = meta["sender"]
        self._note_entity(f"node:{sender}" if sender in self.nodes else "gateway",
                          "tx_end",
                          f"collided={tx.collided} opcode={frame.opcode:#04x}")
        if sender in self.nodes:
            self.nodes[sender].step("tx_outcome", self,
                                    {"collided": tx.collided,
                                     "purpose": meta["purpose"]})
        if tx.collided:
            return
        airtime_s = tx.end_s - tx.start_s
        if frame.dest_addr == self.gateway.address:
            if self.channel.in_budget(tx.tx_power_dbm, sender,
                                      self.gateway.address):
                rssi = self.channel.rssi_dbm(tx.tx_power_dbm, sender,
                                             self.gateway.address)
                self.gateway.on_node_frame(frame, rssi, self.queue.now,
                                           airtime_s)
        elif frame.dest_addr in self.nodes:
            dest = frame.dest_addr
            if (self._listening.get(dest) == tx.freq
                    and self.queue.now <= self._rx_deadline.get(dest, 0.0)
                    and self.channel.in_budget(tx.tx_power_dbm, sender or
                                               self.gateway.address, dest)):
                self._note_entity(f"node:{dest}", "rx_complete",
                                  f"opcode={frame.opcode:#04x}")
                self.nodes[dest].step("rx_complete", self, frame)

    def _note_entity(self, entity: str, kind: str, detail: str) -> None:
        self.trace.append(TraceRow(self.queue.now, entity, kind, detail))


class SimOutputs:
    """Computed views over a finished run."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.scenario = sim.scenario
        self.trace = sim.trace
        self.exchanges = sim.exchanges
        self.results = sim.server.store.results
        self.energy = sim.energy

    def locations(self) -> List[dict]:
        rows = []
        for rid in sorted(self.sim.server.completed_batches()):
            try:
                est = self.sim.server.locate(rid)
            except InsufficientMeasurements:
                continue
            reporters = {r.reporter for r in self.results
                         if r.ranging_id == rid and r.kind == "ptp"}
            target = sorted(reporters)[0] if reporters else -1
            truth = self.scenario.positions.get(target)
            err = None
            if truth is not None:
                dx = est.position[0] - truth[0]
                dy = est.position[1] - truth[1]
                err = (dx * dx + dy * dy) ** 0.5
            rows.append({"ranging_id": rid, "target_id": target,
                         "x": est.position[0], "y": est.position[1],
                         "rmse_m": err, "n_measurements": est.n_measurements})
        return rows

    def cycle_stats(self, node_id: int) -> dict:
        """Average per-cycle charge and projected lifetime for one node."""
        cfg = self.sim.nodes[node_id].cfg
        ne = self.energy[node_id]
        horizon = self.scenario.horizon_s
        cycles = max(int(horizon // cfg.check_interval_s), 1)
        per_cycle_mc = ne.ledger.consumed_mc / (horizon / cfg.check_interval_s)
        avg_current_a = ne.ledger.consumed_c / horizon
        lifetime_secs = cfg.battery_capacity_c / avg_current_a \
            if avg_current_a > 0 else float("inf")
        return {"cycles_simulated": cycles,
                "per_cycle_mc": per_cycle_mc,
                "avg_current_a": avg_current_a,
                "lifetime_s": lifetime_secs}

    def clock_divergence(self) -> dict:
        ppms = [n.cfg.clock_ppm for n in self.sim.nodes.values()]
        max_gap_ppm = (max(ppms) - min(ppms)) if ppms else 0.0
        rate = max_gap_ppm * 1e-6
        return {
            "max_rate_s_per_day": rate * 86400.0,
            "divergence_at_horizon_s": rate * self.scenario.horizon_s,
            "days_to_exceed_1s": (1.0 / (rate * 86400.0)) if rate > 0
            else float("inf"),
        }
