"""Scenario files: schema, validation, and bundled examples.

A scenario is a YAML document with a closed schema: unknown keys are
rejected with the offending field named, so typos fail loudly before a
run starts.  Bundled scenarios live in the package's scenarios/
directory with a .scn extension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from .frame_codec import RadioConfig
from .node import NodeConfig
from .simulator import ScenarioInvalid

_TOP_KEYS = {
    "seed", "horizon_s", "network_id", "alpha_s", "countdown_mode",
    "retry_delay_s", "bus", "channel", "comm_radio", "ranging_radio",
    "timing_noise_sigma_s", "cad_false_positive_rate", "lead_margin_s",
    "gateway", "nodes", "seed_check_logs", "jammers", "commands",
}
_NODE_KEYS = {"address", "position", "role", "mode", "check_interval_s",
              "first_check_s", "clock_ppm", "battery_capacity_c",
              "ranging_repeats"}
_CMD_KEYS = {"at_s", "every_s", "verb", "target", "anchors", "listener",
             "master", "slave", "node", "interval", "mode"}

JAMMER_BASE_ADDR = 0xFF00


@dataclass
class Scenario:
    seed: int = 0
    horizon_s: float = 60.0
    network_id: int = 1
    alpha_s: float = 1.0
    countdown_mode: str = "dynamic"
    retry_delay_s: Optional[float] = None
    bus_latency_s: float = 0.1
    bus_jitter_s: float = 0.05
    pathloss_exponent: float = 2.4
    ref_loss_db_at_1m: float = 40.0
    sensitivity_dbm: float = -120.0
    comm_radio: RadioConfig = field(
        default_factory=lambda: RadioConfig(sf=10, bw_hz=1_625_000))
    ranging_radio: RadioConfig = field(
        default_factory=lambda: RadioConfig(sf=8, bw_hz=1_625_000))
    timing_noise_sigma_s: float = 0.0
    cad_false_positive_rate: float = 0.0
    lead_margin_s: float = 5.0
    gateway_address: int = 1
    positions: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)
    nodes: List[NodeConfig] = field(default_factory=list)
    seed_check_logs: List[Tuple[int, float]] = field(default_factory=list)
    jammers: List[dict] = field(default_factory=list)
    commands: List[dict] = field(default_factory=list)

    def validate(self) -> None:
        addresses = {n.node_id for n in self.nodes}
        if len(addresses) != len(self.nodes):
            raise ScenarioInvalid("duplicate node addresses")
        if self.gateway_address in addresses:
            raise ScenarioInvalid("gateway address collides with a node")
        for n in self.nodes:
            pos = self.positions.get(n.node_id)
            if pos is None or not all(math.isfinite(c) for c in pos):
                raise ScenarioInvalid(
                    f"node {n.node_id}: missing or non-finite position")
        if self.gateway_address not in self.positions:
            raise ScenarioInvalid("gateway position missing")
        for cmd in self.commands:
            for ref in self._command_node_refs(cmd):
                if ref not in addresses:
                    raise ScenarioInvalid(
                        f"command {cmd['verb']!r} references unknown node {ref}")
        if self.horizon_s <= 0:
            raise ScenarioInvalid("horizon_s must be positive")

    @staticmethod
    def _command_node_refs(cmd: dict) -> List[int]:
        refs = []
        for key in ("target", "listener", "master", "slave", "node"):
            if key in cmd:
                refs.append(int(cmd[key]))
        refs.extend(int(a) for a in cmd.get("anchors", []))
        return refs


def _require_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioInvalid(f"{where}: unknown field(s) {sorted(unknown)}")


def _radio(section: Optional[dict], default: RadioConfig) -> RadioConfig:
    if section is None:
        return default
    _require_keys(section, {"sf", "bw_hz", "preamble_symbols", "tx_power_dbm"},
                  "radio")
    try:
        return RadioConfig(
            sf=int(section.get("sf", default.sf)),
            bw_hz=int(section.get("bw_hz", default.bw_hz)),
            preamble_symbols=int(section.get("preamble_symbols",
                                             default.preamble_symbols)),
            tx_power_dbm=float(section.get("tx_power_dbm",
                                           default.tx_power_dbm)))
    except ValueError as exc:
        raise ScenarioInvalid(f"radio: {exc}") from exc


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioInvalid("scenario document must be a mapping")
    _require_keys(doc, _TOP_KEYS, "scenario")
    sc = Scenario()
    sc.seed = int(doc.get("seed", 0))
    sc.horizon_s = float(doc.get("horizon_s", 60.0))
    sc.network_id = int(doc.get("network_id", 1))
    sc.alpha_s = float(doc.get("alpha_s", 1.0))
    sc.countdown_mode = str(doc.get("countdown_mode", "dynamic"))
    if sc.countdown_mode not in ("dynamic", "static"):
        raise ScenarioInvalid(
            f"countdown_mode: must be dynamic or static, got {sc.countdown_mode!r}")
    if doc.get("retry_delay_s") is not None:
        sc.retry_delay_s = float(doc["retry_delay_s"])
    bus = doc.get("bus") or {}
    _require_keys(bus, {"latency_s", "jitter_s"}, "bus")
    sc.bus_latency_s = float(bus.get("latency_s", 0.1))
    sc.bus_jitter_s = float(bus.get("jitter_s", 0.05))
    chan = doc.get("channel") or {}
    _require_keys(chan, {"pathloss_exponent", "ref_loss_db_at_1m",
                         "sensitivity_dbm"}, "channel")
    sc.pathloss_exponent = float(chan.get("pathloss_exponent", 2.4))
    sc.ref_loss_db_at_1m = float(chan.get("ref_loss_db_at_1m", 40.0))
    sc.sensitivity_dbm = float(chan.get("sensitivity_dbm", -120.0))
    sc.comm_radio = _radio(doc.get("comm_radio"), sc.comm_radio)
    sc.ranging_radio = _radio(doc.get("ranging_radio"), sc.ranging_radio)
    sc.timing_noise_sigma_s = float(doc.get("timing_noise_sigma_s", 0.0))
    sc.cad_false_positive_rate = float(doc.get("cad_false_positive_rate", 0.0))
    sc.lead_margin_s = float(doc.get("lead_margin_s", 5.0))

    gw = doc.get("gateway") or {}
    _require_keys(gw, {"address", "position"}, "gateway")
    sc.gateway_address = int(gw.get("address", 1))
    sc.positions[sc.gateway_address] = tuple(
        float(c) for c in gw.get("position", (0.0, 0.0, 1.0)))

    for i, nd in enumerate(doc.get("nodes") or []):
        _require_keys(nd, _NODE_KEYS, f"nodes[{i}]")
        if "address" not in nd or "position" not in nd:
            raise ScenarioInvalid(f"nodes[{i}]: address and position required")
        addr = int(nd["address"])
        sc.positions[addr] = tuple(float(c) for c in nd["position"])
        sc.nodes.append(NodeConfig(
            node_id=addr,
            network_id=sc.network_id,
            check_interval_s=float(nd.get("check_interval_s", 600.0)),
            mode=str(nd.get("mode", "low_power")),
            role=str(nd.get("role", "target")),
            clock_ppm=float(nd.get("clock_ppm", 0.0)),
            first_check_s=float(nd.get("first_check_s", 0.0)),
            battery_capacity_c=float(nd.get("battery_capacity_c", 810.0)),
            ranging_repeats=int(nd.get("ranging_repeats", 10))))

    for i, entry in enumerate(doc.get("seed_check_logs") or []):
        _require_keys(entry, {"node", "time_s"}, f"seed_check_logs[{i}]")
        sc.seed_check_logs.append((int(entry["node"]), float(entry["time_s"])))

    for i, jam in enumerate(doc.get("jammers") or []):
        _require_keys(jam, {"at_s", "duration_s", "freq", "position",
                            "tx_power_dbm"}, f"jammers[{i}]")
        jam = dict(jam)
        jam["at_s"] = float(jam["at_s"])
        jam["duration_s"] = float(jam["duration_s"])
        addr = JAMMER_BASE_ADDR + i
        sc.positions[addr] = tuple(
            float(c) for c in jam.get("position", (0.0, 0.0, 1.0)))
        sc.jammers.append(jam)
    # medium marks all jammer interference under one source address
    if sc.jammers:
        sc.positions[0xFFFF] = sc.positions[JAMMER_BASE_ADDR]

    for i, cmd in enumerate(doc.get("commands") or []):
        _require_keys(cmd, _CMD_KEYS, f"commands[{i}]")
        if "verb" not in cmd:
            raise ScenarioInvalid(f"commands[{i}]: verb required")
        cmd = dict(cmd)
        cmd["at_s"] = float(cmd.get("at_s", 0.0))
        every = cmd.pop("every_s", None)
        if every is None:
            sc.commands.append(cmd)
        else:
            t = cmd["at_s"]
            while t < sc.horizon_s:
                rep = dict(cmd)
                rep["at_s"] = t
                sc.commands.append(rep)
                t += float(every)

    sc.validate()
    return sc


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioInvalid(f"{path}: not valid YAML: {exc}") from exc
    return parse_scenario(doc if doc is not None else {})


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package, by stem or filename."""
    if not name.endswith(".scn"):
        name += ".scn"
    ref = resources.files("rangesim") / "scenarios" / name
    if not ref.is_file():
        raise FileNotFoundError(name)
    with resources.as_file(ref) as p:
        return Path(p)


def list_bundled() -> List[str]:
    folder = resources.files("rangesim") / "scenarios"
    return sorted(p.name for p in folder.iterdir() if p.name.endswith(".scn"))
