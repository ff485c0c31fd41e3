"""Opcode-specific data-field layouts carried inside MAC frames.

All multi-byte integers are big-endian.  Countdowns travel as uint32
milliseconds; distances and time differences as IEEE-754 float64 so the
wire adds no quantization of its own.  Layouts are documented in
docs/wire_format.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .frame_codec import FrameError

MODE_MASTER = 0
MODE_SLAVE = 1


class PayloadError(FrameError):
    pass


@dataclass(frozen=True)
class CheckRequestData:
    battery_mv: int

    def encode(self) -> bytes:
        return struct.pack(">H", self.battery_mv)

    @classmethod
    def decode(cls, raw: bytes) -> "CheckRequestData":
        if len(raw) < 2:
            raise PayloadError("check request data too short")
        return cls(struct.unpack(">H", raw[:2])[0])


@dataclass(frozen=True)
class PtpEntry:
    """One point-to-point ranging assignment inside a batch."""

    mode: int  # MODE_MASTER or MODE_SLAVE
    partner_id: int
    countdown_s: float
    ranging_id: int

    _FMT = ">BHII"
    SIZE = struct.calcsize(_FMT)

    def encode(self) -> bytes:
        return struct.pack(self._FMT, self.mode, self.partner_id,
                           round(self.countdown_s * 1000), self.ranging_id)

    @classmethod
    def decode(cls, raw: bytes) -> "PtpEntry":
        mode, partner, cd_ms, rid = struct.unpack(cls._FMT, raw)
        return cls(mode, partner, cd_ms / 1000.0, rid)


@dataclass(frozen=True)
class PassiveEntry:
    """One passive-listen assignment inside a batch."""

    master_id: int
    slave_id: int
    countdown_s: float
    ranging_id: int

    _FMT = ">HHII"
    SIZE = struct.calcsize(_FMT)

    def encode(self) -> bytes:
        return struct.pack(self._FMT, self.master_id, self.slave_id,
                           round(self.countdown_s * 1000), self.ranging_id)

    @classmethod
    def decode(cls, raw: bytes) -> "PassiveEntry":
        master, slave, cd_ms, rid = struct.unpack(cls._FMT, raw)
        return cls(master, slave, cd_ms / 1000.0, rid)


def encode_batch(entries) -> bytes:
    if len(entries) > 255:
        raise PayloadError("batch larger than 255 entries")
    return bytes([len(entries)]) + b"".join(e.encode() for e in entries)


def _decode_batch(raw: bytes, entry_cls) -> list:
    if not raw:
        raise PayloadError("empty batch payload")
    n = raw[0]
    body = raw[1:]
    if len(body) != n * entry_cls.SIZE:
        raise PayloadError(
            f"batch of {n} entries needs {n * entry_cls.SIZE} bytes, got {len(body)}")
    return [entry_cls.decode(body[i * entry_cls.SIZE:(i + 1) * entry_cls.SIZE])
            for i in range(n)]


def decode_ptp_batch(raw: bytes) -> List[PtpEntry]:
    return _decode_batch(raw, PtpEntry)


def decode_passive_batch(raw: bytes) -> List[PassiveEntry]:
    return _decode_batch(raw, PassiveEntry)


@dataclass(frozen=True)
class RangingResultData:
    ranging_id: int
    slave_id: int
    distance_m: float
    raw_distance_m: float
    rssi_dbm: float

    _FMT = ">IHddf"

    def encode(self) -> bytes:
        return struct.pack(self._FMT, self.ranging_id, self.slave_id,
                           self.distance_m, self.raw_distance_m, self.rssi_dbm)

    @classmethod
    def decode(cls, raw: bytes) -> "RangingResultData":
        try:
            return cls(*struct.unpack(cls._FMT, raw))
        except struct.error as exc:
            raise PayloadError(f"bad ranging result payload: {exc}") from exc


@dataclass(frozen=True)
class PassiveResultData:
    ranging_id: int
    master_id: int
    slave_id: int
    delta_t_s: float

    _FMT = ">IHHd"

    def encode(self) -> bytes:
        return struct.pack(self._FMT, self.ranging_id, self.master_id,
                           self.slave_id, self.delta_t_s)

    @classmethod
    def decode(cls, raw: bytes) -> "PassiveResultData":
        try:
            return cls(*struct.unpack(cls._FMT, raw))
        except struct.error as exc:
            raise PayloadError(f"bad passive result payload: {exc}") from exc


@dataclass(frozen=True)
class ConfigData:
    """Node configuration as delivered by a config check."""

    mode: int  # 0 low_power, 1 always_on
    check_interval_s: float
    anchor: Optional[Tuple[float, float]] = None  # lat, lon

    def encode(self) -> bytes:
        head = struct.pack(">BI", self.mode, round(self.check_interval_s * 1000))
        if self.anchor is None:
            return head + b"\x00"
        return head + b"\x01" + struct.pack(">dd", *self.anchor)

    @classmethod
    def decode(cls, raw: bytes) -> "ConfigData":
        if len(raw) < 6:
            raise PayloadError("config payload too short")
        mode, interval_ms = struct.unpack(">BI", raw[:5])
        anchor = None
        if raw[5] == 1:
            if len(raw) < 6 + 16:
                raise PayloadError("config payload missing anchor position")
            anchor = struct.unpack(">dd", raw[6:22])
        return cls(mode, interval_ms / 1000.0, anchor)
