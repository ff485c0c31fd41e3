"""MAC/PHY frame encoding, CRC protection, and LoRa airtime.

On-wire MAC layout (big-endian, offsets in bytes):

    | 0..1 | network_id |
    | 2..3 | dest_addr  |
    | 4..5 | src_addr   |
    | 6    | opcode     |
    | 7..  | data (0-246 bytes) |

Total MAC length is 7 + len(data), at most 253 bytes so it fits a single
PHY payload.  The PHY wrapper appends a CRC-16/CCITT (poly 0x1021, init
0xFFFF) over the whole MAC payload.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

MAC_HEADER_LEN = 7
MAX_DATA_LEN = 246
MAX_MAC_LEN = MAC_HEADER_LEN + MAX_DATA_LEN  # 253

ALLOWED_BANDWIDTHS_HZ = (203_000, 406_000, 812_000, 1_625_000)

# Opcode registry
OP_INSTRUCTION_CHECK_REQUEST = 0x01
OP_INSTRUCTION_RESPONSE = 0x02
OP_CONFIG_CHECK_REQUEST = 0x03
OP_CONFIG_UPDATE = 0x04
OP_RANGING_BATCH = 0x05
OP_PASSIVE_RANGING_BATCH = 0x06
OP_RANGING_RESULT = 0x07
OP_PASSIVE_RANGING_RESULT = 0x08


class FrameError(Exception):
    """Base class for codec failures."""


class DataTooLong(FrameError):
    pass


class TooShort(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


@dataclass(frozen=True)
class RadioConfig:
    """Radio parameters shared by both ends of a link."""

    sf: int = 8
    bw_hz: int = 1_625_000
    freq_hz: float = 2.4e9
    preamble_symbols: int = 12
    tx_power_dbm: float = 12.5

    def __post_init__(self):
        if not 5 <= self.sf <= 12:
            raise ValueError(f"spreading factor {self.sf} outside 5..12")
        if self.bw_hz not in ALLOWED_BANDWIDTHS_HZ:
            raise ValueError(f"bandwidth {self.bw_hz} Hz not supported")
        if self.preamble_symbols < 1:
            raise ValueError("preamble must be at least one symbol")

    @property
    def symbol_duration_s(self) -> float:
        return (2 ** self.sf) / self.bw_hz


@dataclass(frozen=True)
class MacFrame:
    network_id: int
    dest_addr: int
    src_addr: int
    opcode: int
    data: bytes = b""

    def __post_init__(self):
        for name in ("network_id", "dest_addr", "src_addr"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFF:
                raise ValueError(f"{name}={v} outside 16-bit range")
        if not 0 <= self.opcode <= 0xFF:
            raise ValueError(f"opcode={self.opcode} outside 8-bit range")
        object.__setattr__(self, "data", bytes(self.data))


@dataclass(frozen=True)
class PhyFrame:
    payload: bytes
    crc: int
    preamble_symbols: int = 12


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE, poly 0x1021."""
    crc = init
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def encode_mac(frame: MacFrame) -> bytes:
    if len(frame.data) > MAX_DATA_LEN:
        raise DataTooLong(f"data length {len(frame.data)} exceeds {MAX_DATA_LEN}")
    return (
        struct.pack(
            ">HHHB",
            frame.network_id,
            frame.dest_addr,
            frame.src_addr,
            frame.opcode,
        )
        + frame.data
    )


def decode_mac(raw: bytes) -> MacFrame:
    if len(raw) < MAC_HEADER_LEN:
        raise TooShort(f"frame of {len(raw)} bytes, need at least {MAC_HEADER_LEN}")
    if len(raw) > MAX_MAC_LEN:
        raise DataTooLong(f"frame of {len(raw)} bytes exceeds {MAX_MAC_LEN}")
    net, dest, src, opcode = struct.unpack(">HHHB", raw[:MAC_HEADER_LEN])
    return MacFrame(net, dest, src, opcode, raw[MAC_HEADER_LEN:])


def encode_phy(frame: MacFrame, preamble_symbols: int = 12) -> PhyFrame:
    payload = encode_mac(frame)
    return PhyFrame(payload=payload, crc=crc16_ccitt(payload),
                    preamble_symbols=preamble_symbols)


def decode_phy(phy: PhyFrame) -> MacFrame:
    if crc16_ccitt(phy.payload) != phy.crc:
        raise CrcMismatch("payload checksum failed")
    return decode_mac(phy.payload)


def airtime(config: RadioConfig, payload_len: int, has_crc: bool = True,
            code_rate: int = 1, explicit_header: bool = True) -> float:
    """On-air duration in seconds for a payload of `payload_len` bytes.

    Standard LoRa symbol-count formula with explicit header and nominal
    code rate 4/5 (code_rate=1).  Low-data-rate optimization is not used
    at 2.4 GHz bandwidths.
    """
    if not 0 <= payload_len <= MAX_MAC_LEN:
        raise ValueError(f"payload length {payload_len} outside 0..{MAX_MAC_LEN}")
    sf = config.sf
    t_s = config.symbol_duration_s
    numer = (8 * payload_len - 4 * sf + 28 + 16 * (1 if has_crc else 0)
             - 20 * (0 if explicit_header else 1))
    payload_symbols = 8 + max(math.ceil(numer / (4 * sf)) * (code_rate + 4), 0)
    return (config.preamble_symbols + 4.25 + payload_symbols) * t_s
