import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangesim import frame_codec as fc


frames = st.builds(
    fc.MacFrame,
    network_id=st.integers(0, 0xFFFF),
    dest_addr=st.integers(0, 0xFFFF),
    src_addr=st.integers(0, 0xFFFF),
    opcode=st.integers(0, 0xFF),
    data=st.binary(max_size=fc.MAX_DATA_LEN),
)


@given(frames)
@settings(max_examples=300)
def test_mac_round_trip(frame):
    assert fc.decode_mac(fc.encode_mac(frame)) == frame


@given(frames, st.integers(1, 32))
@settings(max_examples=100)
def test_phy_round_trip(frame, preamble):
    phy = fc.encode_phy(frame, preamble_symbols=preamble)
    assert fc.decode_phy(phy) == frame


def test_golden_bytes():
    frame = fc.MacFrame(network_id=0x0001, dest_addr=0x0002,
                        src_addr=0x0003, opcode=0x01, data=b"\x0b\xb8")
    assert fc.encode_mac(frame) == b"\x00\x01\x00\x02\x00\x03\x01\x0b\xb8"


def test_crc_known_vector():
    # classic check value for this CRC variant
    assert fc.crc16_ccitt(b"123456789") == 0x29B1


def test_max_frame_boundary():
    frame = fc.MacFrame(1, 2, 3, 4, bytes(fc.MAX_DATA_LEN))
    assert len(fc.encode_mac(frame)) == fc.MAX_MAC_LEN
    with pytest.raises(fc.DataTooLong):
        fc.encode_mac(fc.MacFrame(1, 2, 3, 4, bytes(fc.MAX_DATA_LEN + 1)))
    with pytest.raises(fc.DataTooLong):
        fc.decode_mac(bytes(fc.MAX_MAC_LEN + 1))
    with pytest.raises(fc.TooShort):
        fc.decode_mac(bytes(fc.MAC_HEADER_LEN - 1))


def test_crc_detects_any_single_bit_flip():
    rng = random.Random(5)
    payload = bytes(rng.randrange(256) for _ in range(32))
    crc = fc.crc16_ccitt(payload)
    for _ in range(64):
        bit = rng.randrange(len(payload) * 8)
        corrupted = bytearray(payload)
        corrupted[bit // 8] ^= 1 << (bit % 8)
        assert fc.crc16_ccitt(bytes(corrupted)) != crc


def test_field_range_validation():
    with pytest.raises(ValueError):
        fc.MacFrame(0x10000, 0, 0, 0, b"")
    with pytest.raises(ValueError):
        fc.MacFrame(0, 0, 0, 0x100, b"")


def test_radio_config_validation():
    cfg = fc.RadioConfig(sf=8, bw_hz=1_625_000)
    assert cfg.symbol_duration_s == pytest.approx(256 / 1_625_000)
    with pytest.raises(ValueError):
        fc.RadioConfig(sf=4, bw_hz=1_625_000)
    with pytest.raises(ValueError):
        fc.RadioConfig(sf=8, bw_hz=125_000)


def test_airtime_monotone_in_payload():
    for sf in (5, 8, 12):
        cfg = fc.RadioConfig(sf=sf, bw_hz=812_000)
        times = [fc.airtime(cfg, n) for n in range(0, fc.MAX_MAC_LEN + 1)]
        # never decreases byte to byte, strictly grows across sf-byte spans
        assert all(b >= a for a, b in zip(times, times[1:]))
        assert all(times[n + sf] > times[n]
                   for n in range(0, len(times) - sf))


def test_airtime_scales_with_symbol_duration():
    slow = fc.RadioConfig(sf=10, bw_hz=203_000)
    fast = fc.RadioConfig(sf=10, bw_hz=1_625_000)
    assert fc.airtime(slow, 20) == pytest.approx(
        fc.airtime(fast, 20) * 1_625_000 / 203_000)


def test_airtime_rejects_bad_length():
    cfg = fc.RadioConfig(sf=8, bw_hz=1_625_000)
    with pytest.raises(ValueError):
        fc.airtime(cfg, -1)
    with pytest.raises(ValueError):
        fc.airtime(cfg, fc.MAX_MAC_LEN + 1)
