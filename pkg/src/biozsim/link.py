"""Reader <-> implant half-duplex link at envelope/bit level.

The 13.56 MHz carrier is not simulated per cycle: downlink commands are
ASK frames the implant demodulates while continuing to harvest, and uplink
responses are sent by load modulation, shorting the resonant tank during
every zero bit so harvesting pauses and the 20 uF reservoir discharges at
the chip's load current.  Serial format is 9.6 kbps 8N1 (start bit 0,
eight data bits LSB-first, stop bit 1); a zero bit shorts the tank.

Wire format (all integers unsigned, checksum = sum of every preceding
frame byte mod 256):

    offset  field     notes
    0       sync      0xA5
    1       opcode    see below
    2..     payload   fixed length per opcode
    last    checksum

    opcode  dir      payload
    0x01    reader   SET_CONFIG: 2 bytes, big-endian, 11-bit word in the
                     low bits: [pll_cal(2) | freq_sel(4) | source_en(1) |
                     iq_sel(1) | gain(3)], MSB first
    0x02    reader   START_MEASURE: none
    0x03    reader   READ_RESULT: none
    0x04    reader   PING: 1 token byte
    0x81    implant  ACK: 1 status byte (echoes the opcode acknowledged)
    0x82    implant  RESULT: 4 bytes, I then Q ADC codes, each big-endian
                     10-bit in 2 bytes
    0x84    implant  PONG: 1 token byte (echo)
    0x7F    implant  NAK: 1 reason byte (1 = checksum, 2 = reserved
                     frequency, 3 = bad opcode, 4 = no result)

The power side is an energy-reservoir budget: the rectifier recharges the
reservoir first-order toward the 3.0 V diode-chain clamp with time
constant r_source * C; while the tank is shorted the reservoir discharges
by I_load * dt / C.  The session aborts with a brown-out error when the
reservoir drops below the 1.9 V regulator dropout margin.

A session owns the reader and implant state machines exclusively; the
module is otherwise stateless, and a session is deterministic given the
command list and channel parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

SYNC = 0xA5

OP_SET_CONFIG = 0x01
OP_START_MEASURE = 0x02
OP_READ_RESULT = 0x03
OP_PING = 0x04
OP_ACK = 0x81
OP_RESULT = 0x82
OP_PONG = 0x84
OP_NAK = 0x7F

PAYLOAD_LEN = {
    OP_SET_CONFIG: 2,
    OP_START_MEASURE: 0,
    OP_READ_RESULT: 0,
    OP_PING: 1,
    OP_ACK: 1,
    OP_RESULT: 4,
    OP_PONG: 1,
    OP_NAK: 1,
}

NAK_CHECKSUM = 1
NAK_RESERVED_FREQ = 2
NAK_BAD_OPCODE = 3
NAK_NO_RESULT = 4

#: Current consumption per block, microamps.
BLOCK_CURRENTS_UA = {
    "power_mgmt": 16.5,
    "pll": 22.9,
    "signal_gen": 29.0,
    "lna_mixer": 17.4,
    "tia": 9.2,
    "lpf": 58.5,
    "buffers": 12.0,
}

ALL_BLOCKS = frozenset(BLOCK_CURRENTS_UA)


def power_budget(active_blocks=ALL_BLOCKS) -> float:
    """Total current draw in microamps for the active block set."""
    unknown = set(active_blocks) - ALL_BLOCKS
    if unknown:
        raise KeyError(f"unknown blocks: {sorted(unknown)}")
    return float(sum(BLOCK_CURRENTS_UA[b] for b in active_blocks))


class ReservedFrequencyError(ValueError):
    """Config word selects one of the reserved frequency codes (11..15)."""


@dataclass(frozen=True)
class ConfigWord:
    """The 11-bit configuration word.

    Layout, MSB first: pll_cal (2 bits, charge-pump trim, carried but not
    modeled), freq_sel (4 bits; 0..10 select plan frequencies, 11..15 are
    reserved), source_enable (1), iq_sel (1; 0 = I, 1 = Q), gain (3 bits
    g0 g1 g2).
    """

    pll_cal: int = 0
    freq_sel: int = 0
    source_enable: int = 0
    iq_sel: int = 0
    gain: int = 0

    def __post_init__(self):
        checks = (
            ("pll_cal", self.pll_cal, 4),
            ("freq_sel", self.freq_sel, 16),
            ("source_enable", self.source_enable, 2),
            ("iq_sel", self.iq_sel, 2),
            ("gain", self.gain, 8),
        )
        for name, value, span in checks:
            if not 0 <= value < span:
                raise ValueError(f"{name} out of range: {value}")

    def require_usable(self) -> "ConfigWord":
        if self.freq_sel > 10:
            raise ReservedFrequencyError(
                f"freq_sel {self.freq_sel} is reserved (usable codes are 0..10)"
            )
        return self

    def to_afe_config(self):
        from . import afe
        from .waveforms import Phase

        self.require_usable()
        return afe.AfeConfig(
            g0=(self.gain >> 2) & 1,
            g1=(self.gain >> 1) & 1,
            g2=self.gain & 1,
            iq_select=Phase.Q if self.iq_sel else Phase.I,
            source_enable=self.source_enable,
            freq_index=self.freq_sel,
        )


def encode_config(w: ConfigWord) -> int:
    """Pack to the 11-bit field."""
    return (
        (w.pll_cal << 9)
        | (w.freq_sel << 5)
        | (w.source_enable << 4)
        | (w.iq_sel << 3)
        | w.gain
    )


def decode_config(bits: int) -> ConfigWord:
    """Unpack an 11-bit field; decode(encode(w)) == w for all 2048 words."""
    if not 0 <= bits < 2**11:
        raise ValueError(f"config word must fit in 11 bits, got {bits}")
    return ConfigWord(
        pll_cal=(bits >> 9) & 0b11,
        freq_sel=(bits >> 5) & 0b1111,
        source_enable=(bits >> 4) & 1,
        iq_sel=(bits >> 3) & 1,
        gain=bits & 0b111,
    )


@dataclass(frozen=True)
class Frame:
    """One link frame; `corrupt` flips the checksum on the wire (testing)."""

    opcode: int
    payload: bytes = b""
    corrupt: bool = False

    def __post_init__(self):
        want = PAYLOAD_LEN.get(self.opcode)
        if want is None:
            raise ValueError(f"unknown opcode 0x{self.opcode:02X}")
        if len(self.payload) != want:
            raise ValueError(
                f"opcode 0x{self.opcode:02X} needs {want} payload bytes, "
                f"got {len(self.payload)}"
            )

    def to_bytes(self) -> bytes:
        body = bytes([SYNC, self.opcode]) + self.payload
        csum = sum(body) & 0xFF
        if self.corrupt:
            csum ^= 0xFF
        return body + bytes([csum])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Frame":
        if len(data) < 3 or data[0] != SYNC:
            raise ValueError("malformed frame")
        frame = cls(opcode=data[1], payload=data[2:-1])
        if sum(data[:-1]) & 0xFF != data[-1]:
            raise ValueError("checksum mismatch")
        return frame

    def hex(self) -> str:
        return self.to_bytes().hex()


def checksum_ok(data: bytes) -> bool:
    return len(data) >= 3 and (sum(data[:-1]) & 0xFF) == data[-1]


@dataclass(frozen=True)
class ChannelParams:
    """Envelope-level channel and reservoir constants."""

    bit_rate: float = 9600.0
    clamp_voltage: float = 3.0
    brownout_voltage: float = 1.9
    r_source: float = 2500.0  # recharge: tau = r_source * reservoir_cap = 50 ms


@dataclass
class PowerState:
    """Energy-reservoir state; the voltage is clamped to [0, 3.0] V."""

    reservoir_voltage: float = 3.0
    reservoir_cap: float = 20e-6
    load_current: float = 165.5e-6
    harvesting: bool = True


class BrownOutError(RuntimeError):
    """Reservoir dropped below the regulator dropout margin."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SessionResult:
    responses: list
    trace: list          # (time_s, reservoir_voltage, tag)
    events: list         # human-readable protocol log


def _uart_bits(data: bytes):
    """8N1 bit sequence, LSB first: start(0), data, stop(1)."""
    for byte in data:
        yield 0
        for k in range(8):
            yield (byte >> k) & 1
        yield 1


class ImplantDevice:
    """Implant-side protocol state machine.

    `measure_backend(config_word) -> (vi_code, vq_code)` plugs in the
    measurement engine; without one, START_MEASURE acknowledges and
    READ_RESULT returns zero codes.  `measure_time` is the busy interval a
    measurement occupies (two settle-plus-averaging windows).
    """

    def __init__(self, measure_backend: Optional[Callable] = None,
                 measure_time: float = 2 * (0.025 + 0.032)):
        self.config: Optional[ConfigWord] = None
        self.measure_backend = measure_backend
        self.measure_time = measure_time
        self.result: Optional[tuple] = None

    def handle(self, data: bytes):
        """Process one downlink frame; return (response Frame, busy_seconds)."""
        if not checksum_ok(data):
            return Frame(OP_NAK, bytes([NAK_CHECKSUM])), 0.0
        opcode, payload = data[1], data[2:-1]
        if opcode == OP_PING:
            return Frame(OP_PONG, payload), 0.0
        if opcode == OP_SET_CONFIG:
            word = decode_config(int.from_bytes(payload, "big"))
            try:
                word.require_usable()
            except ReservedFrequencyError:
                return Frame(OP_NAK, bytes([NAK_RESERVED_FREQ])), 0.0
            self.config = word
            return Frame(OP_ACK, bytes([OP_SET_CONFIG])), 0.0
        if opcode == OP_START_MEASURE:
            if self.config is None:
                return Frame(OP_NAK, bytes([NAK_NO_RESULT])), 0.0
            if self.measure_backend is not None:
                self.result = self.measure_backend(self.config)
            else:
                self.result = (0, 0)
            return Frame(OP_ACK, bytes([OP_START_MEASURE])), self.measure_time
        if opcode == OP_READ_RESULT:
            if self.result is None:
                return Frame(OP_NAK, bytes([NAK_NO_RESULT])), 0.0
            vi, vq = self.result
            payload = vi.to_bytes(2, "big") + vq.to_bytes(2, "big")
            return Frame(OP_RESULT, payload), 0.0
        return Frame(OP_NAK, bytes([NAK_BAD_OPCODE])), 0.0


def session(
    commands,
    channel: ChannelParams = ChannelParams(),
    power: PowerState | None = None,
    device: ImplantDevice | None = None,
) -> SessionResult:
    """Run a half-duplex exchange: one response per reader command.

    Downlink frames ride the carrier with shallow modulation, so
    harvesting continues; uplink load modulation shorts the tank for every
    zero bit, pausing harvesting for that bit time.  The reservoir trace
    is recorded at every bit boundary.  Brown-out raises BrownOutError
    carrying the trace; checksum failures produce NAK responses.
    """
    if power is None:
        power = PowerState()
    if device is None:
        device = ImplantDevice()
    if not power.harvesting:
        raise ValueError("session requires harvesting at start")

    bit_t = 1.0 / channel.bit_rate
    tau = channel.r_source * power.reservoir_cap
    t = 0.0
    v = min(power.reservoir_voltage, channel.clamp_voltage)
    trace = [(t, v, "start")]
    events = []
    responses = []

    def advance(dt: float, harvesting: bool, tag: str):
        nonlocal t, v
        if harvesting:
            if tau > 0:
                v = channel.clamp_voltage + (v - channel.clamp_voltage) * math.exp(-dt / tau)
            else:
                v = channel.clamp_voltage
        else:
            v = v - power.load_current * dt / power.reservoir_cap
        v = min(max(v, 0.0), channel.clamp_voltage)
        t += dt
        trace.append((t, v, tag))
        if v < channel.brownout_voltage:
            raise BrownOutError(
                f"brown-out at t={t * 1e3:.2f} ms, reservoir {v:.3f} V", trace
            )

    for cmd in commands:
        wire = cmd.to_bytes()
        advance(len(wire) * 10 * bit_t, True, "rx")
        response, busy = device.handle(wire)
        if busy:
            advance(busy, True, "measure")
        events.append(
            f"rx {cmd.hex()} -> tx {response.hex()}"
            + (" [checksum rejected]" if response.opcode == OP_NAK and
               response.payload == bytes([NAK_CHECKSUM]) else "")
        )
        for bit in _uart_bits(response.to_bytes()):
            advance(bit_t, bit == 1, "tx")  # zero bit shorts the tank
        responses.append(response)

    return SessionResult(responses=responses, trace=trace, events=events)
