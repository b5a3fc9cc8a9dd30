"""Fixed-layout binary telemetry over UDP, plus the operator command path.

The wire format is versioned and documented to bit level in
docs/wire_format.md; layouts here and in that file must change together.
Packets are little-endian with a trailing CRC-32 over all prior bytes.
Telemetry is fire-and-forget: no acks, no retransmits; receivers surface
sequence gaps. The sender downsamples 100 Hz snapshots to the highest rate
that fits the configured bandwidth cap (default 10 Hz).
"""

from __future__ import annotations

import math
import socket
import struct
import threading
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

TELEMETRY_MAGIC = b"OVTM"
COMMAND_MAGIC = b"OVCM"
WIRE_VERSION = 1

# magic, version, seq, sim_time, ego x/y/psi/speed, target_speed, flag, role,
# opp present/x/y/speed, health bits, cte, steer, throttle, brake, crc
_PACKET_FMT = "<4sBId4ffBBB3fHf3fI"
PACKET_SIZE = struct.calcsize(_PACKET_FMT)

_COMMAND_FMT = "<4sBBIdI"
COMMAND_SIZE = struct.calcsize(_COMMAND_FMT)

FLAG_CODES = {"green": 0, "waving_green": 1, "yellow": 2, "red": 3}
FLAG_NAMES = {v: k for k, v in FLAG_CODES.items()}
ROLE_CODES = {"attacker": 0, "defender": 1}
ROLE_NAMES = {v: k for k, v in ROLE_CODES.items()}

COMMAND_KINDS = {"set_flag": 1, "set_round_speed": 2, "emergency_stop": 3, "reset_latch": 4}
COMMAND_NAMES = {v: k for k, v in COMMAND_KINDS.items()}

# Health bitfield layout (bit index -> meaning); see docs/wire_format.md.
HEALTH_BITS = (
    "unit_a_pose_ok", "unit_a_velocity_ok", "unit_a_heading_ok",
    "unit_b_pose_ok", "unit_b_velocity_ok", "unit_b_heading_ok",
    "fused_cov_ok", "safe_stop_latched",
    "lidar_rate_ok", "camera_rate_ok", "opponent_tracked",
    "traction_lost", "planner_healthy", "localization_rate_ok",
    "spinout_detected", "telemetry_socket_ok",
)


class TelemetryDecodeError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


def _f32(v: float) -> float:
    return float(np.float32(v))


@dataclass(frozen=True)
class TelemetrySnapshot:
    """One telemetry frame. Float fields are float32-quantized on build so
    encode/decode round trips exactly."""

    seq: int
    sim_time: float
    ego_x: float
    ego_y: float
    ego_psi: float
    ego_speed: float
    target_speed: float
    flag: str
    role: str
    opp_present: bool
    opp_x: float
    opp_y: float
    opp_speed: float
    health_bits: int
    cte: float
    steer: float
    throttle: float
    brake: float

    @classmethod
    def build(cls, **kw) -> "TelemetrySnapshot":
        for f in fields(cls):
            if f.type == "float" and f.name != "sim_time" and f.name in kw:
                kw[f.name] = _f32(kw[f.name])
        return cls(**kw)

    def health_flags(self) -> dict[str, bool]:
        return {name: bool(self.health_bits >> i & 1) for i, name in enumerate(HEALTH_BITS)}


def pack_health(flags: dict[str, bool]) -> int:
    bits = 0
    for i, name in enumerate(HEALTH_BITS):
        if flags.get(name, False):
            bits |= 1 << i
    return bits


def encode(s: TelemetrySnapshot) -> bytes:
    """Fixed-length little-endian packet with trailing CRC-32."""
    for name in ("ego_x", "ego_y", "ego_psi", "ego_speed", "target_speed",
                 "opp_x", "opp_y", "opp_speed", "cte", "steer", "throttle", "brake"):
        if not math.isfinite(getattr(s, name)):
            raise ValueError(f"non-finite field {name}")
    body = struct.pack(
        _PACKET_FMT[:-1],  # all but the crc
        TELEMETRY_MAGIC, WIRE_VERSION, s.seq, s.sim_time,
        s.ego_x, s.ego_y, s.ego_psi, s.ego_speed,
        s.target_speed, FLAG_CODES[s.flag], ROLE_CODES[s.role],
        1 if s.opp_present else 0, s.opp_x, s.opp_y, s.opp_speed,
        s.health_bits, s.cte, s.steer, s.throttle, s.brake,
    )
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> TelemetrySnapshot:
    """Inverse of encode; rejects wrong length, magic, version, or checksum."""
    if len(data) != PACKET_SIZE:
        raise TelemetryDecodeError("length", f"{len(data)} != {PACKET_SIZE}")
    if data[:4] != TELEMETRY_MAGIC:
        raise TelemetryDecodeError("magic", repr(data[:4]))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise TelemetryDecodeError("checksum")
    vals = struct.unpack(_PACKET_FMT, data)
    (_, version, seq, sim_time, ex, ey, epsi, espd, tspd, flag, role,
     present, ox, oy, ospd, health, cte, steer, throttle, brake, _) = vals
    if version != WIRE_VERSION:
        raise TelemetryDecodeError("version", str(version))
    if flag not in FLAG_NAMES or role not in ROLE_NAMES:
        raise TelemetryDecodeError("field", "unknown flag/role code")
    return TelemetrySnapshot(
        seq=seq, sim_time=sim_time, ego_x=ex, ego_y=ey, ego_psi=epsi,
        ego_speed=espd, target_speed=tspd, flag=FLAG_NAMES[flag],
        role=ROLE_NAMES[role], opp_present=bool(present), opp_x=ox, opp_y=oy,
        opp_speed=ospd, health_bits=health, cte=cte, steer=steer,
        throttle=throttle, brake=brake,
    )


@dataclass(frozen=True)
class OperatorCommand:
    kind: str  # set_flag | set_round_speed | emergency_stop | reset_latch
    payload: float
    seq: int


def encode_command(c: OperatorCommand) -> bytes:
    body = struct.pack(
        _COMMAND_FMT[:-1], COMMAND_MAGIC, WIRE_VERSION,
        COMMAND_KINDS[c.kind], c.seq, float(c.payload),
    )
    return body + struct.pack("<I", zlib.crc32(body))


def decode_command(data: bytes) -> OperatorCommand:
    if len(data) != COMMAND_SIZE:
        raise TelemetryDecodeError("length", f"{len(data)} != {COMMAND_SIZE}")
    if data[:4] != COMMAND_MAGIC:
        raise TelemetryDecodeError("magic", repr(data[:4]))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise TelemetryDecodeError("checksum")
    _, version, kind, seq, payload, _ = struct.unpack(_COMMAND_FMT, data)
    if version != WIRE_VERSION:
        raise TelemetryDecodeError("version", str(version))
    if kind not in COMMAND_NAMES:
        raise TelemetryDecodeError("field", f"unknown command kind {kind}")
    return OperatorCommand(kind=COMMAND_NAMES[kind], payload=payload, seq=seq)


class TelemetrySender:
    """Downsampling UDP publisher under an explicit bandwidth cap.

    Emission is driven by sim time, so headless runs stay deterministic.
    Socket failures set the health flag and never propagate: telemetry is
    not flight-critical.
    """

    def __init__(self, rate_hz: float = 10.0, bandwidth_cap: float | None = None,
                 host: str = "127.0.0.1", port: int | None = None):
        if bandwidth_cap is not None:
            if bandwidth_cap < PACKET_SIZE:
                raise ValueError(
                    f"bandwidth cap {bandwidth_cap} B/s below one packet/s ({PACKET_SIZE})"
                )
            rate_hz = min(rate_hz, bandwidth_cap // PACKET_SIZE)
        if rate_hz <= 0:
            raise ValueError("telemetry rate must be positive")
        self.period = 1.0 / rate_hz
        # Integer-microsecond schedule: no cumulative float drift, so packet
        # spacing is exact and no 1 s window ever holds an extra packet.
        self._period_us = max(int(round(self.period * 1e6)), 1)
        self.addr = (host, port) if port is not None else None
        self.seq = 0
        self.socket_ok = True
        self.sent: list[tuple[float, int, int]] = []  # (sim_time, seq, nbytes)
        self._next_emit_us = 0
        self._sock = None
        if self.addr is not None:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def offer(self, sim_time: float, make_snapshot) -> TelemetrySnapshot | None:
        """Emit if a telemetry period has elapsed; make_snapshot(seq) builds
        the frame only when actually due."""
        now_us = int(round(sim_time * 1e6))
        if now_us < self._next_emit_us:
            return None
        snap = make_snapshot(self.seq)
        data = encode(snap)
        if self._sock is not None:
            try:
                self._sock.sendto(data, self.addr)
                self.socket_ok = True
            except OSError:
                self.socket_ok = False
        self.sent.append((sim_time, self.seq, len(data)))
        self.seq += 1
        self._next_emit_us = now_us + self._period_us
        return snap

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()


class TelemetryReceiver:
    """Base-station side: decodes packets, tracks sequence gaps."""

    def __init__(self, port: int, host: str = "127.0.0.1", on_packet=None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.settimeout(0.2)
        self.port = self._sock.getsockname()[1]
        self.on_packet = on_packet
        self.latest: TelemetrySnapshot | None = None
        self.received = 0
        self.gaps = 0
        self.rejected = 0
        self._last_seq: int | None = None
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "TelemetryReceiver":
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, _ = self._sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                snap = decode(data)
            except TelemetryDecodeError:
                self.rejected += 1
                continue
            if self._last_seq is not None and snap.seq > self._last_seq + 1:
                self.gaps += snap.seq - self._last_seq - 1
            self._last_seq = snap.seq
            self.latest = snap
            self.received += 1
            if self.on_packet is not None:
                self.on_packet(snap)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self._sock.close()


class CommandSender:
    """Base-station side: posts operator commands to the car."""

    def __init__(self, host: str, port: int):
        self.addr = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._seq = 0

    def send(self, kind: str, payload: float = 0.0) -> OperatorCommand:
        self._seq += 1
        cmd = OperatorCommand(kind=kind, payload=payload, seq=self._seq)
        self._sock.sendto(encode_command(cmd), self.addr)
        return cmd

    def close(self) -> None:
        self._sock.close()


class CommandReceiver:
    """Car side: queue of decoded operator commands, drained by the executive."""

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.settimeout(0.05)
        self.port = self._sock.getsockname()[1]
        self._queue: list[OperatorCommand] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "CommandReceiver":
        self._thread.start()
        return self

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, _ = self._sock.recvfrom(1024)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                cmd = decode_command(data)
            except TelemetryDecodeError:
                continue
            with self._lock:
                self._queue.append(cmd)

    def drain(self) -> list[OperatorCommand]:
        with self._lock:
            cmds, self._queue = self._queue, []
        return cmds

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self._sock.close()


def snapshot_to_json_dict(s: TelemetrySnapshot) -> dict:
    """Bridge representation: field names match docs/wire_format.md."""
    return {
        "seq": s.seq,
        "sim_time": s.sim_time,
        "ego_x": s.ego_x,
        "ego_y": s.ego_y,
        "ego_psi": s.ego_psi,
        "ego_speed": s.ego_speed,
        "target_speed": s.target_speed,
        "flag": s.flag,
        "role": s.role,
        "opp_present": s.opp_present,
        "opp_x": s.opp_x,
        "opp_y": s.opp_y,
        "opp_speed": s.opp_speed,
        "health_bits": s.health_bits,
        "health": s.health_flags(),
        "cte": s.cte,
        "steer": s.steer,
        "throttle": s.throttle,
        "brake": s.brake,
    }
