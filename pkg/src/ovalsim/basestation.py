"""Base-station process: receives UDP telemetry, rebroadcasts each packet
as one JSON object over a WebSocket bridge for the operator console, and
forwards console commands back to the car over the UDP command port.

The WebSocket server is a minimal in-repo RFC 6455 implementation (no
websocket package is available here): HTTP upgrade handshake, unmasked
server text frames, client frame unmasking, ping/pong, and close. That is
all a browser client needs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading

from .telemetry import (
    CommandSender,
    TelemetryReceiver,
    TelemetrySnapshot,
    snapshot_to_json_dict,
)

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_encode_text(payload: bytes) -> bytes:
    """Server-to-client unmasked text frame."""
    header = bytearray([0x81])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 1 << 16:
        header.append(126)
        header += struct.pack(">H", n)
    else:
        header.append(127)
        header += struct.pack(">Q", n)
    return bytes(header) + payload


class _WsClient:
    def __init__(self, conn: socket.socket, addr):
        self.conn = conn
        self.addr = addr
        self.lock = threading.Lock()
        self.alive = True

    def send_text(self, payload: bytes) -> None:
        try:
            with self.lock:
                self.conn.sendall(ws_encode_text(payload))
        except OSError:
            self.alive = False

    def close(self) -> None:
        self.alive = False
        try:
            self.conn.close()
        except OSError:
            pass


class WebSocketBridge:
    """Broadcasts JSON messages to all connected clients; receives JSON
    command messages via on_message."""

    def __init__(self, port: int, host: str = "127.0.0.1", on_message=None):
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(8)
        self._server.settimeout(0.2)
        self.port = self._server.getsockname()[1]
        self.on_message = on_message
        self._clients: list[_WsClient] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "WebSocketBridge":
        self._accept_thread.start()
        return self

    @property
    def client_count(self) -> int:
        with self._lock:
            return len([c for c in self._clients if c.alive])

    def broadcast(self, message: dict) -> None:
        payload = json.dumps(message).encode()
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            if c.alive:
                c.send_text(payload)
        self._reap()

    def _reap(self) -> None:
        with self._lock:
            self._clients = [c for c in self._clients if c.alive]

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                if self._handshake(conn):
                    client = _WsClient(conn, addr)
                    with self._lock:
                        self._clients.append(client)
                    threading.Thread(
                        target=self._client_loop, args=(client,), daemon=True
                    ).start()
                else:
                    conn.close()
            except OSError:
                conn.close()

    @staticmethod
    def _read_headers(conn: socket.socket) -> dict[str, str] | None:
        conn.settimeout(2.0)
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = conn.recv(1024)
            if not chunk:
                return None
            data += chunk
            if len(data) > 16384:
                return None
        headers = {}
        for line in data.split(b"\r\n")[1:]:
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.decode().strip().lower()] = v.decode().strip()
        return headers

    def _handshake(self, conn: socket.socket) -> bool:
        headers = self._read_headers(conn)
        if not headers or "sec-websocket-key" not in headers:
            return False
        accept = _accept_key(headers["sec-websocket-key"])
        conn.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n"
        )
        conn.settimeout(0.2)
        return True

    def _client_loop(self, client: _WsClient) -> None:
        buf = b""
        while not self._stop.is_set() and client.alive:
            try:
                chunk = client.conn.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            buf = self._consume_frames(client, buf)
        client.close()

    def _consume_frames(self, client: _WsClient, buf: bytes) -> bytes:
        while True:
            if len(buf) < 2:
                return buf
            opcode = buf[0] & 0x0F
            masked = bool(buf[1] & 0x80)
            length = buf[1] & 0x7F
            offset = 2
            if length == 126:
                if len(buf) < 4:
                    return buf
                length = struct.unpack(">H", buf[2:4])[0]
                offset = 4
            elif length == 127:
                if len(buf) < 10:
                    return buf
                length = struct.unpack(">Q", buf[2:10])[0]
                offset = 10
            mask = b"\x00" * 4
            if masked:
                if len(buf) < offset + 4:
                    return buf
                mask = buf[offset:offset + 4]
                offset += 4
            if len(buf) < offset + length:
                return buf
            payload = bytes(
                b ^ mask[i % 4] for i, b in enumerate(buf[offset:offset + length])
            )
            buf = buf[offset + length:]
            if opcode == 0x8:  # close
                client.close()
                return b""
            if opcode == 0x9:  # ping -> pong
                try:
                    with client.lock:
                        client.conn.sendall(bytes([0x8A, len(payload)]) + payload)
                except OSError:
                    client.close()
                continue
            if opcode in (0x1, 0x2) and self.on_message is not None:
                try:
                    self.on_message(json.loads(payload.decode()))
                except (ValueError, UnicodeDecodeError):
                    pass

    def stop(self) -> None:
        self._stop.set()
        self._accept_thread.join(timeout=1.0)
        with self._lock:
            for c in self._clients:
                c.close()
            self._clients.clear()
        self._server.close()


class BaseStation:
    """Telemetry receiver + WebSocket bridge + command forwarder.

    Telemetry packets arrive on telemetry_port, are decoded, and each one is
    broadcast as a JSON object on the bridge. JSON messages received from
    bridge clients ({"kind": ..., "payload": ...}) are encoded as operator
    commands and sent to the car's command port.
    """

    def __init__(self, telemetry_port: int, command_host: str, command_port: int,
                 bridge_port: int = 0, host: str = "127.0.0.1"):
        self.commands = CommandSender(command_host, command_port)
        self.bridge = WebSocketBridge(bridge_port, host=host,
                                      on_message=self._on_client_message)
        self.receiver = TelemetryReceiver(telemetry_port, host=host,
                                          on_packet=self._on_packet)
        self.packet_log: list[TelemetrySnapshot] = []

    def start(self) -> "BaseStation":
        self.bridge.start()
        self.receiver.start()
        return self

    def _on_packet(self, snap: TelemetrySnapshot) -> None:
        self.packet_log.append(snap)
        msg = snapshot_to_json_dict(snap)
        msg["gap_count"] = self.receiver.gaps
        self.bridge.broadcast(msg)

    def _on_client_message(self, msg: dict) -> None:
        kind = msg.get("kind")
        if kind in ("set_flag", "set_round_speed", "emergency_stop", "reset_latch"):
            self.commands.send(kind, float(msg.get("payload", 0.0)))

    def stop(self) -> None:
        self.receiver.stop()
        self.bridge.stop()
        self.commands.close()
