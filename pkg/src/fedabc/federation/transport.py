"""Message delivery: in-process queues or length-prefixed TCP frames.

The TCP wire format is a 4-byte big-endian length prefix followed by a
UTF-8 JSON body. Both transports deliver messages reliably and in order
per peer; the server never depends on cross-peer arrival order.
"""

from __future__ import annotations

import queue
import socket
import struct

from ..errors import ProtocolError, TransportError
from .messages import WireMessage, message_from_bytes, message_to_bytes

_LEN = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 120.0


class Channel:
    """One bidirectional peer link."""

    def send(self, msg: WireMessage) -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> WireMessage:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessChannel(Channel):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox

    def send(self, msg: WireMessage) -> None:
        self._outbox.put(msg)

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> WireMessage:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty as exc:
            raise TransportError("timed out waiting for a message") from exc


class InProcessTransport:
    """Queue-backed rendezvous between a server and its sites in one process."""

    def __init__(self):
        self._arrivals: queue.Queue = queue.Queue()

    def connect(self) -> Channel:
        """Site side: open a channel to the server."""
        to_server: queue.Queue = queue.Queue()
        to_site: queue.Queue = queue.Queue()
        self._arrivals.put(InProcessChannel(inbox=to_server, outbox=to_site))
        return InProcessChannel(inbox=to_site, outbox=to_server)

    def accept(self, count: int, timeout: float | None = DEFAULT_TIMEOUT) -> list[Channel]:
        """Server side: wait for count site connections."""
        channels = []
        for _ in range(count):
            try:
                channels.append(self._arrivals.get(timeout=timeout))
            except queue.Empty as exc:
                raise TransportError("timed out waiting for site connections") from exc
        return channels


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise TransportError("socket receive timed out") from exc
        except OSError as exc:
            raise TransportError(f"socket receive failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, msg: WireMessage) -> None:
        body = message_to_bytes(msg)
        try:
            self._sock.sendall(_LEN.pack(len(body)) + body)
        except OSError as exc:
            raise TransportError(f"socket send failed: {exc}") from exc

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> WireMessage:
        self._sock.settimeout(timeout)
        header = _recv_exact(self._sock, _LEN.size)
        (length,) = _LEN.unpack(header)
        if length == 0 or length > MAX_FRAME_BYTES:
            raise ProtocolError(f"invalid frame length {length}")
        return message_from_bytes(_recv_exact(self._sock, length))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpListener:
    """Server-side listening socket; port 0 picks an ephemeral port."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self.address = self._sock.getsockname()

    def accept(self, count: int, timeout: float | None = DEFAULT_TIMEOUT) -> list[Channel]:
        self._sock.settimeout(timeout)
        channels = []
        for _ in range(count):
            try:
                conn, _ = self._sock.accept()
            except socket.timeout as exc:
                raise TransportError("timed out waiting for site connections") from exc
            channels.append(TcpChannel(conn))
        return channels

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_connect(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> Channel:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"could not connect to {host}:{port}: {exc}") from exc
    return TcpChannel(sock)
