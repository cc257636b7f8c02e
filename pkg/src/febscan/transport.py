"""Datagram transports carrying wire-protocol frames.

Frames are transport-agnostic: one frame per datagram over UDP, or one
frame per queue entry in-process.  Both ends guarantee frame atomicity;
nothing here guarantees delivery order across message types.
"""

from __future__ import annotations

import socket
from collections import deque

RECV_BUFFER_BYTES = 4 * 1024 * 1024


class TransportError(OSError):
    pass


class UdpTransport:
    """Client side of a UDP frame channel (one frame per datagram)."""

    def __init__(self, host: str, port: int):
        self.addr = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, RECV_BUFFER_BYTES)
        except OSError:
            pass  # stay with the OS default
        self.sock.connect(self.addr)

    def send(self, data: bytes) -> None:
        self.sock.send(data)

    def recv(self, timeout_s: float) -> bytes | None:
        """One datagram, or None on timeout."""
        self.sock.settimeout(timeout_s)
        try:
            return self.sock.recv(65535)
        except socket.timeout:
            return None
        except OSError as e:
            raise TransportError(str(e)) from e

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InMemoryTransport:
    """Directly couples a client to a board emulator in the same process.

    send() runs the emulator handler synchronously and queues its
    responses; recv() pops them.  Lossless by construction.
    """

    def __init__(self, emulator):
        self.emulator = emulator
        self._queue: deque[bytes] = deque()

    def send(self, data: bytes) -> None:
        self._queue.extend(self.emulator.handle_datagram(data))

    def recv(self, timeout_s: float) -> bytes | None:
        if self._queue:
            return self._queue.popleft()
        return None

    def close(self) -> None:
        self._queue.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_hostport(text: str, default_port: int = 0) -> tuple[str, int]:
    """'host:port' -> (host, port); bare 'host' uses the default port."""
    host, sep, port_s = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port_s)
