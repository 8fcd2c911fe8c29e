"""Message channels between the plant, edge and cloud.

All channels carry whole packets. The TCP channel adds a u32 length prefix
per packet and moves bytes on background threads so that :meth:`send` never
blocks the caller; a full outbox drops its oldest message.
"""

from __future__ import annotations

import socket
import threading
from collections import deque
from collections.abc import Callable

from .codec import BufferPacket, FrameDecoder, encode_buffer_packet, frame

__all__ = [
    "BoundedOutbox",
    "EchoServer",
    "LocalChannel",
    "TcpChannel",
    "connect",
    "listen",
    "ship_transition",
]


class BoundedOutbox:
    """Drop-oldest FIFO. ``put`` and ``get`` are safe across two threads."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._q: deque[bytes] = deque()
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self.dropped = 0
        self.enqueued = 0

    def put(self, item: bytes) -> bool:
        """Enqueue; returns ``False`` if an older item had to be dropped."""
        with self._lock:
            dropped = len(self._q) >= self.capacity
            if dropped:
                self._q.popleft()
                self.dropped += 1
            self._q.append(item)
            self.enqueued += 1
            self._ready.notify()
        return not dropped

    def get(self, timeout: float | None = None) -> bytes | None:
        with self._lock:
            if not self._q and not self._ready.wait_for(lambda: bool(self._q), timeout):
                return None
            return self._q.popleft()

    def drain(self) -> list[bytes]:
        with self._lock:
            items = list(self._q)
            self._q.clear()
        return items

    def __len__(self) -> int:
        return len(self._q)


class LocalChannel:
    """In-process channel: ``send`` appends to a bounded outbox, ``poll`` drains it."""

    def __init__(self, capacity: int = 64):
        self.outbox = BoundedOutbox(capacity)
        self.bytes_sent = 0
        self.closed = False

    def send(self, payload: bytes) -> int:
        self.outbox.put(payload)
        self.bytes_sent += len(payload)
        return len(payload)

    def poll(self) -> list[bytes]:
        return self.outbox.drain()

    @property
    def dropped(self) -> int:
        return self.outbox.dropped

    def close(self) -> None:
        self.closed = True


class TcpChannel:
    """Length-prefixed packets over a connected socket.

    A writer thread drains the outbox onto the socket and a reader thread
    splits incoming bytes into packets, handing each to ``on_message`` (or
    queuing it for :meth:`poll`). Socket errors mark the channel closed; the
    owner keeps running.
    """

    def __init__(
        self,
        sock: socket.socket,
        capacity: int = 64,
        on_message: Callable[[bytes], None] | None = None,
        name: str = "channel",
    ):
        self.sock = sock
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        self.outbox = BoundedOutbox(capacity)
        self.inbox: deque[bytes] = deque()
        self.on_message = on_message
        self.bytes_sent = 0
        self.closed = threading.Event()
        self._writer = threading.Thread(target=self._write_loop, name=f"{name}-tx", daemon=True)
        self._reader = threading.Thread(target=self._read_loop, name=f"{name}-rx", daemon=True)
        self._writer.start()
        self._reader.start()

    @property
    def dropped(self) -> int:
        return self.outbox.dropped

    def send(self, payload: bytes) -> int:
        if self.closed.is_set():
            return 0
        self.outbox.put(frame(payload))
        self.bytes_sent += len(payload)
        return len(payload)

    def poll(self) -> list[bytes]:
        out = []
        while True:
            try:
                out.append(self.inbox.popleft())
            except IndexError:
                return out

    def _write_loop(self) -> None:
        while not self.closed.is_set():
            item = self.outbox.get(timeout=0.1)
            if item is None:
                continue
            try:
                self.sock.sendall(item)
            except OSError:
                self.closed.set()

    def _read_loop(self) -> None:
        decoder = FrameDecoder()
        while not self.closed.is_set():
            try:
                chunk = self.sock.recv(1 << 16)
            except OSError:
                break
            if not chunk:
                break
            try:
                messages = decoder.feed(chunk)
            except ValueError:
                break
            for msg in messages:
                if self.on_message is not None:
                    self.on_message(msg)
                else:
                    self.inbox.append(msg)
        self.closed.set()

    def flush(self, timeout: float = 2.0) -> bool:
        """Wait until the outbox is empty (best effort)."""
        deadline = threading.Event()
        waited = 0.0
        while len(self.outbox) and waited < timeout and not self.closed.is_set():
            deadline.wait(0.005)
            waited += 0.005
        return not len(self.outbox)

    def close(self) -> None:
        self.closed.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(host: str, port: int, timeout: float = 5.0, **kwargs) -> TcpChannel:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return TcpChannel(sock, **kwargs)


def listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen()
    return srv


class EchoServer:
    """Loopback server that returns every framed packet to its sender."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._srv = listen(host, port)
        self.address = self._srv.getsockname()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        try:
            conn, _ = self._srv.accept()
        except OSError:
            return
        with conn:
            while True:
                try:
                    data = conn.recv(1 << 16)
                except OSError:
                    return
                if not data:
                    return
                conn.sendall(data)

    def close(self) -> None:
        self._srv.close()


def ship_transition(batch, channel, step: int = 0, echoes=()) -> int:
    """Encode ``batch`` as a buffer packet and hand it to ``channel``; returns bytes queued."""
    payload = encode_buffer_packet(BufferPacket(step, list(batch), list(echoes)))
    return channel.send(payload)
