"""Message transports: in-process queues between threads, and a socket hub
relaying length-prefixed frames between processes."""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from typing import Dict, List, Optional

from .messages import Message, Tag, decode, encode, normalize, peek_header
from .trace import TraceRecorder


class TransportClosed(RuntimeError):
    pass


class Endpoint:
    """One process' view of the transport. Not thread-safe: each role owns
    its endpoint. Sequence numbers increase per receiver."""

    def __init__(self, pid: int):
        self.pid = pid
        self._seq: Dict[int, int] = defaultdict(int)

    def _next_seq(self, receiver: int) -> int:
        self._seq[receiver] += 1
        return self._seq[receiver]

    def send(self, receiver: int, tag: Tag, **data) -> int:
        msg = Message(Tag(tag), self.pid, int(receiver), self._next_seq(receiver), normalize(Tag(tag), data))
        self._deliver(msg)
        return msg.seq

    def _deliver(self, msg: Message) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> Optional[Message]:
        raise NotImplementedError

    def close(self) -> None:
        pass


# --- in-process ----------------------------------------------------------------


class InProcessTransport:
    """Per-process FIFO queues shared by threads of one interpreter.

    With ``wire_check`` every message is encoded and decoded on the way,
    which exercises the binary format without sockets.
    """

    def __init__(self, num_processes: int, trace: Optional[TraceRecorder] = None, wire_check: bool = False):
        self.queues = [queue.Queue() for _ in range(num_processes)]
        self.trace = trace or TraceRecorder(enabled=False)
        self.wire_check = wire_check

    def endpoint(self, pid: int) -> "InProcessEndpoint":
        return InProcessEndpoint(self, pid)


class InProcessEndpoint(Endpoint):
    def __init__(self, transport: InProcessTransport, pid: int):
        super().__init__(pid)
        self.transport = transport

    def _deliver(self, msg: Message) -> None:
        t = self.transport
        if not 0 <= msg.receiver < len(t.queues):
            raise ValueError(f"no process {msg.receiver}")
        if t.wire_check:
            msg = decode(encode(msg))
        t.trace.record(msg.sender, msg.receiver, msg.tag, msg.seq)
        t.queues[msg.receiver].put(msg)

    def recv(self, timeout: Optional[float] = None) -> Optional[Message]:
        try:
            return self.transport.queues[self.pid].get(timeout=timeout)
        except queue.Empty:
            return None


# --- sockets ---------------------------------------------------------------------

_LEN = struct.Struct("<I")
_HELLO = struct.Struct("<q")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportClosed("connection closed")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    head = _recv_exact(sock, 4)
    (length,) = _LEN.unpack(head)
    return head + _recv_exact(sock, length)


class SocketHub:
    """Relays frames between connected processes and records the trace.

    Each client opens one TCP connection and announces its process id with
    an 8-byte hello. Frames for processes that have not connected yet are
    buffered; frames for processes that already disconnected are dropped.
    """

    def __init__(self, trace: Optional[TraceRecorder] = None, host: str = "127.0.0.1"):
        self.trace = trace or TraceRecorder(enabled=False)
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((host, 0))
        self._srv.listen(128)
        self.address = self._srv.getsockname()
        self._conns: Dict[int, socket.socket] = {}
        self._locks: Dict[int, threading.Lock] = {}
        self._pending: Dict[int, List[bytes]] = defaultdict(list)
        self._closed_pids = set()
        self._lock = threading.Lock()
        self._stop = False
        self._threads: List[threading.Thread] = []
        t = threading.Thread(target=self._accept_loop, name="hub-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self):
        self._srv.settimeout(0.2)
        while not self._stop:
            try:
                conn, _ = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            (pid,) = _HELLO.unpack(_recv_exact(conn, 8))
            with self._lock:
                self._conns[pid] = conn
                self._locks[pid] = threading.Lock()
                backlog = self._pending.pop(pid, [])
            for frame in backlog:
                self._write(pid, frame)
            t = threading.Thread(target=self._read_loop, args=(pid, conn), name=f"hub-{pid}", daemon=True)
            t.start()
            self._threads.append(t)

    def _write(self, pid: int, frame: bytes):
        with self._lock:
            conn = self._conns.get(pid)
            lock = self._locks.get(pid)
            if conn is None:
                if pid not in self._closed_pids:
                    self._pending[pid].append(frame)
                return
        try:
            with lock:
                conn.sendall(frame)
        except OSError:
            pass

    def _read_loop(self, pid: int, conn: socket.socket):
        try:
            while True:
                frame = read_frame(conn)
                tag, seq, sender, receiver = peek_header(frame)
                self.trace.record(sender, receiver, tag, seq)
                self._write(receiver, frame)
        except (TransportClosed, OSError):
            pass
        finally:
            with self._lock:
                self._conns.pop(pid, None)
                self._closed_pids.add(pid)

    def close(self):
        self._stop = True
        try:
            self._srv.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns.values())
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
                c.close()
            except OSError:
                pass


class SocketEndpoint(Endpoint):
    def __init__(self, pid: int, address, connect_timeout: float = 10.0):
        super().__init__(pid)
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                self.sock = socket.create_connection(tuple(address), timeout=connect_timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.sendall(_HELLO.pack(pid))
        self._inbox: "queue.Queue[Optional[Message]]" = queue.Queue()
        self._send_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, name=f"endpoint-{pid}", daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                self._inbox.put(decode(read_frame(self.sock)))
        except (TransportClosed, OSError):
            self._inbox.put(None)

    def _deliver(self, msg: Message) -> None:
        with self._send_lock:
            self.sock.sendall(encode(msg))

    def recv(self, timeout: Optional[float] = None) -> Optional[Message]:
        try:
            msg = self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None
        if msg is None:
            raise TransportClosed("hub connection lost")
        return msg

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
