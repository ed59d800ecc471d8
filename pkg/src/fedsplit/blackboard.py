"""Standalone anonymous forwarder ("black board").

Agents connect over TCP and introduce themselves with a HELLO frame.  Once
the expected number of agents has registered, every DELTA/EPOCH_DONE frame
is stamped with the next value of a single global sequence counter and
fanned out to every agent except its sender, in counter order.  The
service never takes any key material: payloads stay opaque, and the audit
trail records headers only (one line per forwarded frame: seq, epoch,
sender hex, msg_type, payload length).

Flow control is store-and-forward with a bounded per-receiver queue;
when a receiver falls behind, enqueueing blocks, which stops reading from
the sender's socket and backpressures it through TCP.  Frames are never
dropped.

A malformed frame drops only the offending connection.  When a full
cohort has disconnected, the registry resets and a fresh cohort may
connect (the sequence counter keeps increasing across cohorts).
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .federation import (
    MAX_FRAME_SIZE,
    AuditRecord,
    FrameDecodeError,
    GradientFrame,
    MsgType,
    TransportError,
    decode_frame,
    encode_frame,
    read_frame,
)

QUEUE_CAPACITY = 1024


def format_audit_line(rec: AuditRecord) -> str:
    return f"{rec.seq} {rec.epoch} {rec.sender_id.hex()} {rec.msg_type.name} {rec.payload_len}"


@dataclass
class _Connection:
    sender_id: bytes
    sock: socket.socket
    outbox: "queue.Queue[Optional[bytes]]" = field(
        default_factory=lambda: queue.Queue(maxsize=QUEUE_CAPACITY))


class BlackBoard:
    """Threaded TCP forwarder.  ``start()`` serves in the background (used
    by tests and the in-runner transport); ``serve_forever()`` blocks."""

    def __init__(self, host: str, port: int, expected_agents: int,
                 audit_path: str | Path | None = None,
                 byte_sink: Optional[list[bytes]] = None):
        if expected_agents < 2:
            raise ValueError("need at least 2 agents to forward between")
        self.expected_agents = expected_agents
        self.audit: list[AuditRecord] = []
        self._audit_file = open(audit_path, "a", encoding="utf-8") if audit_path else None
        self._byte_sink = byte_sink  # test hook: raw bytes of every ingress frame
        self._lock = threading.Lock()
        self._next_seq = 0
        self._registry: dict[bytes, _Connection] = {}
        self._cohort_served = 0  # agents that registered in the current cohort
        self._cohort_ready = threading.Event()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._listener.getsockname()[:2]
        return host, port

    # ---- lifecycle ----

    def start(self) -> "BlackBoard":
        t = threading.Thread(target=self._accept_loop, name="bb-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            self._stop.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._stop.set()
        with self._lock:
            conns = list(self._registry.values())
        for conn in conns:
            self._drop(conn)
        try:
            self._listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)
        if self._audit_file:
            self._audit_file.close()
            self._audit_file = None

    def __enter__(self) -> "BlackBoard":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # ---- accept/register ----

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._serve_connection, args=(sock,),
                                 name="bb-conn", daemon=True)
            t.start()
            self._threads.append(t)

    def _register(self, hello: GradientFrame, sock: socket.socket) -> Optional[_Connection]:
        with self._lock:
            if (hello.sender_id in self._registry
                    or self._cohort_served >= self.expected_agents):
                return None
            conn = _Connection(hello.sender_id, sock)
            self._registry[hello.sender_id] = conn
            self._cohort_served += 1
            if self._cohort_served == self.expected_agents:
                self._cohort_ready.set()
        writer = threading.Thread(target=self._writer_loop, args=(conn,),
                                  name="bb-writer", daemon=True)
        writer.start()
        self._threads.append(writer)
        return conn

    def _serve_connection(self, sock: socket.socket) -> None:
        conn: Optional[_Connection] = None
        try:
            hello = read_frame(sock, timeout=30.0)
            if hello.msg_type is not MsgType.HELLO:
                sock.close()
                return
            conn = self._register(hello, sock)
            if conn is None:  # duplicate id or cohort already full
                sock.close()
                return
            # hold forwarding until the whole cohort has said HELLO
            while not self._cohort_ready.wait(timeout=0.2):
                if self._stop.is_set():
                    return
            while not self._stop.is_set():
                raw = _read_raw_frame(sock)
                if raw is None:
                    return
                if self._byte_sink is not None:
                    self._byte_sink.append(raw)
                self._forward(decode_frame(raw))
        except (FrameDecodeError, TransportError, OSError):
            pass  # this connection only; the rest keep running
        finally:
            if conn is not None:
                self._drop(conn)
            else:
                try:
                    sock.close()
                except OSError:
                    pass

    # ---- forwarding ----

    def _forward(self, frame: GradientFrame) -> None:
        with self._lock:
            self._next_seq += 1
            stamped = encode_frame(GradientFrame(
                frame.msg_type, frame.sender_id, frame.epoch, self._next_seq,
                frame.layer_id, frame.nonce, frame.ciphertext, frame.version))
            rec = AuditRecord(self._next_seq, frame.epoch, frame.sender_id,
                              frame.msg_type, len(frame.ciphertext))
            self.audit.append(rec)
            if self._audit_file:
                self._audit_file.write(format_audit_line(rec) + "\n")
                self._audit_file.flush()
            receivers = [c for sid, c in self._registry.items() if sid != frame.sender_id]
        for conn in receivers:
            conn.outbox.put(stamped)  # blocks when full: backpressure, no drops

    def _writer_loop(self, conn: _Connection) -> None:
        while True:
            try:
                item = conn.outbox.get(timeout=0.2)
            except queue.Empty:
                if self._stop.is_set():
                    return
                continue
            if item is None:
                return
            try:
                conn.sock.sendall(item)
            except OSError:
                self._drop(conn)
                return

    def _drop(self, conn: _Connection) -> None:
        with self._lock:
            was_registered = self._registry.pop(conn.sender_id, None) is not None
            cohort_over = (was_registered and not self._registry
                           and self._cohort_served >= self.expected_agents)
            if cohort_over:
                self._cohort_served = 0
                self._cohort_ready.clear()
        try:
            conn.outbox.put_nowait(None)
        except queue.Full:
            pass
        try:
            conn.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            conn.sock.close()
        except OSError:
            pass


def _read_raw_frame(sock: socket.socket) -> Optional[bytes]:
    """Read one full length-prefixed frame as raw bytes; None on clean EOF."""
    header = b""
    while len(header) < 4:
        chunk = sock.recv(4 - len(header))
        if not chunk:
            if header:
                raise FrameDecodeError("EOF inside length prefix")
            return None
        header += chunk
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_SIZE:
        raise FrameDecodeError("oversized frame")
    body = b""
    while len(body) < length:
        chunk = sock.recv(length - len(body))
        if not chunk:
            raise FrameDecodeError("EOF inside frame body")
        body += chunk
    return header + body


def serve(bind: tuple[str, int], expected_agents: int,
          audit_path: str | Path | None = None) -> None:
    """Run the forwarder until interrupted."""
    bb = BlackBoard(bind[0], bind[1], expected_agents, audit_path)
    host, port = bb.address
    print(f"blackboard listening on {host}:{port}, "
          f"waiting for {expected_agents} agents", flush=True)
    bb.serve_forever()


def main(argv: list[str] | None = None) -> int:
    """Standalone entry point: blackboard --bind host:port --agents N [--audit path]."""
    import argparse

    parser = argparse.ArgumentParser(prog="blackboard",
                                     description="keyless frame forwarder")
    parser.add_argument("--bind", required=True, metavar="HOST:PORT")
    parser.add_argument("--agents", required=True, type=int)
    parser.add_argument("--audit")
    args = parser.parse_args(argv)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        parser.error(f"--bind expects host:port, got {args.bind!r}")
    serve((host, int(port)), args.agents, args.audit)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
