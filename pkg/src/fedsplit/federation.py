"""Encrypted exchange of global-layer weight deltas between agents.

Wire frame (all integers little-endian):

    u32  total length of everything after this field
    u8   version (=1)
    u8   msg_type (0=HELLO, 1=DELTA, 2=EPOCH_DONE)
    16B  sender_id
    u32  epoch
    u64  seq            (0 on send; the forwarder fills it in)
    u16  layer_id length + utf-8 bytes
    u16  nonce length + bytes
    rest ciphertext||tag

Payloads are sealed with ChaCha20-Poly1305 under a key shared by the
agents and never given to the forwarder; the header fields except seq are
bound as associated data, so header tampering also fails authentication
(seq is excluded because the forwarder assigns it in flight).  A DELTA
payload is the serialized global-layer delta: u32 rows, u32 cols,
rows*cols float64 weights (row-major), u32 bias length, bias float64s.
HELLO frames are empty and unencrypted (they only announce the sender to
the forwarder); EPOCH_DONE seals an empty payload so epoch barriers are
authenticated too.

Delivery contract relied on throughout: each receiver sees frames in
strictly increasing seq order, never its own frames, and a frame is
processed only once fully read (no partial application).
"""

from __future__ import annotations

import hashlib
import os
import select
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Optional, Protocol

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .dqn import Agent
from .envs import EnvConfig
from .nn import LayerDelta, SplitModel

FRAME_VERSION = 1
SENDER_ID_SIZE = 16
KEY_SIZE = 32
NONCE_SIZE = 12
MAX_FRAME_SIZE = 16 * 1024 * 1024


class MsgType(IntEnum):
    HELLO = 0
    DELTA = 1
    EPOCH_DONE = 2


class FederationError(Exception):
    pass


class FrameDecodeError(FederationError):
    """Malformed bytes: framing, header, or payload structure."""


class AuthenticationError(FederationError):
    """AEAD tag rejected the frame."""


class ProtocolViolation(FederationError):
    """Well-formed frame that breaks the protocol (shape/scope/order)."""


class TransportError(FederationError):
    """Transport failure; the epoch can be retried after reconnecting."""


@dataclass
class GradientFrame:
    msg_type: MsgType
    sender_id: bytes
    epoch: int
    seq: int = 0
    layer_id: str = ""
    nonce: bytes = b""
    ciphertext: bytes = b""
    version: int = FRAME_VERSION


@dataclass(frozen=True)
class AuditRecord:
    """Header-only record a forwarder keeps per frame it sequences."""
    seq: int
    epoch: int
    sender_id: bytes
    msg_type: MsgType
    payload_len: int


def agent_sender_id(name: str) -> bytes:
    """Stable 16-byte wire id for an agent name."""
    return hashlib.blake2b(name.encode("utf-8"), digest_size=SENDER_ID_SIZE).digest()


# --------------------------------------------------------------------------
# frame codec
# --------------------------------------------------------------------------

def encode_frame(frame: GradientFrame) -> bytes:
    sender = frame.sender_id
    if len(sender) != SENDER_ID_SIZE:
        raise ValueError(f"sender_id must be {SENDER_ID_SIZE} bytes")
    layer_raw = frame.layer_id.encode("utf-8")
    body = struct.pack("<BB", frame.version, int(frame.msg_type))
    body += sender
    body += struct.pack("<IQ", frame.epoch, frame.seq)
    body += struct.pack("<H", len(layer_raw)) + layer_raw
    body += struct.pack("<H", len(frame.nonce)) + frame.nonce
    body += frame.ciphertext
    return struct.pack("<I", len(body)) + body


def decode_frame_body(body: bytes) -> GradientFrame:
    try:
        if len(body) < 2 + SENDER_ID_SIZE + 4 + 8 + 2:
            raise FrameDecodeError("frame body too short")
        version, msg_type_b = struct.unpack_from("<BB", body, 0)
        if version != FRAME_VERSION:
            raise FrameDecodeError(f"unsupported frame version {version}")
        try:
            msg_type = MsgType(msg_type_b)
        except ValueError:
            raise FrameDecodeError(f"unknown msg_type {msg_type_b}") from None
        off = 2
        sender = body[off:off + SENDER_ID_SIZE]
        off += SENDER_ID_SIZE
        epoch, seq = struct.unpack_from("<IQ", body, off)
        off += 12
        (layer_len,) = struct.unpack_from("<H", body, off)
        off += 2
        if off + layer_len + 2 > len(body):
            raise FrameDecodeError("truncated layer_id")
        layer_id = body[off:off + layer_len].decode("utf-8")
        off += layer_len
        (nonce_len,) = struct.unpack_from("<H", body, off)
        off += 2
        if off + nonce_len > len(body):
            raise FrameDecodeError("truncated nonce")
        nonce = body[off:off + nonce_len]
        off += nonce_len
        ciphertext = body[off:]
    except struct.error as exc:
        raise FrameDecodeError(str(exc)) from None
    return GradientFrame(msg_type, sender, epoch, seq, layer_id, nonce, ciphertext, version)


def decode_frame(data: bytes) -> GradientFrame:
    """Decode a complete length-prefixed frame."""
    if len(data) < 4:
        raise FrameDecodeError("missing length prefix")
    (length,) = struct.unpack_from("<I", data, 0)
    if length != len(data) - 4:
        raise FrameDecodeError(f"length prefix {length} does not match body {len(data) - 4}")
    return decode_frame_body(data[4:])


# --------------------------------------------------------------------------
# sealed payloads
# --------------------------------------------------------------------------

def serialize_delta(delta: LayerDelta) -> bytes:
    w = np.ascontiguousarray(delta.weights, dtype=np.float64)
    b = np.ascontiguousarray(delta.bias, dtype=np.float64)
    if w.ndim != 2 or b.ndim != 1:
        raise ValueError("delta must carry a 2-D weight array and 1-D bias")
    return (struct.pack("<II", w.shape[0], w.shape[1]) + w.astype("<f8").tobytes()
            + struct.pack("<I", b.shape[0]) + b.astype("<f8").tobytes())


def deserialize_delta(payload: bytes, layer_id: str) -> LayerDelta:
    try:
        rows, cols = struct.unpack_from("<II", payload, 0)
        off = 8
        need = 8 * rows * cols
        if off + need + 4 > len(payload):
            raise FrameDecodeError("truncated delta weights")
        w = np.frombuffer(payload, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += need
        (blen,) = struct.unpack_from("<I", payload, off)
        off += 4
        if off + 8 * blen != len(payload):
            raise FrameDecodeError("bad delta bias length")
        b = np.frombuffer(payload, dtype="<f8", count=blen, offset=off)
    except struct.error as exc:
        raise FrameDecodeError(str(exc)) from None
    return LayerDelta(layer_id, w.copy(), b.copy())


def _aad(msg_type: MsgType, sender_id: bytes, epoch: int, layer_id: str) -> bytes:
    layer_raw = layer_id.encode("utf-8")
    return (struct.pack("<BB", FRAME_VERSION, int(msg_type)) + sender_id
            + struct.pack("<I", epoch) + struct.pack("<H", len(layer_raw)) + layer_raw)


def seal_payload(payload: bytes, key: bytes, epoch: int, sender_id: bytes,
                 msg_type: MsgType, layer_id: str = "",
                 nonce: Optional[bytes] = None) -> GradientFrame:
    """Authenticated encryption of ``payload`` into a frame. A fresh random
    nonce is drawn unless one is supplied (fixed nonces are for golden-vector
    generation only; never reuse a nonce under one key)."""
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes")
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    ct = ChaCha20Poly1305(key).encrypt(nonce, payload,
                                       _aad(msg_type, sender_id, epoch, layer_id))
    return GradientFrame(msg_type, sender_id, epoch, 0, layer_id, nonce, ct)


def seal(delta: LayerDelta, key: bytes, epoch: int, sender_id: bytes,
         nonce: Optional[bytes] = None) -> GradientFrame:
    """Seal a global-layer delta into a DELTA frame."""
    return seal_payload(serialize_delta(delta), key, epoch, sender_id,
                        MsgType.DELTA, delta.layer_id, nonce)


def open_payload(frame: GradientFrame, key: bytes) -> bytes:
    try:
        return ChaCha20Poly1305(key).decrypt(
            frame.nonce, frame.ciphertext,
            _aad(frame.msg_type, frame.sender_id, frame.epoch, frame.layer_id))
    except InvalidTag:
        raise AuthenticationError("frame failed authentication") from None
    except ValueError as exc:  # e.g. bad nonce size
        raise AuthenticationError(str(exc)) from None


def open_delta(frame: GradientFrame, key: bytes) -> LayerDelta:
    """Authenticate and decrypt a DELTA frame back into the exact delta."""
    if frame.msg_type is not MsgType.DELTA:
        raise ProtocolViolation(f"expected DELTA frame, got {frame.msg_type.name}")
    return deserialize_delta(open_payload(frame, key), frame.layer_id)


def apply_remote(model: SplitModel, delta: LayerDelta) -> None:
    """Add a broadcast delta onto this model's GLOBAL layer, elementwise."""
    gl = model.global_layer()
    if delta.layer_id != gl.layer_id:
        raise ProtocolViolation(f"delta targets layer {delta.layer_id!r}, "
                                f"global layer is {gl.layer_id!r}")
    if delta.weights.shape != gl.weights.shape or delta.bias.shape != gl.bias.shape:
        raise ProtocolViolation("delta shape does not match the global layer")
    gl.weights += delta.weights
    gl.bias += delta.bias


# --------------------------------------------------------------------------
# transports
# --------------------------------------------------------------------------

class Transport(Protocol):
    agent_id: bytes

    def send(self, frame: GradientFrame) -> None: ...

    def poll(self) -> Optional[GradientFrame]: ...

    def recv(self, timeout: float) -> GradientFrame: ...

    def close(self) -> None: ...


class InProcessBus:
    """In-memory forwarder with the same contract as the networked service:
    one global sequence counter, fan-out to every non-sender, header audit."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._next_seq = 0
        self._queues: dict[bytes, deque[GradientFrame]] = {}
        self.audit: list[AuditRecord] = []

    def attach(self, agent_id: bytes) -> "InProcessTransport":
        with self._lock:
            if agent_id in self._queues:
                raise ProtocolViolation(f"duplicate agent id {agent_id.hex()}")
            self._queues[agent_id] = deque()
        return InProcessTransport(self, agent_id)

    def broadcast(self, frame: GradientFrame) -> None:
        with self._lock:
            if frame.sender_id not in self._queues:
                raise ProtocolViolation("unknown sender")
            self._next_seq += 1
            stamped = replace(frame, seq=self._next_seq)
            self.audit.append(AuditRecord(stamped.seq, stamped.epoch, stamped.sender_id,
                                          stamped.msg_type, len(stamped.ciphertext)))
            for agent_id, queue in self._queues.items():
                if agent_id != frame.sender_id:
                    queue.append(stamped)

    def pop(self, agent_id: bytes) -> Optional[GradientFrame]:
        with self._lock:
            queue = self._queues[agent_id]
            return queue.popleft() if queue else None


@dataclass
class InProcessTransport:
    bus: InProcessBus
    agent_id: bytes

    def send(self, frame: GradientFrame) -> None:
        self.bus.broadcast(frame)

    def poll(self) -> Optional[GradientFrame]:
        return self.bus.pop(self.agent_id)

    def recv(self, timeout: float) -> GradientFrame:
        # single-process lock-step schedule: anything due is already queued
        frame = self.poll()
        if frame is None:
            raise TransportError("no frame available within timeout")
        return frame

    def close(self) -> None:
        pass


def read_exact(sock: socket.socket, n: int, deadline: Optional[float]) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        if deadline is not None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timed out reading frame")
            ready, _, _ = select.select([sock], [], [], remaining)
            if not ready:
                raise TransportError("timed out reading frame")
        try:
            chunk = sock.recv(n - len(buf))
        except OSError as exc:
            raise TransportError(f"socket error: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket, timeout: Optional[float] = None) -> GradientFrame:
    """Read one length-prefixed frame from a blocking socket."""
    deadline = None if timeout is None else time.monotonic() + timeout
    (length,) = struct.unpack("<I", read_exact(sock, 4, deadline))
    if length > MAX_FRAME_SIZE:
        raise FrameDecodeError(f"frame of {length} bytes exceeds limit")
    return decode_frame_body(read_exact(sock, length, deadline))


class NetworkTransport:
    """TCP client of the forwarder service; sends HELLO on connect."""

    def __init__(self, address: tuple[str, int], agent_id: bytes,
                 connect_timeout: float = 10.0):
        self.agent_id = agent_id
        try:
            self._sock = socket.create_connection(address, timeout=connect_timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach forwarder at {address}: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.send(GradientFrame(MsgType.HELLO, agent_id, 0))

    def send(self, frame: GradientFrame) -> None:
        try:
            self._sock.sendall(encode_frame(frame))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self, timeout: float) -> GradientFrame:
        return read_frame(self._sock, timeout)

    def poll(self) -> Optional[GradientFrame]:
        ready, _, _ = select.select([self._sock], [], [], 0)
        if not ready:
            return None
        return read_frame(self._sock, timeout=1.0)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# --------------------------------------------------------------------------
# session + epoch schedule
# --------------------------------------------------------------------------

@dataclass
class AppliedRecord:
    seq: int
    epoch: int
    sender_id: bytes
    msg_type: MsgType


@dataclass
class FederationSession:
    """One agent's view of the exchange: dedup/ordering state plus the
    shared key. The forwarder never holds the key."""
    agent_id: bytes
    key: bytes
    transport: Transport
    n_peers: int
    global_layer_id: str
    last_applied_seq: int = 0
    applied_log: list[AppliedRecord] = field(default_factory=list)
    _deltas_applied: dict[int, int] = field(default_factory=dict)
    _done_from: dict[int, set[bytes]] = field(default_factory=dict)

    def broadcast_delta(self, delta: LayerDelta, epoch: int) -> None:
        if delta.layer_id != self.global_layer_id:
            raise ProtocolViolation(
                f"refusing to export non-global layer {delta.layer_id!r}")
        self.transport.send(seal(delta, self.key, epoch, self.agent_id))

    def broadcast_epoch_done(self, epoch: int) -> None:
        self.transport.send(seal_payload(b"", self.key, epoch, self.agent_id,
                                         MsgType.EPOCH_DONE))

    def _handle(self, frame: GradientFrame, model: SplitModel) -> None:
        if frame.sender_id == self.agent_id:
            raise ProtocolViolation("received own frame back from forwarder")
        if frame.seq <= self.last_applied_seq:
            raise ProtocolViolation(
                f"seq went backwards: {frame.seq} after {self.last_applied_seq}")
        if frame.msg_type is MsgType.DELTA:
            if frame.layer_id != self.global_layer_id:
                raise ProtocolViolation(
                    f"DELTA for unexpected layer {frame.layer_id!r}")
            apply_remote(model, open_delta(frame, self.key))
            self._deltas_applied[frame.epoch] = self._deltas_applied.get(frame.epoch, 0) + 1
        elif frame.msg_type is MsgType.EPOCH_DONE:
            open_payload(frame, self.key)  # authenticate the barrier marker
            self._done_from.setdefault(frame.epoch, set()).add(frame.sender_id)
        else:
            raise ProtocolViolation(f"unexpected {frame.msg_type.name} frame")
        self.last_applied_seq = frame.seq
        self.applied_log.append(AppliedRecord(frame.seq, frame.epoch,
                                              frame.sender_id, frame.msg_type))

    def drain(self, model: SplitModel) -> int:
        """Apply whatever already arrived; returns the number of frames."""
        count = 0
        while (frame := self.transport.poll()) is not None:
            self._handle(frame, model)
            count += 1
        return count

    def deltas_applied(self, epoch: int) -> int:
        return self._deltas_applied.get(epoch, 0)

    def await_deltas(self, model: SplitModel, epoch: int, expected: int,
                     timeout: float) -> None:
        """Block until ``expected`` DELTA frames of this epoch are applied."""
        deadline = time.monotonic() + timeout
        while self.deltas_applied(epoch) < expected:
            self._handle(self.transport.recv(max(0.0, deadline - time.monotonic())), model)

    def await_epoch_done(self, model: SplitModel, epoch: int, timeout: float) -> None:
        """Block until every peer's EPOCH_DONE for this epoch has arrived
        (in-order delivery guarantees their deltas were applied first)."""
        deadline = time.monotonic() + timeout
        while len(self._done_from.get(epoch, ())) < self.n_peers:
            self._handle(self.transport.recv(max(0.0, deadline - time.monotonic())), model)


@dataclass
class FederatedAgent:
    agent: Agent
    session: FederationSession
    env_config: EnvConfig


def run_epoch(members: list[FederatedAgent], epoch: int,
              env_seed_fn: Callable[[str, int], int],
              timeout: float = 60.0) -> list[float]:
    """One full round of the lock-step schedule over ``members`` (already in
    turn order): every agent plays one episode, then every agent trains
    offline and broadcasts its sealed global-layer delta, each later agent
    applying its predecessors' deltas before its own training.  The epoch
    ends with a barrier after which all global layers are bit-identical.

    A TransportError aborts the epoch; no partial delta is ever applied, so
    the caller may reconnect and retry the epoch.
    """
    returns: list[float] = []
    for member in members:
        member.session.drain(member.agent.model)
        _, episode_return = member.agent.rollout(
            member.env_config, env_seed_fn(member.agent.name, epoch))
        returns.append(episode_return)
    for position, member in enumerate(members):
        member.session.await_deltas(member.agent.model, epoch, position, timeout)
        delta = member.agent.train_offline()
        member.session.broadcast_delta(delta, epoch)
        member.session.broadcast_epoch_done(epoch)
    for member in members:
        member.session.await_epoch_done(member.agent.model, epoch, timeout)
    return returns
