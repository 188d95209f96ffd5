"""Live tick service.

A fixed-rate loop advances the executor one step per tick and fans
telemetry out to any number of clients; clients enqueue instructions
(text or encoded audio/frames) and flip run-state controls. The wire
protocol is one JSON object per message:

  server -> client   state, queue, event, ack, error
  client -> server   enqueue, control

All inbound handling happens on the tick thread, in arrival order, so a
recorded message log replays to identical state payloads against the
same checkpoint. Outbound buffers are bounded and lossy per client: a
stalled reader drops its oldest telemetry instead of delaying the tick.

The listener speaks newline-delimited JSON over a raw socket and plain
WebSocket on the same port (requests starting with "GET " are upgraded).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import socket
import struct
import threading
import time
from collections import deque
from typing import Optional

import numpy as np

from .env import ArmEnv, EnvConfig
from .instruction import Instruction, InstructionQueue, ParseError, \
    QueueFullError, Source, parse_instruction
from .media import add_audio_noise, corrupt_frames, decode, encode_audio, \
    encode_visual, fuse
from .meta import LiveExecutor, MetaState
from .params import ParamSet

PAUSE_ACTIONS = ("pause", "resume", "reset", "toggle_noise")
CLIENT_BUFFER = 256


def state_message(row: dict) -> dict:
    """Wire form of one telemetry row; also used by offline runners so
    recordings and live broadcasts share one schema."""
    arms = [{"id": i + 1,
             "p": row["pos"][3 * i:3 * i + 3],
             "d": row["dist"][i],
             "phase": row["phase"][i]}
            for i in range(3)]
    return {"type": "state", "tick": row["tick"], "arms": arms,
            "reward": row["reward"], "active_id": row["active"],
            "adapting": row["adapting"]}


class ServiceCore:
    """Transport-free service logic: one tick() per interval, one
    handle() per inbound message. Owns the environment, executor, queue,
    and the noise stream used for corrupt-on-enqueue, so replaying the
    same inbound sequence reproduces the same outbound one.
    """

    def __init__(self, meta: MetaState, env_cfg: Optional[EnvConfig] = None,
                 encoder: Optional[ParamSet] = None, seed: int = 0,
                 tick_hz: float = 20.0, timeout_factor: int = 5,
                 soft_limit: int = 64):
        cfg = env_cfg or EnvConfig()
        self.queue = InstructionQueue(soft_limit)
        self.env = ArmEnv(cfg)
        self.executor = LiveExecutor(meta, self.queue, self.env,
                                     np.random.default_rng([seed, 1]),
                                     timeout_factor)
        self.encoder = encoder
        self.tick_hz = float(tick_hz)
        self.mode = "running"
        self.noise_default = False
        self.noise_rng = np.random.default_rng([seed, 7])
        self._last_pending: Optional[list] = None

    # -- outbound ------------------------------------------------------------

    def _queue_payload(self) -> list[dict]:
        pending, _ = self.queue.snapshot()
        return [{"id": ins.id,
                 "waypoints": [{"arm": w.arm, "slot": w.slot or "?"}
                               for w in ins.waypoints],
                 "source": ins.source.value}
                for ins in pending]

    def tick(self) -> list[dict]:
        """Advance one step when running; returns the broadcast batch.

        A queue message rides along whenever the pending list changed —
        including while paused, so enqueues stay visible without a state
        tick.
        """
        out: list[dict] = []
        if self.mode == "running":
            row, events = self.executor.step()
            out.append(state_message(row))
            out.extend({"type": "event", **ev} for ev in events)
        pending = self._queue_payload()
        if pending != self._last_pending:
            out.append({"type": "queue", "tick": self.executor.tick,
                        "pending": pending})
            self._last_pending = pending
        return out

    def queue_msg(self) -> dict:
        """Current queue snapshot, for clients that just connected."""
        return {"type": "queue", "tick": self.executor.tick,
                "pending": self._queue_payload()}

    # -- inbound -------------------------------------------------------------

    def _decode_modality(self, payload, noisy: bool) -> Instruction:
        if self.encoder is None:
            raise ValueError("no encoder loaded; text enqueue only")
        if not isinstance(payload, dict):
            raise ValueError("modality payload must be an object")
        clip = frames = None
        try:
            if "audio" in payload:
                raw = base64.b64decode(payload["audio"], validate=True)
                clip = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            if "frames" in payload:
                raw = base64.b64decode(payload["frames"], validate=True)
                flat = np.frombuffer(raw, dtype="<f8")
                frames = flat.reshape(-1, 16, 16)
        except (binascii.Error, ValueError, TypeError) as e:
            raise ValueError(f"undecodable modality payload: {e}")
        if clip is None and frames is None:
            raise ValueError("modality payload needs audio or frames")
        if noisy:
            if clip is not None:
                clip = add_audio_noise(clip, self.noise_rng)
            if frames is not None:
                frames = corrupt_frames(frames, self.noise_rng)
        a = encode_audio(clip, self.encoder) if clip is not None else None
        v = encode_visual(frames, self.encoder) if frames is not None else None
        if a is not None and v is not None:
            source = Source.AUDIOVISUAL
        elif a is not None:
            source = Source.AUDIO
        else:
            source = Source.VISUAL
        result = decode(fuse(a, v), self.encoder, source)
        if result.instruction is None:
            raise ValueError(result.error or "decode produced no instruction")
        return result.instruction

    def _handle_enqueue(self, msg: dict, req_id) -> dict:
        noisy = bool(msg.get("noise", self.noise_default))
        if "text" in msg:
            ins = parse_instruction(msg["text"])
        elif "modality" in msg:
            ins = self._decode_modality(msg["modality"], noisy)
        else:
            raise ValueError("enqueue needs text or modality")
        self.queue.enqueue(ins)
        echo = {"id": ins.id, "text": ins.text(),
                "waypoints": [{"arm": w.arm, "slot": w.slot or "?"}
                              for w in ins.waypoints],
                "source": ins.source.value}
        return {"type": "ack", "req_id": req_id, "echo": echo}

    def _handle_control(self, msg: dict, req_id) -> dict:
        action = msg.get("action")
        if action == "pause":
            self.mode = "paused"
        elif action == "resume":
            self.mode = "running"
        elif action == "reset":
            ex = self.executor
            self.env.positions = self.env.homes.copy()
            self.env.set_task(None)
            ex.live = ex.meta.params
            ex.active_id = None
            ex.exec_ticks = 0
        elif action == "toggle_noise":
            self.noise_default = not self.noise_default
        else:
            raise ValueError(f"unknown control action {action!r}")
        echo = {"mode": self.mode, "noise": self.noise_default}
        return {"type": "ack", "req_id": req_id, "echo": echo}

    def handle(self, msg) -> dict:
        """Exactly one ack or error per inbound message."""
        if not isinstance(msg, dict):
            return {"type": "error", "req_id": None,
                    "reason": "message must be a JSON object"}
        req_id = msg.get("req_id")
        try:
            if msg.get("type") == "enqueue":
                return self._handle_enqueue(msg, req_id)
            if msg.get("type") == "control":
                return self._handle_control(msg, req_id)
            raise ValueError(f"unexpected message type {msg.get('type')!r}")
        except (ParseError, QueueFullError, ValueError) as e:
            return {"type": "error", "req_id": req_id, "reason": str(e)}

    def handle_line(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"type": "error", "req_id": None,
                    "reason": f"malformed JSON: {e}"}
        return self.handle(msg)


# -- transport ---------------------------------------------------------------

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    """Single unmasked server frame (FIN set)."""
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def ws_parse_frame(buf: bytes) -> Optional[tuple[int, bool, bytes, int]]:
    """(opcode, fin, payload, consumed) or None while incomplete."""
    if len(buf) < 2:
        return None
    fin = bool(buf[0] & 0x80)
    opcode = buf[0] & 0x0F
    masked = bool(buf[1] & 0x80)
    n = buf[1] & 0x7F
    pos = 2
    if n == 126:
        if len(buf) < pos + 2:
            return None
        n = struct.unpack(">H", buf[pos:pos + 2])[0]
        pos += 2
    elif n == 127:
        if len(buf) < pos + 8:
            return None
        n = struct.unpack(">Q", buf[pos:pos + 8])[0]
        pos += 8
    mask = b""
    if masked:
        if len(buf) < pos + 4:
            return None
        mask = buf[pos:pos + 4]
        pos += 4
    if len(buf) < pos + n:
        return None
    payload = buf[pos:pos + n]
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, fin, payload, pos + n


class _Client:
    """One connection: a reader thread feeding the server mailbox and a
    writer thread draining a bounded lossy queue."""

    def __init__(self, sock: socket.socket, server: "TickServer"):
        self.sock = sock
        self.server = server
        self.websocket = False
        self.alive = True
        self._out: deque[str] = deque(maxlen=CLIENT_BUFFER)
        self._cond = threading.Condition()
        threading.Thread(target=self._read_loop, daemon=True).start()
        threading.Thread(target=self._write_loop, daemon=True).start()

    def send_obj(self, obj: dict) -> None:
        with self._cond:
            self._out.append(json.dumps(obj))
            self._cond.notify()

    def close(self) -> None:
        self.alive = False
        with self._cond:
            self._cond.notify()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _write_loop(self) -> None:
        while True:
            with self._cond:
                while self.alive and not self._out:
                    self._cond.wait()
                if not self.alive:
                    return
                text = self._out.popleft()
            data = ws_frame(text.encode()) if self.websocket \
                else text.encode() + b"\n"
            try:
                self.sock.sendall(data)
            except OSError:
                self.server.drop(self)
                return

    def _read_loop(self) -> None:
        try:
            # listen-only subscribers never send a byte; a short peek
            # window classifies them as plain-stream clients
            self.sock.settimeout(0.25)
            try:
                first = self.sock.recv(4, socket.MSG_PEEK)
            except TimeoutError:
                first = b""
            self.sock.settimeout(None)
            if first.startswith(b"GET "):
                if not self._ws_handshake():
                    self.server.drop(self)
                    return
                self.websocket = True
                self.server.on_ready(self)
                self._ws_read()
            else:
                self.server.on_ready(self)
                self._ndjson_read()
        except OSError:
            pass
        self.server.drop(self)

    def _ndjson_read(self) -> None:
        buf = b""
        while self.alive:
            chunk = self.sock.recv(4096)
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self.server.inbound(self, line.decode("utf-8", "replace"))

    def _ws_handshake(self) -> bool:
        buf = b""
        while b"\r\n\r\n" not in buf:
            chunk = self.sock.recv(4096)
            if not chunk or len(buf) > 1 << 16:
                return False
            buf += chunk
        head, _, rest = buf.partition(b"\r\n\r\n")
        self._ws_buf = rest
        key = None
        for line in head.split(b"\r\n")[1:]:
            name, _, value = line.partition(b":")
            if name.strip().lower() == b"sec-websocket-key":
                key = value.strip().decode()
        if key is None:
            return False
        self.sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + ws_accept_key(key).encode() +
            b"\r\n\r\n")
        return True

    def _ws_read(self) -> None:
        buf = self._ws_buf
        fragments = b""
        while self.alive:
            frame = ws_parse_frame(buf)
            if frame is None:
                chunk = self.sock.recv(4096)
                if not chunk:
                    return
                buf += chunk
                continue
            opcode, fin, payload, used = frame
            buf = buf[used:]
            if opcode == 0x8:                      # close
                try:
                    self.sock.sendall(ws_frame(payload, 0x8))
                except OSError:
                    pass
                return
            if opcode == 0x9:                      # ping
                self.sock.sendall(ws_frame(payload, 0xA))
                continue
            if opcode in (0x0, 0x1, 0x2):
                fragments += payload
                if fin:
                    self.server.inbound(
                        self, fragments.decode("utf-8", "replace"))
                    fragments = b""


class TickServer:
    """Socket shell around ServiceCore.

    The tick thread is the only one touching the core: each interval it
    handles every message that arrived since the previous tick (replies
    go to the sender), then ticks and broadcasts. Reader/writer threads
    per client only move bytes.
    """

    def __init__(self, core: ServiceCore, host: str = "127.0.0.1",
                 port: int = 0):
        self.core = core
        self._mail: deque[tuple[_Client, str]] = deque()
        self._mail_lock = threading.Lock()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener = socket.create_server((host, port))
        self.host = self._listener.getsockname()[0]
        self.port = self._listener.getsockname()[1]
        self._threads = [
            threading.Thread(target=self._accept_loop, daemon=True),
            threading.Thread(target=self._tick_loop, daemon=True),
        ]

    def start(self) -> "TickServer":
        for t in self._threads:
            t.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()

    # callbacks from client threads
    def inbound(self, client: _Client, line: str) -> None:
        with self._mail_lock:
            self._mail.append((client, line))

    def on_ready(self, client: _Client) -> None:
        client.send_obj(self.core.queue_msg())
        with self._clients_lock:
            self._clients.append(client)

    def drop(self, client: _Client) -> None:
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
        client.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            _Client(sock, self)

    def _broadcast(self, msgs: list[dict]) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for msg in msgs:
            for c in clients:
                c.send_obj(msg)

    def _tick_loop(self) -> None:
        interval = 1.0 / self.core.tick_hz
        next_at = time.monotonic()
        while not self._stop.is_set():
            with self._mail_lock:
                batch = list(self._mail)
                self._mail.clear()
            for client, line in batch:
                client.send_obj(self.core.handle_line(line))
            self._broadcast(self.core.tick())
            next_at += interval
            delay = next_at - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_at = time.monotonic()   # adaptation overran; no backlog


def serve(core: ServiceCore, host: str = "127.0.0.1",
          port: int = 0) -> TickServer:
    return TickServer(core, host, port).start()
