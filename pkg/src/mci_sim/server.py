"""Network service hosting sessions.

One listening port, two transports: a newline-delimited JSON stream (CLI,
tests, scripted clients) and RFC 6455 WebSocket (the browser console).
The first line of a connection is sniffed: an HTTP GET request upgrades to
WebSocket, anything else is treated as the first NDJSON message. Both carry
the same envelope:

    {"v": 1, "type": ..., "session": ..., "sender": ..., "seq": ...,
     "ts_ms": ..., "payload": {...}}

Every session is a single-writer state machine: commands are applied under
a per-session lock in arrival order, the resulting events are appended to
the session's log and fanned out to recipients. Slow consumers are cut off
("lagged") after a 1000-message backlog and can resync from the log with
subscribe{from_seq}.
"""
from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import logging
import os
import time
from pathlib import Path

from . import telemetry
from .errors import (
    ClockError,
    ClosedLogError,
    FormatError,
    GenerationError,
    IntegrityError,
    LayoutError,
    LogError,
    NotFoundError,
    OutOfRangeError,
    PhaseError,
    ProtocolError,
    ReferentialError,
    RoleError,
    SessionExpiredError,
    SimError,
)
from .model import MasterCaseList, TriageCategory
from .scenario import Pose, scenario_from_dict
from .session import (
    Channel,
    Detection,
    FacilitatorPrompt,
    HoldSummary,
    Phase,
    Query,
    Role,
    Sensor,
    Session,
    SessionConfig,
    StreamStarted,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7440
PORT_ENV_VAR = "MCI_SIM_PORT"
SEND_QUEUE_LIMIT = 1000
TICK_INTERVAL_MS = 100

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_ERROR_CODES = {
    FormatError: "format",
    GenerationError: "generation",
    LayoutError: "layout",
    NotFoundError: "not_found",
    ReferentialError: "referential",
    RoleError: "role",
    PhaseError: "phase",
    SessionExpiredError: "session_expired",
    OutOfRangeError: "out_of_range",
    ProtocolError: "protocol",
    ClockError: "clock",
    ClosedLogError: "log_closed",
    LogError: "log",
    IntegrityError: "integrity",
}


def error_code(exc: Exception) -> str:
    for klass, code in _ERROR_CODES.items():
        if isinstance(exc, klass):
            return code
    return "internal"


def default_port() -> int:
    raw = os.environ.get(PORT_ENV_VAR)
    if raw is None:
        return DEFAULT_PORT
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{PORT_ENV_VAR}={raw!r} is not a port number") from None


def monotonic_ms() -> int:
    return time.monotonic_ns() // 1_000_000


# --- WebSocket plumbing (server side of RFC 6455, text frames only) -----------


def ws_accept_value(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def ws_encode_frame(payload: bytes, opcode: int) -> bytes:
    header = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 65536:
        header.append(126)
        header += n.to_bytes(2, "big")
    else:
        header.append(127)
        header += n.to_bytes(8, "big")
    return bytes(header) + payload


async def ws_read_frame(reader: asyncio.StreamReader) -> tuple[int, bool, bytes]:
    head = await reader.readexactly(2)
    fin = bool(head[0] & 0x80)
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        length = int.from_bytes(await reader.readexactly(2), "big")
    elif length == 127:
        length = int.from_bytes(await reader.readexactly(8), "big")
    mask = await reader.readexactly(4) if masked else b""
    payload = await reader.readexactly(length) if length else b""
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, fin, payload


class WsTransport:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._reader = reader
        self._writer = writer

    async def handshake(self, request_line: str) -> bool:
        headers = {}
        while True:
            line = (await self._reader.readline()).decode("latin-1").rstrip("\r\n")
            if not line:
                break
            name, _, value = line.partition(":")
            headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if "websocket" not in headers.get("upgrade", "").lower() or not key:
            self._writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            await self._writer.drain()
            return False
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {ws_accept_value(key)}\r\n"
            "\r\n"
        )
        self._writer.write(response.encode("ascii"))
        await self._writer.drain()
        return True

    async def recv(self) -> str | None:
        buffer = b""
        while True:
            try:
                opcode, fin, payload = await ws_read_frame(self._reader)
            except (asyncio.IncompleteReadError, ConnectionError):
                return None
            if opcode == 0x8:  # close
                try:
                    self._writer.write(ws_encode_frame(payload[:2], 0x8))
                    await self._writer.drain()
                except (ConnectionError, RuntimeError):
                    pass
                return None
            if opcode == 0x9:  # ping
                self._writer.write(ws_encode_frame(payload, 0xA))
                await self._writer.drain()
                continue
            if opcode == 0xA:  # pong
                continue
            buffer += payload
            if fin:
                return buffer.decode("utf-8", errors="replace")

    async def send(self, text: str) -> None:
        self._writer.write(ws_encode_frame(text.encode("utf-8"), 0x1))
        await self._writer.drain()

    async def close(self, reason: str = "") -> None:
        try:
            body = b"\x03\xe8" + reason.encode("utf-8")[:123]  # 1000 normal closure
            self._writer.write(ws_encode_frame(body, 0x8))
            await self._writer.drain()
        except (ConnectionError, RuntimeError):
            pass
        self._writer.close()


class LineTransport:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 first_line: str | None):
        self._reader = reader
        self._writer = writer
        self._first_line = first_line

    async def recv(self) -> str | None:
        if self._first_line is not None:
            line, self._first_line = self._first_line, None
            return line
        raw = await self._reader.readline()
        if not raw:
            return None
        return raw.decode("utf-8", errors="replace").rstrip("\r\n")

    async def send(self, text: str) -> None:
        self._writer.write(text.encode("utf-8") + b"\n")
        await self._writer.drain()

    async def close(self, reason: str = "") -> None:
        if reason:
            try:
                await self.send(json.dumps({"type": "closing", "reason": reason}))
            except (ConnectionError, RuntimeError):
                pass
        self._writer.close()


class Connection:
    def __init__(self, transport):
        self.transport = transport
        self.client_id: str | None = None
        self.role_intent: str | None = None
        self.session_id: str | None = None
        self.subscribed_from: int | None = None
        self.lagged = False
        self.out_seq = 0
        self._queue: asyncio.Queue = asyncio.Queue(maxsize=SEND_QUEUE_LIMIT)
        self._sender_task: asyncio.Task | None = None

    def start_sender(self) -> None:
        self._sender_task = asyncio.get_running_loop().create_task(self._sender())

    async def _sender(self) -> None:
        while True:
            item = await self._queue.get()
            if item is None:
                try:
                    await self.transport.close("lagged" if self.lagged else "")
                except (ConnectionError, RuntimeError, OSError):
                    pass
                return
            try:
                await self.transport.send(item)
            except (ConnectionError, RuntimeError, OSError):
                return

    def send_message(self, type_: str, session: str | None, payload: dict) -> None:
        """Enqueues one envelope; marks the connection lagged when the
        backlog exceeds the limit instead of blocking the session writer."""
        if self.lagged:
            return
        envelope = {
            "v": PROTOCOL_VERSION,
            "type": type_,
            "session": session,
            "sender": "server",
            "seq": self.out_seq,
            "ts_ms": monotonic_ms(),
            "payload": payload,
        }
        self.out_seq += 1
        try:
            self._queue.put_nowait(json.dumps(envelope, separators=(",", ":")))
        except asyncio.QueueFull:
            self.lagged = True
            while True:  # drop the backlog so the close sentinel goes through
                try:
                    self._queue.get_nowait()
                except asyncio.QueueEmpty:
                    break
            self._queue.put_nowait(None)

    async def shutdown(self) -> None:
        if self._sender_task and not self._sender_task.done():
            try:
                self._queue.put_nowait(None)
            except asyncio.QueueFull:
                self._sender_task.cancel()
            await asyncio.gather(self._sender_task, return_exceptions=True)


class SessionHost:
    """One live session plus its connections and tick driver."""

    def __init__(self, session: Session, log_path: Path):
        self.session = session
        self.log_path = log_path
        self.lock = asyncio.Lock()
        self.connections: dict[str, Connection] = {}
        self.driver: asyncio.Task | None = None

    def participant_role(self, client_id: str) -> Role | None:
        return self.session.participants.get(client_id)

    def route_events(self, events: list[telemetry.SessionEvent]) -> None:
        """Fan out: state changes to everyone, cross-check mismatches to
        facilitators, the rest to the acting responder; subscribers see all."""
        for event in events:
            payload = {
                "seq": event.seq,
                "ts_ms": event.ts_ms,
                "kind": event.kind,
                "responder_id": event.responder_id,
                "instance_id": event.instance_id,
                "payload": event.payload,
            }
            for conn in list(self.connections.values()):
                if conn.client_id is None:
                    continue
                subscribed = (
                    conn.subscribed_from is not None
                    and event.seq >= conn.subscribed_from
                )
                if event.kind in telemetry.STATE_KINDS:
                    deliver = True
                elif event.kind == telemetry.CROSS_CHECK_MISMATCH:
                    deliver = self.participant_role(conn.client_id) is Role.FACILITATOR
                else:
                    deliver = conn.client_id == event.responder_id
                if deliver or subscribed:
                    conn.send_message("event", self.session.session_id, payload)

    def notify_prompt(self, prompt: FacilitatorPrompt, ts_ms: int) -> None:
        for conn in self.connections.values():
            if self.participant_role(conn.client_id) is Role.FACILITATOR:
                conn.send_message(
                    "prompt",
                    self.session.session_id,
                    {
                        "instance_id": prompt.instance_id,
                        "channel": prompt.channel.value,
                        "ts_ms": ts_ms,
                    },
                )

    def broadcast_clock(self) -> None:
        for conn in self.connections.values():
            conn.send_message(
                "clock",
                self.session.session_id,
                {"clock_ms": self.session.clock_ms, "phase": self.session.phase.value},
            )


class MciServer:
    def __init__(
        self,
        case_list: MasterCaseList,
        log_dir: str | Path,
        clock=monotonic_ms,
        tick_interval_ms: int = TICK_INTERVAL_MS,
    ):
        self.case_list = case_list
        self.log_dir = Path(log_dir)
        self.clock = clock
        self.tick_interval_ms = tick_interval_ms
        self.hosts: dict[str, SessionHost] = {}
        self._client_counter = 0
        self._session_counter = 0
        self._server: asyncio.Server | None = None
        self.port: int | None = None

    # -- lifecycle ---------------------------------------------------------------

    async def start(self, host: str = "0.0.0.0", port: int = DEFAULT_PORT) -> None:
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self._server = await asyncio.start_server(self._handle_connection, host, port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def serve_forever(self) -> None:
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for host in self.hosts.values():
            if host.driver is not None:
                host.driver.cancel()
            host.session.log.close()
            for conn in list(host.connections.values()):
                await conn.shutdown()

    # -- connection handling --------------------------------------------------------

    async def _handle_connection(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            raw = await reader.readline()
        except ConnectionError:
            writer.close()
            return
        if not raw:
            writer.close()
            return
        first_line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
        if first_line.startswith("GET "):
            transport = WsTransport(reader, writer)
            if not await transport.handshake(first_line):
                writer.close()
                return
        else:
            transport = LineTransport(reader, writer, first_line)
        conn = Connection(transport)
        conn.start_sender()
        try:
            await self._message_loop(conn)
        except ConnectionError:
            pass  # abrupt client disconnect is a normal exit
        finally:
            self._detach(conn)
            await conn.shutdown()
            try:
                writer.close()
            except RuntimeError:
                pass

    def _detach(self, conn: Connection) -> None:
        if conn.session_id and conn.session_id in self.hosts:
            self.hosts[conn.session_id].connections.pop(conn.client_id, None)

    async def _message_loop(self, conn: Connection) -> None:
        while True:
            text = await conn.transport.recv()
            if text is None or conn.lagged:
                return
            if not text.strip():
                continue
            try:
                envelope = json.loads(text)
            except json.JSONDecodeError:
                conn.send_message("error", None, {"code": "protocol", "message": "malformed JSON"})
                return  # protocol error then close
            if not isinstance(envelope, dict) or not isinstance(envelope.get("type"), str):
                conn.send_message("error", None, {"code": "protocol", "message": "bad envelope"})
                return
            done = await self._dispatch(conn, envelope)
            if done:
                return

    async def _dispatch(self, conn: Connection, envelope: dict) -> bool:
        msg_type = envelope["type"]
        payload = envelope.get("payload") or {}
        in_reply = {"in_reply_to": envelope.get("seq")}

        def reply(extra: dict) -> None:
            conn.send_message("result", envelope.get("session"), {**in_reply, **extra})

        def fail(code: str, message: str) -> None:
            conn.send_message(
                "error", envelope.get("session"), {**in_reply, "code": code, "message": message}
            )

        if not isinstance(payload, dict):
            fail("format", "payload must be an object")
            return False

        if msg_type == "hello":
            if envelope.get("v") != PROTOCOL_VERSION:
                fail("version", f"protocol v{PROTOCOL_VERSION} required")
                return True  # version mismatch closes the connection
            name = payload.get("name") or "client"
            self._client_counter += 1
            conn.client_id = f"{name}-{self._client_counter}"
            conn.role_intent = payload.get("role_intent")
            conn.send_message("welcome", None, {**in_reply, "client_id": conn.client_id})
            return False

        if conn.client_id is None:
            fail("protocol", "hello required first")
            return False

        try:
            if msg_type == "create_session":
                await self._create_session(conn, payload, reply)
            elif msg_type == "heartbeat":
                reply({"pong": True})
            else:
                await self._session_command(conn, envelope, msg_type, payload, reply)
        except SimError as exc:
            fail(error_code(exc), str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            fail("format", f"bad payload: {exc}")
        return False

    # -- commands -----------------------------------------------------------------

    async def _create_session(self, conn: Connection, payload: dict, reply) -> None:
        scenario = scenario_from_dict(payload["scenario"])
        known = {case.case_id for case in self.case_list.cases}
        for instance in scenario.instances:
            if instance.case_id not in known:
                raise ReferentialError(
                    f"{instance.instance_id} references unknown case {instance.case_id!r}"
                )
        self._session_counter += 1
        session_id = f"s{self._session_counter}"
        log_path = self.log_dir / f"session-{session_id}.jsonl"
        header = telemetry.make_header(session_id, scenario, self.case_list.version)
        event_log = telemetry.open_log(log_path, header)
        session = Session(
            session_id,
            scenario,
            self.case_list,
            event_log,
            config=SessionConfig(time_limit_s=scenario.time_limit_s),
        )
        host = SessionHost(session, log_path)
        self.hosts[session_id] = host
        host.driver = asyncio.get_running_loop().create_task(self._drive(host))
        conn.session_id = session_id
        host.connections[conn.client_id] = conn
        reply({"session_id": session_id, "state": session.snapshot()})

    async def _drive(self, host: SessionHost) -> None:
        interval = self.tick_interval_ms / 1000
        last_clock_broadcast = 0.0
        while True:
            await asyncio.sleep(interval)
            async with host.lock:
                if host.session.phase is Phase.RUNNING:
                    events = host.session.tick(self.clock())
                    host.session.drain_events()
                    host.route_events(events)
                now = time.monotonic()
                if now - last_clock_broadcast >= 1.0:
                    last_clock_broadcast = now
                    if host.session.phase in (Phase.RUNNING, Phase.COMPLETE):
                        host.broadcast_clock()
                if host.session.phase is Phase.COMPLETE:
                    return

    async def _session_command(
        self, conn: Connection, envelope: dict, msg_type: str, payload: dict, reply
    ) -> None:
        session_id = envelope.get("session")
        host = self.hosts.get(session_id)
        if host is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        async with host.lock:
            session = host.session
            now = self.clock()
            prompt: FacilitatorPrompt | None = None

            if msg_type == "join_session":
                role = Role(payload["role"])
                session.add_participant(conn.client_id, role)
                conn.session_id = session_id
                host.connections[conn.client_id] = conn
                result = {"state": session.snapshot()}
            elif msg_type == "start_session":
                session.start(now)
                result = {"state": session.snapshot()}
            elif msg_type == "author_toggle":
                phase = session.toggle_author_mode(conn.client_id)
                result = {"phase": phase.value}
            elif msg_type == "place_patient":
                pose = _parse_pose(payload["pose"])
                session.place_patient(conn.client_id, payload["instance_id"], pose)
                result = {"instance_id": payload["instance_id"], "pose": _pose_doc(pose)}
            elif msg_type == "set_visibility":
                visible = payload["visible"]
                if not isinstance(visible, bool):
                    raise FormatError("visible must be a boolean")
                session.set_visibility(conn.client_id, payload["instance_id"], visible)
                result = {"instance_id": payload["instance_id"], "visible": visible}
            elif msg_type == "sensor_pose":
                detection = session.hand_sample(
                    conn.client_id, now, Sensor(payload["sensor"]), _parse_pose(payload["pose"])
                )
                result = {"detection": _detection_doc(detection)}
            elif msg_type == "gaze_sample":
                direction = payload["direction"]
                session.gaze_sample(
                    conn.client_id,
                    now,
                    _parse_pose(payload["origin"]),
                    (float(direction["x"]), float(direction["y"]), float(direction["z"])),
                )
                result = {}
            elif msg_type == "begin_hold":
                outcome = session.begin_hold(
                    conn.client_id, now, payload["instance_id"], payload["zone"]
                )
                if isinstance(outcome, StreamStarted):
                    result = {
                        "stream": {"channel": outcome.channel.value, "period_ms": outcome.period_ms}
                    }
                else:
                    prompt = outcome
                    result = {
                        "prompt": {
                            "channel": outcome.channel.value,
                            "instance_id": outcome.instance_id,
                        }
                    }
            elif msg_type == "end_hold":
                summary = session.end_hold(
                    conn.client_id, now, payload["instance_id"], payload["zone"]
                )
                result = {
                    "summary": {
                        "zone": summary.zone_id,
                        "duration_ms": summary.duration_ms,
                        "ticks_emitted": summary.ticks_emitted,
                    }
                }
            elif msg_type == "cognitive_query":
                gesture = session.cognitive_query(
                    conn.client_id, now, payload["instance_id"], Query(payload["query"])
                )
                result = {
                    "waved": gesture.waved,
                    "pointed_to_injury": gesture.pointed_to_injury,
                }
            elif msg_type == "assign_tag":
                tag = session.assign_tag(
                    conn.client_id,
                    now,
                    payload["instance_id"],
                    TriageCategory(payload["category"]),
                )
                result = {
                    "tag": {
                        "instance_id": payload["instance_id"],
                        "category": tag.category.value,
                        "ts_ms": tag.ts_ms,
                    }
                }
            elif msg_type == "facilitator_submit":
                check = session.facilitator_submit(
                    conn.client_id,
                    now,
                    payload["instance_id"],
                    Channel(payload["channel"]),
                    payload["value"],
                )
                result = {"matches_truth": check.matches_truth, "truth": check.truth}
            elif msg_type == "param_tweak":
                session.param_tweak(conn.client_id, now, payload["key"], payload["value"])
                result = {"config": session.config.to_dict()}
            elif msg_type == "subscribe":
                result = self._subscribe(conn, host, payload)
            else:
                raise ProtocolError(f"unknown message type {msg_type!r}")

            events = session.drain_events()
            host.route_events(events)
            if prompt is not None:
                host.notify_prompt(prompt, session.clock_ms)
            reply(result)

    def _subscribe(self, conn: Connection, host: SessionHost, payload: dict) -> dict:
        if host.participant_role(conn.client_id) is not Role.FACILITATOR:
            raise RoleError("telemetry subscription is facilitator-only")
        from_seq = payload.get("from_seq", 0)
        if not isinstance(from_seq, int) or isinstance(from_seq, bool) or from_seq < 0:
            raise FormatError("from_seq must be a non-negative integer")
        # Backfill under the session lock, then go live: exactly-once per seq.
        backfilled = 0
        if host.log_path.exists():
            _, lines = telemetry.read_log(host.log_path)
            for lineno, line in enumerate(lines, start=1):
                event = telemetry.event_from_line(line, lineno)
                if event.seq < from_seq:
                    continue
                conn.send_message(
                    "event",
                    host.session.session_id,
                    {
                        "seq": event.seq,
                        "ts_ms": event.ts_ms,
                        "kind": event.kind,
                        "responder_id": event.responder_id,
                        "instance_id": event.instance_id,
                        "payload": event.payload,
                    },
                )
                backfilled += 1
        conn.subscribed_from = 0
        return {"backfilled": backfilled, "next_seq": host.session.log.next_seq}


def _parse_pose(doc: dict) -> Pose:
    try:
        return Pose(
            x=float(doc["x"]),
            y=float(doc["y"]),
            z=float(doc["z"]),
            yaw_deg=float(doc.get("yaw_deg", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad pose: {exc}") from None


def _pose_doc(pose: Pose) -> dict:
    return {"x": pose.x, "y": pose.y, "z": pose.z, "yaw_deg": pose.yaw_deg}


def _detection_doc(detection: Detection | None) -> dict | None:
    if detection is None:
        return None
    return {
        "instance_id": detection.instance_id,
        "zone": detection.zone_id,
        "kind": detection.kind.value,
        "distance_m": round(detection.distance_m, 4),
    }
