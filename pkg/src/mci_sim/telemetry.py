"""Append-only session event log, deterministic replay, and triage scoring.

Log format: UTF-8 JSON lines. Line 0 is a header object; every following
line is one event with gapless ``seq`` starting at 0. Events are written
with a fixed key order and compact separators so that a replayed session
regenerates byte-identical lines.

Replay refeeds input-class events (things participants did) through a
fresh session and demands that every engine-class event (ticks, readouts,
expiry) regenerates exactly. Scoring folds the event list into a
TriageReport against the scenario's ground truth.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import (
    ClosedLogError,
    DivergenceError,
    FormatError,
    IntegrityError,
)
from .model import MasterCaseList, TriageCategory
from .salt import treatment_priority
from .scenario import Scenario, scenario_sha256

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

SESSION_START = "session_start"
SESSION_END = "session_end"
PARTICIPANT_JOINED = "participant_joined"
HAND_SAMPLE = "hand_sample"
GAZE_SAMPLE = "gaze_sample"
ZONE_ENTER = "zone_enter"
ZONE_EXIT = "zone_exit"
VITALS_READOUT = "vitals_readout"
HEARTBEAT_TICK = "heartbeat_tick"
BREATH_TICK = "breath_tick"
VOICE_QUERY = "voice_query"
GESTURE_RESPONSE = "gesture_response"
TAG_ASSIGNED = "tag_assigned"
AUTHOR_TOGGLED = "author_toggled"
PATIENT_PLACED = "patient_placed"
VISIBILITY_SET = "visibility_set"
PARAM_TWEAK = "param_tweak"
FACILITATOR_VALUE = "facilitator_value"
CROSS_CHECK_MISMATCH = "cross_check_mismatch"

# Events that record a participant action; replay refeeds these as commands.
INPUT_KINDS = frozenset(
    {
        PARTICIPANT_JOINED,
        SESSION_START,
        HAND_SAMPLE,
        GAZE_SAMPLE,
        ZONE_ENTER,
        ZONE_EXIT,
        VOICE_QUERY,
        TAG_ASSIGNED,
        AUTHOR_TOGGLED,
        PATIENT_PLACED,
        VISIBILITY_SET,
        PARAM_TWEAK,
        FACILITATOR_VALUE,
    }
)

# Events the engine derives; replay regenerates and byte-compares these.
ENGINE_KINDS = frozenset(
    {
        SESSION_END,
        HEARTBEAT_TICK,
        BREATH_TICK,
        VITALS_READOUT,
        GESTURE_RESPONSE,
        CROSS_CHECK_MISMATCH,
    }
)

ALL_KINDS = INPUT_KINDS | ENGINE_KINDS

# Broadcast to every session participant (shared state); the rest go to the
# acting responder and telemetry subscribers only.
STATE_KINDS = frozenset(
    {
        PARTICIPANT_JOINED,
        SESSION_START,
        SESSION_END,
        TAG_ASSIGNED,
        AUTHOR_TOGGLED,
        PATIENT_PLACED,
        VISIBILITY_SET,
        PARAM_TWEAK,
    }
)


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    ts_ms: int
    kind: str
    responder_id: str | None
    instance_id: str | None
    payload: dict


def event_to_line(event: SessionEvent) -> str:
    return json.dumps(
        {
            "seq": event.seq,
            "ts_ms": event.ts_ms,
            "kind": event.kind,
            "responder_id": event.responder_id,
            "instance_id": event.instance_id,
            "payload": event.payload,
        },
        separators=(",", ":"),
        ensure_ascii=False,
    )


def event_from_line(line: str, lineno: int) -> SessionEvent:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"line {lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"line {lineno}: expected object")
    missing = {"seq", "ts_ms", "kind", "responder_id", "instance_id", "payload"} - set(doc)
    if missing:
        raise FormatError(f"line {lineno}: missing field {sorted(missing)[0]!r}")
    kind = doc["kind"]
    if kind not in ALL_KINDS:
        raise FormatError(f"line {lineno}: unknown event kind {kind!r}")
    seq, ts_ms = doc["seq"], doc["ts_ms"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise FormatError(f"line {lineno}: seq must be a non-negative integer")
    if not isinstance(ts_ms, int) or isinstance(ts_ms, bool) or ts_ms < 0:
        raise FormatError(f"line {lineno}: ts_ms must be a non-negative integer")
    if not isinstance(doc["payload"], dict):
        raise FormatError(f"line {lineno}: payload must be an object")
    for key in ("responder_id", "instance_id"):
        if doc[key] is not None and not isinstance(doc[key], str):
            raise FormatError(f"line {lineno}: {key} must be string or null")
    return SessionEvent(
        seq=seq,
        ts_ms=ts_ms,
        kind=kind,
        responder_id=doc["responder_id"],
        instance_id=doc["instance_id"],
        payload=doc["payload"],
    )


def make_header(
    session_id: str,
    scenario: Scenario,
    case_list_version: str,
    participants: list[dict] | None = None,
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "session_id": session_id,
        "scenario_id": scenario.scenario_id,
        "scenario_sha256": scenario_sha256(scenario),
        "case_list_version": case_list_version,
        "participants": list(participants or []),
    }


def header_to_line(header: dict) -> str:
    return json.dumps(header, separators=(",", ":"), ensure_ascii=False)


class EventLog:
    """Gapless, append-only event sink. Closes itself after session_end."""

    def __init__(self, header: dict, sink: Callable[[str], None]):
        self.header = header
        self._sink = sink
        self._next_seq = 0
        self._closed = False
        sink(header_to_line(header))

    @property
    def next_seq(self) -> int:
        return self._next_seq

    @property
    def closed(self) -> bool:
        return self._closed

    def append(
        self,
        ts_ms: int,
        kind: str,
        responder_id: str | None,
        instance_id: str | None,
        payload: dict,
    ) -> SessionEvent:
        if self._closed:
            raise ClosedLogError("event log is closed")
        if kind not in ALL_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = SessionEvent(self._next_seq, ts_ms, kind, responder_id, instance_id, payload)
        self._sink(event_to_line(event))
        self._next_seq += 1
        if kind == SESSION_END:
            self._closed = True
        return event

    def close(self) -> None:
        self._closed = True


class _FileSink:
    """Line writer that reports write failures once and never raises."""

    def __init__(self, path: Path):
        self._path = path
        self._handle = path.open("w", encoding="utf-8")
        self._failed = False

    def __call__(self, line: str) -> None:
        if self._failed:
            return
        try:
            self._handle.write(line + "\n")
            self._handle.flush()
        except OSError as exc:
            self._failed = True
            log.error("telemetry write to %s failed, session continues: %s", self._path, exc)

    def close(self) -> None:
        try:
            self._handle.close()
        except OSError:
            pass


def open_log(path: str | Path, header: dict) -> EventLog:
    return EventLog(header, _FileSink(Path(path)))


class MemorySink:
    """Collects serialized lines; used by tests and replay."""

    def __init__(self):
        self.lines: list[str] = []

    def __call__(self, line: str) -> None:
        self.lines.append(line)


def read_log(path: str | Path) -> tuple[dict, list[str]]:
    """Returns (header, raw event lines). Event lines are kept verbatim so
    replay can compare bytes; parse them with event_from_line as needed."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise FormatError("log is empty: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"line 0: invalid header JSON: {exc.msg}") from None
    if not isinstance(header, dict):
        raise FormatError("line 0: header must be an object")
    if header.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(
            f"unsupported format_version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    for key in ("session_id", "scenario_id", "scenario_sha256", "case_list_version", "participants"):
        if key not in header:
            raise FormatError(f"line 0: header missing field {key!r}")
    return header, lines[1:]


@dataclass
class SessionRecord:
    """Outcome of a replay: the reconstructed session plus its event list."""

    header: dict
    events: list[SessionEvent]
    session: object  # session.Session; typed loosely to avoid an import cycle

    @property
    def session_id(self) -> str:
        return self.header["session_id"]


def replay(log_path: str | Path, scenario: Scenario, case_list: MasterCaseList) -> SessionRecord:
    """Rebuilds the session by refeeding logged inputs; engine-class events
    must regenerate byte-for-byte or DivergenceError names the first bad seq."""
    from . import session as session_mod

    header, logged_lines = read_log(log_path)
    expected_sha = scenario_sha256(scenario)
    if header["scenario_sha256"] != expected_sha:
        raise IntegrityError(
            f"log was recorded against scenario {header['scenario_id']} "
            f"(sha256 {header['scenario_sha256'][:12]}...), provided scenario hashes "
            f"to {expected_sha[:12]}..."
        )
    if header["scenario_id"] != scenario.scenario_id:
        raise IntegrityError(
            f"scenario_id mismatch: log has {header['scenario_id']!r}, "
            f"provided {scenario.scenario_id!r}"
        )
    if header["case_list_version"] != case_list.version:
        raise IntegrityError(
            f"log was recorded with case list {header['case_list_version']!r}, "
            f"bound list is {case_list.version!r}"
        )

    sink = MemorySink()
    relog = EventLog(header, sink)
    sink.lines.clear()  # header line is checked above, not byte-compared
    sess = session_mod.Session(
        session_id=header["session_id"],
        scenario=scenario,
        case_list=case_list,
        log=relog,
        participants=header["participants"],
    )

    regenerated: deque[str] = deque()
    events: list[SessionEvent] = []

    def pump() -> None:
        regenerated.extend(sink.lines)
        sink.lines.clear()

    def match(logged_line: str, logged_seq: int) -> None:
        if not regenerated:
            raise DivergenceError(
                logged_seq, f"seq {logged_seq}: logged event was not regenerated"
            )
        expected = regenerated.popleft()
        if expected != logged_line:
            seq = json.loads(expected)["seq"]
            raise DivergenceError(
                seq,
                f"seq {seq}: regenerated event differs from log\n"
                f"  expected: {expected}\n"
                f"  logged:   {logged_line}",
            )

    for lineno, line in enumerate(logged_lines, start=1):
        if regenerated:
            match(line, json.loads(regenerated[0])["seq"])
            events.append(event_from_line(line, lineno))
            continue
        event = event_from_line(line, lineno)
        if event.kind in INPUT_KINDS:
            _apply_input(sess, event)
        elif event.kind == SESSION_END:
            sess.tick(event.ts_ms + 1)
        else:
            sess.tick(event.ts_ms)
        pump()
        match(line, event.seq)
        events.append(event)

    pump()
    if regenerated:
        seq = json.loads(regenerated[0])["seq"]
        raise DivergenceError(seq, f"seq {seq}: regenerated event missing from log")
    return SessionRecord(header=header, events=events, session=sess)


def _apply_input(sess, event: SessionEvent) -> None:
    from . import session as session_mod
    from .scenario import Pose

    kind, p = event.kind, event.payload
    rid, iid, ts = event.responder_id, event.instance_id, event.ts_ms

    def pose_of(doc) -> Pose:
        return Pose(
            x=float(doc["x"]), y=float(doc["y"]), z=float(doc["z"]),
            yaw_deg=float(doc["yaw_deg"]),
        )

    if kind == PARTICIPANT_JOINED:
        sess.add_participant(rid, session_mod.Role(p["role"]))
    elif kind == SESSION_START:
        sess.start(ts)
    elif kind == HAND_SAMPLE:
        sess.hand_sample(rid, ts, session_mod.Sensor(p["sensor"]), pose_of(p["pose"]))
    elif kind == GAZE_SAMPLE:
        direction = (float(p["direction"]["x"]), float(p["direction"]["y"]),
                     float(p["direction"]["z"]))
        sess.gaze_sample(rid, ts, pose_of(p["origin"]), direction)
    elif kind == ZONE_ENTER:
        sess.begin_hold(rid, ts, iid, p["zone"])
    elif kind == ZONE_EXIT:
        sess.end_hold(rid, ts, iid, p["zone"])
    elif kind == VOICE_QUERY:
        sess.cognitive_query(rid, ts, iid, session_mod.Query(p["query"]))
    elif kind == TAG_ASSIGNED:
        sess.assign_tag(rid, ts, iid, TriageCategory(p["category"]))
    elif kind == AUTHOR_TOGGLED:
        sess.toggle_author_mode(rid)
    elif kind == PATIENT_PLACED:
        sess.place_patient(rid, iid, pose_of(p["pose"]))
    elif kind == VISIBILITY_SET:
        sess.set_visibility(rid, iid, p["visible"])
    elif kind == PARAM_TWEAK:
        sess.param_tweak(rid, ts, p["key"], p["value"])
    elif kind == FACILITATOR_VALUE:
        sess.facilitator_submit(rid, ts, iid, session_mod.Channel(p["channel"]), p["value"])
    else:  # pragma: no cover - kinds are partitioned above
        raise FormatError(f"unhandled input kind {kind!r}")


# --- Scoring -----------------------------------------------------------------

CATEGORY_ROWS = ("black", "grey", "red", "yellow", "green")
UNTAGGED_COL = 5
INTERACTION_KINDS = frozenset({ZONE_ENTER, VOICE_QUERY, TAG_ASSIGNED})


@dataclass
class TriageReport:
    session_id: str
    scenario_id: str
    accuracy: float
    confusion: list[list[int]]  # 5 truth rows x (5 tagged cols + untagged)
    overtriage_count: int
    undertriage_count: int
    per_patient: dict[str, dict]
    session_duration_ms: int
    correct_count: int = 0
    untagged_count: int = 0
    total_patients: int = 0

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "scenario_id": self.scenario_id,
            "total_patients": self.total_patients,
            "accuracy": self.accuracy,
            "correct_count": self.correct_count,
            "overtriage_count": self.overtriage_count,
            "undertriage_count": self.undertriage_count,
            "untagged_count": self.untagged_count,
            "confusion_rows": list(CATEGORY_ROWS),
            "confusion_cols": list(CATEGORY_ROWS) + ["untagged"],
            "confusion": [list(row) for row in self.confusion],
            "session_duration_ms": self.session_duration_ms,
            "per_patient": self.per_patient,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def final_tags(events: list[SessionEvent]) -> dict[str, SessionEvent]:
    tags: dict[str, SessionEvent] = {}
    for event in events:
        if event.kind == TAG_ASSIGNED:
            tags[event.instance_id] = event
    return tags


def time_in_task(events: list[SessionEvent], instance_id: str) -> int | None:
    """Final tag ts minus first patient-directed event ts; null if untagged."""
    tag = final_tags(events).get(instance_id)
    if tag is None:
        return None
    first = min(
        (e.ts_ms for e in events
         if e.instance_id == instance_id and e.kind in INTERACTION_KINDS),
        default=tag.ts_ms,
    )
    return tag.ts_ms - first


def score(record: SessionRecord, scenario: Scenario, case_list: MasterCaseList) -> TriageReport:
    """Pure scoring fold: final tag per patient vs ground truth."""
    row_index = {name: i for i, name in enumerate(CATEGORY_ROWS)}
    known = {inst.instance_id for inst in scenario.instances}
    for event in record.events:
        if event.kind == TAG_ASSIGNED and event.instance_id not in known:
            raise IntegrityError(
                f"seq {event.seq}: tag references unknown instance {event.instance_id!r}"
            )

    tags = final_tags(record.events)
    tag_history: dict[str, list[dict]] = {i: [] for i in known}
    for event in record.events:
        if event.kind == TAG_ASSIGNED:
            tag_history[event.instance_id].append(
                {
                    "category": event.payload["category"],
                    "responder_id": event.responder_id,
                    "ts_ms": event.ts_ms,
                }
            )

    confusion = [[0] * 6 for _ in CATEGORY_ROWS]
    per_patient: dict[str, dict] = {}
    correct = overtriage = undertriage = untagged = 0

    for inst in scenario.instances:
        truth = case_list.by_id(inst.case_id).ground_truth
        truth_row = row_index[truth.value]
        tag = tags.get(inst.instance_id)
        if tag is None:
            confusion[truth_row][UNTAGGED_COL] += 1
            untagged += 1
            tagged_value = None
        else:
            tagged = TriageCategory(tag.payload["category"])
            confusion[truth_row][row_index[tagged.value]] += 1
            tagged_value = tagged.value
            if tagged is truth:
                correct += 1
            elif treatment_priority(tagged) < treatment_priority(truth):
                overtriage += 1
            else:
                undertriage += 1
        per_patient[inst.instance_id] = {
            "truth": truth.value,
            "tagged": tagged_value,
            "time_in_task_ms": time_in_task(record.events, inst.instance_id),
            "tags": tag_history[inst.instance_id],
        }

    total = len(scenario.instances)
    duration = 0
    for event in record.events:
        duration = max(duration, event.ts_ms)
        if event.kind == SESSION_END:
            duration = event.ts_ms
            break
    return TriageReport(
        session_id=record.session_id,
        scenario_id=scenario.scenario_id,
        accuracy=correct / total if total else 0.0,
        confusion=confusion,
        overtriage_count=overtriage,
        undertriage_count=undertriage,
        per_patient=per_patient,
        session_duration_ms=duration,
        correct_count=correct,
        untagged_count=untagged,
        total_patients=total,
    )
