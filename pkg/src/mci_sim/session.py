"""Live simulation core.

One Session owns one scenario run: lobby and roster, author-mode edits,
the ten-minute clock, body-zone detection, vitals streams (virtual mode),
facilitator prompts and cross-checks (actor mode), cognitive queries, and
tagging. Time is always injected: every clock-sensitive command takes an
absolute now_ms from the caller, the session converts it to session-relative
milliseconds, and due stream events are emitted before the command itself
is applied. That ordering is what makes the event log replayable.

All mutations must arrive on one logical thread per session; the server
serializes commands, and replay is single-threaded by construction.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from . import telemetry
from .errors import (
    ClockError,
    NotFoundError,
    OutOfRangeError,
    PhaseError,
    ProtocolError,
    ReferentialError,
    RoleError,
    SessionExpiredError,
)
from .model import MasterCaseList, PatientCase, TriageCategory
from .scenario import Mode, PatientInstance, Pose, Scenario
from .scenario import place_patient as _place_patient
from .scenario import set_visibility as _set_visibility
from .telemetry import EventLog, SessionEvent


class Phase(enum.Enum):
    LOBBY = "lobby"
    RUNNING = "running"
    AUTHOR_MODE = "author_mode"
    COMPLETE = "complete"


class Role(enum.Enum):
    TRAINEE = "trainee"
    FACILITATOR = "facilitator"


class Sensor(enum.Enum):
    PALM = "palm"
    TWO_FINGERS = "two_fingers"
    HEAD = "head"


class ZoneKind(enum.Enum):
    BICEP = "bicep"
    WRIST = "wrist"
    CHEST = "chest"
    HEAD_PROXIMITY = "head_proximity"


class Channel(enum.Enum):
    BP = "bp"
    HEARTBEAT = "heartbeat"
    BREATH = "breath"


class Query(enum.Enum):
    CAN_YOU_WAVE = "can_you_wave"
    SHOW_ME_WHERE_IT_HURTS = "show_me_where_it_hurts"


@dataclass(frozen=True)
class BodyZone:
    zone_id: str
    kind: ZoneKind
    center_offset: tuple[float, float, float]  # patient-local, +x = patient's left
    radius: float


DEFAULT_ZONES: tuple[BodyZone, ...] = (
    BodyZone("bicep_left", ZoneKind.BICEP, (0.18, 1.25, 0.0), 0.12),
    BodyZone("bicep_right", ZoneKind.BICEP, (-0.18, 1.25, 0.0), 0.12),
    BodyZone("wrist_left", ZoneKind.WRIST, (0.30, 1.00, 0.0), 0.08),
    BodyZone("wrist_right", ZoneKind.WRIST, (-0.30, 1.00, 0.0), 0.08),
    BodyZone("chest", ZoneKind.CHEST, (0.0, 1.30, 0.05), 0.25),
    BodyZone("head", ZoneKind.HEAD_PROXIMITY, (0.0, 1.55, 0.0), 0.35),
)

ZONE_BY_ID = {zone.zone_id: zone for zone in DEFAULT_ZONES}

SENSOR_ZONE_KINDS = {
    Sensor.PALM: frozenset({ZoneKind.BICEP}),
    Sensor.TWO_FINGERS: frozenset({ZoneKind.WRIST}),
    Sensor.HEAD: frozenset({ZoneKind.CHEST, ZoneKind.HEAD_PROXIMITY}),
}

ZONE_CHANNEL = {
    ZoneKind.BICEP: Channel.BP,
    ZoneKind.WRIST: Channel.HEARTBEAT,
    ZoneKind.CHEST: Channel.BREATH,
    ZoneKind.HEAD_PROXIMITY: Channel.BREATH,
}

# Vertical offset of a lying patient's body axis above the ground plane.
LYING_HEIGHT_M = 0.15

DEFAULT_TIME_LIMIT_S = 600
DEFAULT_BP_DWELL_MS = 3000
DEFAULT_QUERY_RANGE_M = 2.0

TWEAKABLE_KEYS = (
    "time_limit_s",
    "bp_dwell_ms",
    "query_range_m",
    "zone_radius.bicep",
    "zone_radius.wrist",
    "zone_radius.chest",
    "zone_radius.head_proximity",
)


@dataclass
class SessionConfig:
    time_limit_s: int = DEFAULT_TIME_LIMIT_S
    bp_dwell_ms: int = DEFAULT_BP_DWELL_MS
    query_range_m: float = DEFAULT_QUERY_RANGE_M
    zone_radii: dict[ZoneKind, float] = field(
        default_factory=lambda: {zone.kind: zone.radius for zone in DEFAULT_ZONES}
    )

    def to_dict(self) -> dict:
        return {
            "time_limit_s": self.time_limit_s,
            "bp_dwell_ms": self.bp_dwell_ms,
            "query_range_m": self.query_range_m,
            "zone_radii": {kind.value: r for kind, r in self.zone_radii.items()},
        }


# --- Command results ----------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    instance_id: str
    zone_id: str
    kind: ZoneKind
    distance_m: float


@dataclass(frozen=True)
class StreamStarted:
    channel: Channel
    period_ms: int | None  # None: no periodic signal (bp dwell, or zero rate)


@dataclass(frozen=True)
class FacilitatorPrompt:
    channel: Channel
    instance_id: str


@dataclass(frozen=True)
class GestureResponse:
    waved: bool
    pointed_to_injury: bool


@dataclass(frozen=True)
class HoldSummary:
    zone_id: str
    duration_ms: int
    ticks_emitted: int


@dataclass(frozen=True)
class CrossCheckResult:
    matches_truth: bool
    truth: object  # int for heartbeat/breath, [sys, dia] for bp


@dataclass(frozen=True)
class Tag:
    category: TriageCategory
    responder_id: str
    ts_ms: int


@dataclass
class _Hold:
    responder_id: str
    instance_id: str
    zone_id: str
    channel: Channel
    start_ts: int
    period_ms: int | None  # periodic stream (virtual wrist/chest/head)
    readout_due_ts: int | None = None  # one-shot bp readout (virtual bicep)
    readout_values: dict | None = None
    ticks_emitted: int = 0
    result: object = None  # StreamStarted or FacilitatorPrompt, for idempotent re-begin


def zone_world_center(
    instance: PatientInstance, case: PatientCase, zone: BodyZone
) -> tuple[float, float, float]:
    """Zone center in world coordinates. Walkers stand; everyone else lies
    on their back, body axis along local +z, raised LYING_HEIGHT_M."""
    ox, oy, oz = zone.center_offset
    if not case.sort_obs.can_walk:
        ox, oy, oz = ox, oz + LYING_HEIGHT_M, oy
    theta = math.radians(instance.pose.yaw_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    return (
        instance.pose.x + ox * cos_t + oz * sin_t,
        instance.pose.y + oy,
        instance.pose.z - ox * sin_t + oz * cos_t,
    )


def detect_zone(
    scenario: Scenario,
    case_list: MasterCaseList,
    sensor: Sensor,
    point: Pose,
    zone_radii: dict[ZoneKind, float] | None = None,
) -> Detection | None:
    """Nearest zone of the sensor's kind containing the point, over every
    instance (visibility does not matter for touch). Ties break toward the
    smaller center distance, then instance_id, then zone_id."""
    radii = zone_radii or {zone.kind: zone.radius for zone in DEFAULT_ZONES}
    kinds = SENSOR_ZONE_KINDS[sensor]
    best: Detection | None = None
    for instance in scenario.instances:
        case = case_list.by_id(instance.case_id)
        for zone in DEFAULT_ZONES:
            if zone.kind not in kinds:
                continue
            cx, cy, cz = zone_world_center(instance, case, zone)
            distance = math.sqrt(
                (point.x - cx) ** 2 + (point.y - cy) ** 2 + (point.z - cz) ** 2
            )
            if distance > radii[zone.kind]:
                continue
            key = (distance, instance.instance_id, zone.zone_id)
            if best is None or key < (best.distance_m, best.instance_id, best.zone_id):
                best = Detection(instance.instance_id, zone.zone_id, zone.kind, distance)
    return best


class Session:
    """State machine for one scenario run. See module docstring for the
    threading and clock contract."""

    def __init__(
        self,
        session_id: str,
        scenario: Scenario,
        case_list: MasterCaseList,
        log: EventLog,
        config: SessionConfig | None = None,
        participants: list[dict] | None = None,
    ):
        known = {case.case_id for case in case_list.cases}
        for instance in scenario.instances:
            if instance.case_id not in known:
                raise ReferentialError(
                    f"{instance.instance_id} references unknown case {instance.case_id!r}"
                )
        self.session_id = session_id
        self.scenario = scenario
        self.case_list = case_list
        self.log = log
        self.config = config or SessionConfig(time_limit_s=scenario.time_limit_s)
        self.phase = Phase.LOBBY
        self.participants: dict[str, Role] = {}
        self.tags: dict[str, Tag] = {}
        self.overrides: dict[tuple[str, str], object] = {}
        self.pending_prompts: dict[tuple[str, str], int] = {}  # (instance, channel) -> ts
        self.clock_ms = 0
        self._epoch_ms: int | None = None
        self._last_now: int | None = None
        self._holds: dict[tuple[str, str, str], _Hold] = {}
        self._positions: dict[str, tuple[float, float, float]] = {}
        self._out: list[SessionEvent] = []
        # pre-seeded roster (replay path): already recorded in the log header
        for entry in participants or []:
            self.participants[entry["responder_id"]] = Role(entry["role"])

    # -- plumbing --------------------------------------------------------------

    def drain_events(self) -> list[SessionEvent]:
        out, self._out = self._out, []
        return out

    def _emit(
        self,
        ts_ms: int,
        kind: str,
        responder_id: str | None,
        instance_id: str | None,
        payload: dict,
    ) -> SessionEvent:
        event = self.log.append(ts_ms, kind, responder_id, instance_id, payload)
        self._out.append(event)
        return event

    def _instance(self, instance_id: str) -> PatientInstance:
        return self.scenario.instance(instance_id)  # raises NotFoundError

    def _case(self, instance: PatientInstance) -> PatientCase:
        return self.case_list.by_id(instance.case_id)

    def _require_participant(self, responder_id: str) -> Role:
        role = self.participants.get(responder_id)
        if role is None:
            raise NotFoundError(f"responder {responder_id!r} has not joined this session")
        return role

    def _require_facilitator(self, responder_id: str) -> None:
        if self._require_participant(responder_id) is not Role.FACILITATOR:
            raise RoleError(f"{responder_id!r} is not a facilitator")

    def _require_phase(self, *phases: Phase) -> None:
        if self.phase not in phases:
            wanted = " or ".join(p.value for p in phases)
            raise PhaseError(f"requires phase {wanted}, session is {self.phase.value}")

    def _limit_ms(self) -> int:
        return self.config.time_limit_s * 1000

    # -- clock -----------------------------------------------------------------

    def _advance(self, now_ms: int) -> None:
        """Moves the session clock to now_ms, emitting every due stream event
        in deterministic order, and expires the session past the limit."""
        if self.phase is not Phase.RUNNING:
            return
        if now_ms < self._last_now:
            raise ClockError(f"clock went backwards: {now_ms} < {self._last_now}")
        self._last_now = now_ms
        target = now_ms - self._epoch_ms
        limit = self._limit_ms()
        cap = min(target, limit)

        due: list[tuple[int, str, str, str, str, _Hold, dict]] = []
        for hold in self._holds.values():
            if hold.period_ms:
                k = hold.ticks_emitted + 1
                while hold.start_ts + k * hold.period_ms <= cap:
                    kind = (
                        telemetry.HEARTBEAT_TICK
                        if hold.channel is Channel.HEARTBEAT
                        else telemetry.BREATH_TICK
                    )
                    due.append(
                        (
                            hold.start_ts + k * hold.period_ms,
                            hold.instance_id,
                            hold.responder_id,
                            hold.zone_id,
                            kind,
                            hold,
                            {},
                        )
                    )
                    k += 1
            if hold.readout_due_ts is not None and hold.readout_due_ts <= cap:
                due.append(
                    (
                        hold.readout_due_ts,
                        hold.instance_id,
                        hold.responder_id,
                        hold.zone_id,
                        telemetry.VITALS_READOUT,
                        hold,
                        {"channel": Channel.BP.value, "values": hold.readout_values},
                    )
                )
        due.sort(key=lambda item: item[:5])
        for ts, instance_id, responder_id, _zone, kind, hold, payload in due:
            self._emit(ts, kind, responder_id, instance_id, payload)
            if kind == telemetry.VITALS_READOUT:
                hold.readout_due_ts = None
            else:
                hold.ticks_emitted += 1

        if target > limit:
            self._emit(limit, telemetry.SESSION_END, None, None, {})
            self.clock_ms = limit
            self.phase = Phase.COMPLETE
            self._holds.clear()
            self.pending_prompts.clear()
            self.log.close()
        else:
            self.clock_ms = target

    def _ts(self, now_ms: int) -> int:
        return now_ms - self._epoch_ms

    def tick(self, now_ms: int) -> list[SessionEvent]:
        """Discrete-time driver: emits whatever became due by now_ms."""
        if self.phase is not Phase.RUNNING:
            return []
        mark = len(self._out)
        self._advance(now_ms)
        return self._out[mark:]

    # -- lobby and lifecycle -----------------------------------------------------

    def add_participant(self, responder_id: str, role: Role) -> None:
        self._require_phase(Phase.LOBBY, Phase.AUTHOR_MODE)
        if responder_id in self.participants:
            raise ProtocolError(f"responder {responder_id!r} already joined")
        self.participants[responder_id] = role
        self._emit(0, telemetry.PARTICIPANT_JOINED, responder_id, None, {"role": role.value})

    def trainee_count(self) -> int:
        return sum(1 for role in self.participants.values() if role is Role.TRAINEE)

    def start(self, now_ms: int) -> None:
        self._require_phase(Phase.LOBBY)
        required = self.scenario.required_responders
        have = self.trainee_count()
        if have != required:
            raise ProtocolError(
                f"{self.scenario.mode.value} session requires {required} "
                f"trainee{'s' if required != 1 else ''}, have {have}"
            )
        self._epoch_ms = now_ms
        self._last_now = now_ms
        self.clock_ms = 0
        self.phase = Phase.RUNNING
        self._emit(0, telemetry.SESSION_START, None, None, {})

    # -- sampling and zone detection ---------------------------------------------

    def hand_sample(
        self, responder_id: str, now_ms: int, sensor: Sensor, pose: Pose
    ) -> Detection | None:
        self._require_participant(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        self._emit(
            self._ts(now_ms),
            telemetry.HAND_SAMPLE,
            responder_id,
            None,
            {"sensor": sensor.value, "pose": _pose_payload(pose)},
        )
        self._positions[responder_id] = (pose.x, pose.y, pose.z)
        return detect_zone(self.scenario, self.case_list, sensor, pose, self.config.zone_radii)

    def gaze_sample(
        self,
        responder_id: str,
        now_ms: int,
        origin: Pose,
        direction: tuple[float, float, float],
    ) -> None:
        self._require_participant(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        dx, dy, dz = (round(v, 3) + 0.0 for v in direction)
        self._emit(
            self._ts(now_ms),
            telemetry.GAZE_SAMPLE,
            responder_id,
            None,
            {
                "origin": _pose_payload(origin),
                "direction": {"x": f"{dx:.3f}", "y": f"{dy:.3f}", "z": f"{dz:.3f}"},
            },
        )
        self._positions[responder_id] = (origin.x, origin.y, origin.z)

    # -- holds and streams ---------------------------------------------------------

    def begin_hold(
        self, responder_id: str, now_ms: int, instance_id: str, zone_id: str
    ) -> StreamStarted | FacilitatorPrompt:
        self._require_participant(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        zone = ZONE_BY_ID.get(zone_id)
        if zone is None:
            raise ProtocolError(f"unknown zone {zone_id!r}")
        instance = self._instance(instance_id)
        case = self._case(instance)
        key = (responder_id, instance_id, zone_id)
        existing = self._holds.get(key)
        if existing is not None:
            return existing.result  # identical re-begin is a no-op

        ts = self._ts(now_ms)
        channel = ZONE_CHANNEL[zone.kind]
        hold = _Hold(responder_id, instance_id, zone_id, channel, ts, None)
        if self.scenario.mode is Mode.VIRTUAL:
            if channel is Channel.BP:
                hold.readout_due_ts = ts + self.config.bp_dwell_ms
                hold.readout_values = {
                    "sys": case.vitals.bp_sys_mmhg,
                    "dia": case.vitals.bp_dia_mmhg,
                }
                hold.result = StreamStarted(channel, None)
            else:
                rate = (
                    case.vitals.hr_bpm
                    if channel is Channel.HEARTBEAT
                    else case.vitals.rr_bpm
                )
                hold.period_ms = 60000 // rate if rate > 0 else None
                hold.result = StreamStarted(channel, hold.period_ms)
        else:
            self.pending_prompts.setdefault((instance_id, channel.value), ts)
            hold.result = FacilitatorPrompt(channel, instance_id)
        self._holds[key] = hold
        self._emit(ts, telemetry.ZONE_ENTER, responder_id, instance_id, {"zone": zone_id})
        return hold.result

    def end_hold(
        self, responder_id: str, now_ms: int, instance_id: str, zone_id: str
    ) -> HoldSummary:
        self._require_participant(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        key = (responder_id, instance_id, zone_id)
        hold = self._holds.pop(key, None)
        if hold is None:
            raise ProtocolError(
                f"no active hold for {responder_id!r} on {instance_id!r}/{zone_id!r}"
            )
        ts = self._ts(now_ms)
        summary = HoldSummary(zone_id, ts - hold.start_ts, hold.ticks_emitted)
        self._emit(
            ts,
            telemetry.ZONE_EXIT,
            responder_id,
            instance_id,
            {
                "zone": zone_id,
                "duration_ms": summary.duration_ms,
                "ticks_emitted": summary.ticks_emitted,
            },
        )
        return summary

    # -- cognitive queries -----------------------------------------------------------

    def cognitive_query(
        self, responder_id: str, now_ms: int, instance_id: str, query: Query
    ) -> GestureResponse:
        self._require_participant(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        instance = self._instance(instance_id)
        case = self._case(instance)
        position = self._positions.get(responder_id)
        if position is None:
            raise OutOfRangeError(
                f"no tracked position for {responder_id!r}; send a hand or gaze sample first"
            )
        distance = math.sqrt(
            (position[0] - instance.pose.x) ** 2
            + (position[1] - instance.pose.y) ** 2
            + (position[2] - instance.pose.z) ** 2
        )
        if distance > self.config.query_range_m:
            raise OutOfRangeError(
                f"{distance:.2f} m from {instance_id}, queries carry {self.config.query_range_m} m"
            )
        ts = self._ts(now_ms)
        self._emit(
            ts, telemetry.VOICE_QUERY, responder_id, instance_id, {"query": query.value}
        )
        response = GestureResponse(
            waved=case.script.gesture_on_wave_query,
            pointed_to_injury=case.script.gesture_on_hurt_query,
        )
        self._emit(
            ts,
            telemetry.GESTURE_RESPONSE,
            responder_id,
            instance_id,
            {
                "query": query.value,
                "waved": response.waved,
                "pointed_to_injury": response.pointed_to_injury,
            },
        )
        return response

    # -- tagging ---------------------------------------------------------------------

    def assign_tag(
        self, responder_id: str, now_ms: int, instance_id: str, category: TriageCategory
    ) -> Tag:
        role = self._require_participant(responder_id)
        if role is not Role.TRAINEE:
            raise RoleError(f"{responder_id!r} is not a trainee; only trainees tag")
        if self.phase in (Phase.LOBBY, Phase.AUTHOR_MODE):
            raise PhaseError("session has not started")
        self._advance(now_ms)
        if self.phase is not Phase.RUNNING:
            raise SessionExpiredError("time limit reached; tag rejected")
        instance = self._instance(instance_id)
        ts = self._ts(now_ms)
        tag = Tag(category, responder_id, ts)
        self.tags[instance.instance_id] = tag
        self._emit(
            ts,
            telemetry.TAG_ASSIGNED,
            responder_id,
            instance_id,
            {"category": category.value},
        )
        return tag

    # -- facilitator cross-check ---------------------------------------------------

    def facilitator_submit(
        self,
        responder_id: str,
        now_ms: int,
        instance_id: str,
        channel: Channel,
        value,
    ) -> CrossCheckResult:
        self._require_facilitator(responder_id)
        self._require_phase(Phase.RUNNING)
        self._advance(now_ms)
        self._require_phase(Phase.RUNNING)
        if self.scenario.mode is not Mode.ACTOR:
            raise ProtocolError("facilitator values apply to actor sessions only")
        instance = self._instance(instance_id)
        case = self._case(instance)
        key = (instance_id, channel.value)
        if key not in self.pending_prompts:
            raise ProtocolError(
                f"no pending prompt for {instance_id!r}/{channel.value}"
            )
        if channel is Channel.BP:
            if (
                not isinstance(value, list)
                or len(value) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
            ):
                raise ProtocolError("bp value must be [sys, dia] integers")
            truth: object = [case.vitals.bp_sys_mmhg, case.vitals.bp_dia_mmhg]
        else:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ProtocolError(f"{channel.value} value must be an integer")
            truth = (
                case.vitals.hr_bpm if channel is Channel.HEARTBEAT else case.vitals.rr_bpm
            )
        ts = self._ts(now_ms)
        self._emit(
            ts,
            telemetry.FACILITATOR_VALUE,
            responder_id,
            instance_id,
            {"channel": channel.value, "value": value},
        )
        matches = value == truth
        if not matches:
            self._emit(
                ts,
                telemetry.CROSS_CHECK_MISMATCH,
                responder_id,
                instance_id,
                {"channel": channel.value, "submitted": value, "truth": truth},
            )
        self.overrides[key] = value
        del self.pending_prompts[key]
        return CrossCheckResult(matches, truth)

    # -- author mode -------------------------------------------------------------------

    def toggle_author_mode(self, responder_id: str) -> Phase:
        self._require_facilitator(responder_id)
        if self.phase is Phase.RUNNING:
            raise PhaseError("author mode is unavailable while the session runs")
        self._require_phase(Phase.LOBBY, Phase.AUTHOR_MODE)
        self.phase = Phase.AUTHOR_MODE if self.phase is Phase.LOBBY else Phase.LOBBY
        self._emit(0, telemetry.AUTHOR_TOGGLED, responder_id, None, {})
        return self.phase

    def place_patient(self, responder_id: str, instance_id: str, pose: Pose) -> Pose:
        self._require_facilitator(responder_id)
        self._require_phase(Phase.AUTHOR_MODE)
        self.scenario = _place_patient(self.scenario, instance_id, pose)
        self._emit(
            0,
            telemetry.PATIENT_PLACED,
            responder_id,
            instance_id,
            {"pose": _pose_payload(pose)},
        )
        return self.scenario.instance(instance_id).pose

    def set_visibility(self, responder_id: str, instance_id: str, visible: bool) -> bool:
        self._require_facilitator(responder_id)
        self._require_phase(Phase.AUTHOR_MODE)
        self.scenario = _set_visibility(self.scenario, instance_id, visible)
        self._emit(
            0,
            telemetry.VISIBILITY_SET,
            responder_id,
            instance_id,
            {"visible": visible},
        )
        return visible

    # -- parameter tweaks ---------------------------------------------------------------

    def param_tweak(self, responder_id: str, now_ms: int, key: str, value) -> None:
        self._require_facilitator(responder_id)
        if self.phase is Phase.COMPLETE:
            raise PhaseError("session is complete")
        if key not in TWEAKABLE_KEYS:
            raise ProtocolError(
                f"unknown parameter {key!r}; tweakable: {', '.join(TWEAKABLE_KEYS)}"
            )
        if self.phase is Phase.RUNNING:
            self._advance(now_ms)
            if self.phase is not Phase.RUNNING:
                raise PhaseError("session is complete")
        if key == "time_limit_s":
            if self.phase is not Phase.LOBBY:
                raise PhaseError("time_limit_s can only change in the lobby")
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ProtocolError("time_limit_s must be a positive integer")
            self.config.time_limit_s = value
        elif key == "bp_dwell_ms":
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ProtocolError("bp_dwell_ms must be a non-negative integer")
            self.config.bp_dwell_ms = value
        elif key == "query_range_m":
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                raise ProtocolError("query_range_m must be a positive number")
            self.config.query_range_m = float(value)
        else:
            kind = ZoneKind(key.split(".", 1)[1])
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                raise ProtocolError(f"{key} must be a positive number")
            self.config.zone_radii[kind] = float(value)
        ts = self.clock_ms if self.phase is Phase.RUNNING else 0
        self._emit(ts, telemetry.PARAM_TWEAK, responder_id, None, {"key": key, "value": value})

    # -- snapshot -------------------------------------------------------------------------

    def snapshot(self) -> dict:
        from .scenario import scenario_to_dict

        return {
            "session_id": self.session_id,
            "phase": self.phase.value,
            "mode": self.scenario.mode.value,
            "clock_ms": self.clock_ms,
            "time_limit_s": self.config.time_limit_s,
            "participants": [
                {"responder_id": rid, "role": role.value}
                for rid, role in self.participants.items()
            ],
            "tags": {
                instance_id: {
                    "category": tag.category.value,
                    "responder_id": tag.responder_id,
                    "ts_ms": tag.ts_ms,
                }
                for instance_id, tag in self.tags.items()
            },
            "pending_prompts": [
                {"instance_id": instance_id, "channel": channel}
                for instance_id, channel in sorted(self.pending_prompts)
            ],
            "config": self.config.to_dict(),
            "scenario": scenario_to_dict(self.scenario),
            "last_seq": self.log.next_seq - 1,
        }


def _pose_payload(pose: Pose) -> dict:
    return {
        "x": f"{pose.x:.3f}",
        "y": f"{pose.y:.3f}",
        "z": f"{pose.z:.3f}",
        "yaw_deg": f"{pose.yaw_deg:.3f}",
    }
