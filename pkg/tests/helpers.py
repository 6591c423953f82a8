"""Shared builders for session-level tests: in-memory logs and scripted runs."""
from __future__ import annotations

from mci_sim import telemetry as tm
from mci_sim.model import TriageCategory, MasterCaseList, default_case_list
from mci_sim.scenario import Scenario, generate_actor_scenario, generate_virtual_scenario
from mci_sim.session import (
    Channel,
    Query,
    Role,
    Sensor,
    Session,
    SessionConfig,
    ZONE_BY_ID,
    zone_world_center,
)
from mci_sim.scenario import Pose


def make_session(
    mode: str = "virtual",
    seed: int = 42,
    session_id: str = "s-test",
    case_list: MasterCaseList | None = None,
    scenario: Scenario | None = None,
    config: SessionConfig | None = None,
) -> tuple[Session, tm.MemorySink, Scenario, MasterCaseList]:
    cl = case_list or default_case_list()
    if scenario is None:
        scenario = (
            generate_virtual_scenario(cl, seed)
            if mode == "virtual"
            else generate_actor_scenario(cl, seed)
        )
    sink = tm.MemorySink()
    log = tm.EventLog(tm.make_header(session_id, scenario, cl.version), sink)
    session = Session(session_id, scenario, cl, log, config=config)
    return session, sink, scenario, cl


def started_virtual(seed: int = 42, **kwargs):
    """Virtual session with one trainee t1 and one facilitator f1, running."""
    session, sink, scenario, cl = make_session("virtual", seed, **kwargs)
    session.add_participant("t1", Role.TRAINEE)
    session.add_participant("f1", Role.FACILITATOR)
    session.start(0)
    return session, sink, scenario, cl


def started_actor(seed: int = 7, **kwargs):
    """Actor session with trainees t1, t2 and facilitator f1, running."""
    session, sink, scenario, cl = make_session("actor", seed, **kwargs)
    session.add_participant("t1", Role.TRAINEE)
    session.add_participant("t2", Role.TRAINEE)
    session.add_participant("f1", Role.FACILITATOR)
    session.start(0)
    return session, sink, scenario, cl


def hand_at_zone(session, scenario, cl, responder: str, now: int, instance_id: str, zone_id: str):
    """Sends a hand sample exactly at a zone center with the matching sensor."""
    instance = scenario.instance(instance_id)
    case = cl.by_id(instance.case_id)
    zone = ZONE_BY_ID[zone_id]
    sensor = {
        "bicep": Sensor.PALM,
        "wrist": Sensor.TWO_FINGERS,
        "chest": Sensor.HEAD,
        "head_proximity": Sensor.HEAD,
    }[zone.kind.value]
    center = zone_world_center(instance, case, zone)
    return session.hand_sample(responder, now, sensor, Pose(*center))


def write_virtual_run(tmp_path, name="run.jsonl"):
    """Scripted single-trainee run exercising every input class, to a file.
    Seed 42: p1=c11 black, p2=c05 grey, p3=c06 red, p4=c07 yellow, p5=c15 green."""
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    path = tmp_path / name
    log = tm.open_log(path, tm.make_header("s-replay", scenario, cl.version))
    sess = Session("s-replay", scenario, cl, log)
    sess.add_participant("t1", Role.TRAINEE)
    sess.add_participant("f1", Role.FACILITATOR)
    sess.start(0)
    sess.gaze_sample("t1", 400, Pose(1.0, 1.7, 1.0), (0.0, -0.8, 0.6))
    hand_at_zone(sess, scenario, cl, "t1", 500, "p4", "wrist_left")
    sess.begin_hold("t1", 1_000, "p4", "wrist_left")    # hr 80: tick every 750 ms
    sess.tick(4_000)
    sess.end_hold("t1", 10_000, "p4", "wrist_left")
    sess.begin_hold("t1", 11_000, "p4", "bicep_left")   # readout at 14_000
    sess.tick(14_500)
    sess.end_hold("t1", 15_000, "p4", "bicep_left")
    sess.cognitive_query("t1", 16_000, "p4", Query.CAN_YOU_WAVE)
    sess.param_tweak("f1", 16_500, "query_range_m", 3.0)
    categories = [TriageCategory(c) for c in ("black", "grey", "red", "yellow", "green")]
    for instance_id, category in zip(("p1", "p2", "p3", "p4", "p5"), categories):
        sess.assign_tag("t1", 17_000 + 1_000 * int(instance_id[1]), instance_id, category)
    sess.tick(600_001)
    log._sink.close()
    return path, scenario, cl


def write_actor_run(tmp_path, name="actor.jsonl"):
    """Author-mode edits, a prompt round trip, then a short two-trainee run."""
    cl = default_case_list()
    scenario = generate_actor_scenario(cl, 7)
    path = tmp_path / name
    log = tm.open_log(path, tm.make_header("s-actor", scenario, cl.version))
    sess = Session("s-actor", scenario, cl, log)
    sess.add_participant("f1", Role.FACILITATOR)
    sess.toggle_author_mode("f1")
    sess.place_patient("f1", "p1", Pose(2.0, 0.0, 2.0, 90.0))
    sess.set_visibility("f1", "p1", True)
    sess.toggle_author_mode("f1")
    sess.add_participant("t1", Role.TRAINEE)
    sess.add_participant("t2", Role.TRAINEE)
    base = 5_000_000  # nonzero epoch
    sess.start(base)
    sess.begin_hold("t1", base + 1_000, "p1", "wrist_left")
    truth = cl.by_id(sess.scenario.instance("p1").case_id).vitals.hr_bpm
    sess.facilitator_submit("f1", base + 2_000, "p1", Channel.HEARTBEAT, truth + 5)
    sess.assign_tag("t1", base + 3_000, "p1", TriageCategory.RED)
    sess.assign_tag("t2", base + 4_000, "p2", TriageCategory.YELLOW)
    sess.tick(base + 600_001)
    log._sink.close()
    return path, scenario, cl


def logged_events(sink: tm.MemorySink) -> list[tm.SessionEvent]:
    # line 0 is the log header
    return [tm.event_from_line(line, i) for i, line in enumerate(sink.lines[1:], start=1)]


def events_of_kind(sink: tm.MemorySink, kind: str) -> list[tm.SessionEvent]:
    return [event for event in logged_events(sink) if event.kind == kind]
