"""Regenerates the committed fixtures under tests/fixtures/.

Each fixture is a deterministic function of the shipped case list, so this
script doubles as the provenance record: if an engine change is intentional,
rerun it and commit the diff; if the diff is unintentional, that is a
regression caught by the lockstep tests.

Usage: python scripts/make_fixtures.py [outdir]
"""
from __future__ import annotations

import sys
from pathlib import Path

from mci_sim import telemetry as tm
from mci_sim.model import MasterCaseList, TriageCategory, default_case_list
from mci_sim.scenario import (
    Pose,
    Scenario,
    generate_actor_scenario,
    generate_virtual_scenario,
    save_scenario,
)
from mci_sim.session import (
    Channel,
    Query,
    Role,
    Sensor,
    Session,
    ZONE_BY_ID,
    zone_world_center,
)

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

SENSOR_FOR_KIND = {
    "bicep": Sensor.PALM,
    "wrist": Sensor.TWO_FINGERS,
    "chest": Sensor.HEAD,
    "head_proximity": Sensor.HEAD,
}


def _hand_at(sess: Session, responder: str, now: int, instance_id: str, zone_id: str):
    instance = sess.scenario.instance(instance_id)
    case = sess.case_list.by_id(instance.case_id)
    zone = ZONE_BY_ID[zone_id]
    center = zone_world_center(instance, case, zone)
    sess.hand_sample(responder, now, SENSOR_FOR_KIND[zone.kind.value], Pose(*center))


def _session_to_file(path: Path, session_id: str, scenario: Scenario, cl: MasterCaseList):
    log = tm.open_log(path, tm.make_header(session_id, scenario, cl.version))
    return Session(session_id, scenario, cl, log), log


def build_virtual_log(path: Path, tag_overrides: dict[str, TriageCategory] | None = None):
    """Single-trainee run: full assessment sweep then a tag, per patient.

    Patient p_i is worked in the window starting at (i-1) * 100 s:
    wrist hold 5-20 s, chest hold 21-31 s, bicep hold 32-36 s (readout
    at 35 s), both voice queries, tag at 40 s. Tags default to ground
    truth; tag_overrides remaps chosen instances.
    """
    cl = default_case_list()
    scenario = generate_virtual_scenario(cl, 42)
    sess, log = _session_to_file(path, "s-virtual-42", scenario, cl)
    sess.add_participant("t1", Role.TRAINEE)
    sess.add_participant("f1", Role.FACILITATOR)
    sess.start(0)
    overrides = tag_overrides or {}
    for i, instance in enumerate(scenario.instances):
        base = i * 100_000
        iid = instance.instance_id
        _hand_at(sess, "t1", base + 4_000, iid, "wrist_left")
        sess.begin_hold("t1", base + 5_000, iid, "wrist_left")
        sess.end_hold("t1", base + 20_000, iid, "wrist_left")
        _hand_at(sess, "t1", base + 20_500, iid, "chest")
        sess.begin_hold("t1", base + 21_000, iid, "chest")
        sess.end_hold("t1", base + 31_000, iid, "chest")
        _hand_at(sess, "t1", base + 31_500, iid, "bicep_left")
        sess.begin_hold("t1", base + 32_000, iid, "bicep_left")
        sess.end_hold("t1", base + 36_000, iid, "bicep_left")
        sess.cognitive_query("t1", base + 37_000, iid, Query.CAN_YOU_WAVE)
        sess.cognitive_query("t1", base + 38_000, iid, Query.SHOW_ME_WHERE_IT_HURTS)
        category = overrides.get(iid, cl.by_id(instance.case_id).ground_truth)
        sess.assign_tag("t1", base + 40_000, iid, category)
    sess.tick(600_001)
    log._sink.close()
    return scenario, cl


def build_actor_team_log(path: Path):
    """Two-trainee team run over all twenty cases.

    Mistakes are planted for the scoring fixtures: p2 (yellow) tagged red
    and p9 (grey) tagged red are overtriage, p5 (grey) tagged black is
    undertriage, p18..p20 stay untagged. One wrong facilitator heart-rate
    entry produces exactly one cross-check mismatch.
    """
    cl = default_case_list()
    scenario = generate_actor_scenario(cl, 7)
    sess, log = _session_to_file(path, "s-actor-7", scenario, cl)
    sess.add_participant("t1", Role.TRAINEE)
    sess.add_participant("t2", Role.TRAINEE)
    sess.add_participant("f1", Role.FACILITATOR)
    sess.start(0)

    sess.begin_hold("t1", 10_000, "p1", "wrist_left")
    truth_hr = cl.by_id(scenario.instance("p1").case_id).vitals.hr_bpm
    sess.facilitator_submit("f1", 15_000, "p1", Channel.HEARTBEAT, truth_hr + 8)
    sess.end_hold("t1", 16_000, "p1", "wrist_left")

    sess.begin_hold("t2", 17_000, "p2", "bicep_left")
    vitals = cl.by_id(scenario.instance("p2").case_id).vitals
    sess.facilitator_submit(
        "f1", 20_000, "p2", Channel.BP, [vitals.bp_sys_mmhg, vitals.bp_dia_mmhg]
    )
    sess.end_hold("t2", 21_000, "p2", "bicep_left")

    planted = {
        "p2": TriageCategory.RED,    # yellow truth: overtriage
        "p5": TriageCategory.BLACK,  # grey truth: undertriage
        "p9": TriageCategory.RED,    # grey truth: overtriage
    }
    for k in range(1, 18):  # p18..p20 stay untagged
        iid = f"p{k}"
        truth = cl.by_id(scenario.instance(iid).case_id).ground_truth
        trainee = "t1" if k % 2 == 1 else "t2"
        sess.assign_tag(trainee, 25_000 * k, iid, planted.get(iid, truth))
    sess.tick(600_001)
    log._sink.close()
    return scenario, cl


def write_report(log_path: Path, out_path: Path, scenario, cl):
    record = tm.replay(log_path, scenario, cl)
    report = tm.score(record, scenario, cl)
    out_path.write_text(report.to_json(), encoding="utf-8")
    return report


def write_all(outdir: Path = FIXTURES_DIR) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    cl = default_case_list()
    written = []

    virtual = generate_virtual_scenario(cl, 42)
    actor = generate_actor_scenario(cl, 7)
    save_scenario(virtual, outdir / "scenario-virtual-42.json")
    save_scenario(actor, outdir / "scenario-actor-7.json")
    written += [outdir / "scenario-virtual-42.json", outdir / "scenario-actor-7.json"]

    log = outdir / "log-virtual-42-all-correct.jsonl"
    scenario, cl = build_virtual_log(log)
    write_report(log, outdir / "report-virtual-42-all-correct.json", scenario, cl)
    written += [log, outdir / "report-virtual-42-all-correct.json"]

    log = outdir / "log-virtual-42-4of5.jsonl"
    scenario, cl = build_virtual_log(log, {"p4": TriageCategory.RED})
    write_report(log, outdir / "report-virtual-42-4of5.json", scenario, cl)
    written += [log, outdir / "report-virtual-42-4of5.json"]

    log = outdir / "log-actor-7-team.jsonl"
    scenario, cl = build_actor_team_log(log)
    write_report(log, outdir / "report-actor-7-team.json", scenario, cl)
    written += [log, outdir / "report-actor-7-team.json"]
    return written


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURES_DIR
    for path in write_all(target):
        print(path)
